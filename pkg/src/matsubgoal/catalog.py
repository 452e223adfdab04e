"""Closed vocabularies shared by the world generator and the model."""

from __future__ import annotations

ACTS: tuple[str, ...] = ("PickUp", "Put", "Open", "Close", "ToggleOn", "ToggleOff", "Slice", "Stop")
ACT_INDEX = {name: i for i, name in enumerate(ACTS)}
STOP = ACT_INDEX["Stop"]

# Index 0 doubles as "nothing held" and the argument of Stop.
CLASSES: tuple[str, ...] = (
    "None",
    "Apple",
    "Potato",
    "Tomato",
    "Bread",
    "Lettuce",
    "Cup",
    "Mug",
    "Pillow",
    "Book",
    "Knife",
    "Plate",
    "Sink",
    "Faucet",
    "Microwave",
    "Fridge",
    "Lamp",
    "CounterTop",
    "Table",
    "Sofa",
    "Cabinet",
)
CLASS_INDEX = {name: i for i, name in enumerate(CLASSES)}
NUM_CLASSES = len(CLASSES)

AFFORDANCES: tuple[str, ...] = ("pickable", "receptacle", "togglable", "openable", "ground", "obstacle", "observed")

PICKABLE = frozenset({"Apple", "Potato", "Tomato", "Bread", "Lettuce", "Cup", "Mug", "Pillow", "Book", "Knife", "Plate"})
RECEPTACLE = frozenset({"Plate", "Sink", "Microwave", "Fridge", "CounterTop", "Table", "Sofa", "Cabinet"})
TOGGLABLE = frozenset({"Faucet", "Microwave", "Lamp"})
OPENABLE = frozenset({"Microwave", "Fridge", "Cabinet"})
SLICEABLE = frozenset({"Apple", "Potato", "Tomato", "Bread", "Lettuce"})
FURNITURE: tuple[str, ...] = ("CounterTop", "CounterTop", "Table", "Sink", "Microwave", "Fridge", "Lamp", "Sofa", "Cabinet")

FOOD = ("Apple", "Potato", "Tomato", "Bread", "Lettuce")

# Where each pickable may end up as the target of a placement task.
SUITABLE_RECEPTACLES: dict[str, tuple[str, ...]] = {
    **{f: ("CounterTop", "Table", "Fridge", "Microwave", "Sink", "Cabinet") for f in FOOD},
    "Cup": ("CounterTop", "Table", "Sink", "Microwave", "Fridge", "Cabinet"),
    "Mug": ("CounterTop", "Table", "Sink", "Microwave", "Fridge", "Cabinet"),
    "Pillow": ("Sofa", "Table"),
    "Book": ("Sofa", "Table", "CounterTop", "Cabinet"),
    "Knife": ("CounterTop", "Table", "Sink", "Cabinet"),
    "Plate": ("CounterTop", "Table", "Sink", "Cabinet", "Fridge"),
}

# Where objects may sit when a scene is generated (never inside closed furniture).
INITIAL_RECEPTACLES: dict[str, tuple[str, ...]] = {
    **{f: ("CounterTop", "Table", "Sink") for f in FOOD},
    "Cup": ("CounterTop", "Table", "Sink"),
    "Mug": ("CounterTop", "Table", "Sink"),
    "Pillow": ("Sofa", "Table"),
    "Book": ("Sofa", "Table", "CounterTop"),
    "Knife": ("CounterTop", "Table"),
    "Plate": ("CounterTop", "Table"),
}

DUPLICABLE = ("Apple", "Potato", "Tomato", "Cup", "Mug", "Book", "Pillow")

WORDS = {
    "Apple": "apple",
    "Potato": "potato",
    "Tomato": "tomato",
    "Bread": "bread",
    "Lettuce": "lettuce",
    "Cup": "cup",
    "Mug": "mug",
    "Pillow": "pillow",
    "Book": "book",
    "Knife": "knife",
    "Plate": "plate",
    "Sink": "sink",
    "Faucet": "faucet",
    "Microwave": "microwave",
    "Fridge": "fridge",
    "Lamp": "lamp",
    "CounterTop": "counter",
    "Table": "table",
    "Sofa": "sofa",
    "Cabinet": "cabinet",
}
PLURALS = {
    "Apple": "apples",
    "Potato": "potatoes",
    "Tomato": "tomatoes",
    "Cup": "cups",
    "Mug": "mugs",
    "Book": "books",
    "Pillow": "pillows",
}

TASK_TYPES: tuple[str, ...] = (
    "PickAndPlace",
    "StackAndPlace",
    "PickTwoAndPlace",
    "CleanAndPlace",
    "HeatAndPlace",
    "CoolAndPlace",
    "ExamineInLight",
)
