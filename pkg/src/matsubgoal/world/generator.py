"""Seeded household scenes and scripted expert episodes."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from ..catalog import (
    CLASSES,
    DUPLICABLE,
    FOOD,
    FURNITURE,
    INITIAL_RECEPTACLES,
    OPENABLE,
    PICKABLE,
    PLURALS,
    SLICEABLE,
    SUITABLE_RECEPTACLES,
    TASK_TYPES,
    WORDS,
)
from ..structures import Instruction, Pose, Subgoal
from .executor import execute_subgoal, goals_satisfied
from .state import WorldObject, WorldState
from .vocab import Vocab

DEFAULT_GRID = (11, 11)


class UnsatisfiableTask(ValueError):
    """The requested task cannot be posed in the given scene."""


@dataclass
class Scene:
    scene_id: str
    seed: int
    initial: WorldState

    @property
    def shape(self) -> tuple[int, int]:
        return self.initial.shape

    def to_json(self) -> dict:
        return {"scene_id": self.scene_id, "seed": self.seed, "initial": self.initial.to_json()}

    @classmethod
    def from_json(cls, rec: dict) -> Scene:
        return cls(rec["scene_id"], rec["seed"], WorldState.from_json(rec["initial"]))


@dataclass
class Episode:
    episode_id: str
    scene_id: str
    task_type: str
    instruction: Instruction
    expert_subgoals: list[Subgoal]
    snapshots: list[WorldState]  # state before each expert subgoal
    goals: list[dict]
    params: dict = field(default_factory=dict)

    @property
    def initial(self) -> WorldState:
        return self.snapshots[0]

    def final_state(self) -> WorldState:
        # the last expert subgoal is Stop, which changes nothing
        return self.snapshots[-1]


def check_scene(state: WorldState) -> None:
    """Raise if the scene violates a structural invariant."""
    h, w = state.shape
    if not state.is_ground((state.pose.row, state.pose.col)):
        raise AssertionError("robot does not start on a free cell")
    for o in state.objects.values():
        if o.is_furniture:
            r, c = o.cell
            if not (0 < r < h - 1 and 0 < c < w - 1):
                raise AssertionError(f"{o.cls} placed on a wall cell")
        elif o.parent is None or o.parent not in state.objects:
            raise AssertionError(f"object {o.id} has no valid container")
    for o in state.objects.values():
        seen = {o.id}
        cur = o
        while cur.parent is not None:
            if cur.parent in seen:
                raise AssertionError("containment cycle")
            seen.add(cur.parent)
            cur = state.objects[cur.parent]


def generate_scene(seed: int, shape: tuple[int, int] = DEFAULT_GRID) -> Scene:
    rng = random.Random(f"scene-{seed}")
    h, w = shape
    interior = [(r, c) for r in range(1, h - 1) for c in range(1, w - 1)]
    objects: dict[int, WorldObject] = {}
    taken: list[tuple[int, int]] = []
    next_id = 0
    for cls in FURNITURE:
        free = [p for p in interior if all(max(abs(p[0] - q[0]), abs(p[1] - q[1])) >= 2 for q in taken)]
        if not free:
            raise RuntimeError(f"grid {shape} too small for the furniture set")
        cell = rng.choice(free)
        taken.append(cell)
        objects[next_id] = WorldObject(next_id, cls, cell)
        next_id += 1
        if cls == "Sink":
            objects[next_id] = WorldObject(next_id, "Faucet", cell)
            next_id += 1
    by_class: dict[str, list[int]] = {}
    for o in objects.values():
        by_class.setdefault(o.cls, []).append(o.id)

    movables = sorted(PICKABLE, key=CLASSES.index)
    movables += rng.sample(DUPLICABLE, rng.randint(1, 3))
    for cls in movables:
        recep_cls = rng.choice(INITIAL_RECEPTACLES[cls])
        parent = rng.choice(by_class[recep_cls])
        objects[next_id] = WorldObject(next_id, cls, None, parent)
        next_id += 1

    probe = WorldState(shape, objects, None, Pose(0, 0, 0))
    ground = [p for p in interior if probe.is_ground(p)]
    start = rng.choice(ground)
    state = WorldState(shape, objects, None, Pose(start[0], start[1], rng.choice((0, 90, 180, 270))), f"scene{seed:04d}")
    check_scene(state)
    return Scene(state.scene_id, seed, state)


# -- instructions -------------------------------------------------------------------

TEMPLATES: dict[str, tuple[str, ...]] = {
    "PickAndPlace": (
        "put a {obj} in the {recep}",
        "place the {obj} on the {recep}",
        "move a {obj} to the {recep}",
    ),
    "StackAndPlace": (
        "put a {obj} on a plate and move it to the {recep}",
        "place the plate with a {obj} in the {recep}",
        "carry a {obj} on a plate to the {recep}",
    ),
    "PickTwoAndPlace": (
        "put two {objs} in the {recep}",
        "place both {objs} on the {recep}",
        "move two {objs} to the {recep}",
    ),
    "CleanAndPlace": (
        "put a clean {obj} in the {recep}",
        "rinse a {obj} and place it on the {recep}",
        "wash the {obj} then move it to the {recep}",
    ),
    "HeatAndPlace": (
        "put a hot {obj} in the {recep}",
        "warm up a {obj} and place it on the {recep}",
        "cook the {obj} then move it to the {recep}",
    ),
    "CoolAndPlace": (
        "put a cold {obj} in the {recep}",
        "chill a {obj} and place it on the {recep}",
        "cool the {obj} then move it to the {recep}",
    ),
    "ExamineInLight": (
        "examine a {obj} under the lamp",
        "look at the {obj} in the light",
        "hold a {obj} and turn on the lamp",
    ),
}


def render_instruction(task_type: str, obj: str, recep: str | None, sliced: bool, variant: int) -> str:
    word = ("sliced " if sliced else "") + WORDS[obj]
    words = ("sliced " if sliced else "") + PLURALS.get(obj, WORDS[obj])
    return TEMPLATES[task_type][variant].format(obj=word, objs=words, recep=WORDS.get(recep or "", ""))


# -- expert planning -------------------------------------------------------------


class _Planner:
    """Runs expert steps through the executor while recording snapshots."""

    def __init__(self, state: WorldState):
        self.state = state
        self.subgoals: list[Subgoal] = []
        self.snapshots: list[WorldState] = []

    def do(self, act: str, oid: int) -> None:
        obj = self.state.objects[oid]
        sg = Subgoal.at(act, obj.cls, self.state.cell_of(oid), self.state.shape)
        new, ok = execute_subgoal(self.state, sg)
        if not ok:
            raise UnsatisfiableTask(f"expert step {act} {obj.cls} failed")
        self.snapshots.append(self.state)
        self.subgoals.append(sg)
        self.state = new

    def place(self, recep: int) -> None:
        opens = self.state.objects[recep].cls in OPENABLE
        if opens:
            self.do("Open", recep)
        self.do("Put", recep)
        if opens:
            self.do("Close", recep)

    def stop(self) -> None:
        self.snapshots.append(self.state)
        self.subgoals.append(Subgoal.stop(self.state.shape))


def _already_in(state: WorldState, obj_cls: str, recep_cls: str) -> bool:
    return any(
        o.parent is not None and state.objects[o.parent].cls == recep_cls for o in state.of_class(obj_cls)
    )


def _choose_recep(rng: random.Random, state: WorldState, obj_cls: str, exclude: tuple[str, ...] = ()) -> str:
    options = [r for r in SUITABLE_RECEPTACLES[obj_cls] if r not in exclude and not _already_in(state, obj_cls, r)]
    if not options:
        raise UnsatisfiableTask(f"no free receptacle class for {obj_cls}")
    return rng.choice(options)


def generate_episode(
    scene: Scene, task_type: str, seed: int, vocab: Vocab | None = None, slice_prob: float = 0.1
) -> Episode:
    """Pose ``task_type`` in ``scene`` and solve it with the scripted expert.

    Raises :class:`UnsatisfiableTask` when the scene cannot host the task.
    """
    if task_type not in TASK_TYPES:
        raise ValueError(f"unknown task type {task_type!r}")
    vocab = vocab or Vocab.build()
    rng = random.Random(f"episode-{scene.scene_id}-{task_type}-{seed}")
    start = scene.initial
    plan = _Planner(start)
    first = lambda cls: start.of_class(cls)[0].id  # noqa: E731

    obj_pool = {
        "PickAndPlace": sorted(PICKABLE, key=CLASSES.index),
        "StackAndPlace": list(FOOD) + ["Knife"],
        "PickTwoAndPlace": [c for c in DUPLICABLE if len(start.of_class(c)) >= 2],
        "CleanAndPlace": ["Apple", "Potato", "Tomato", "Lettuce", "Cup", "Mug", "Plate", "Knife"],
        "HeatAndPlace": ["Apple", "Potato", "Tomato", "Bread", "Cup", "Mug"],
        "CoolAndPlace": ["Apple", "Potato", "Tomato", "Bread", "Lettuce", "Cup", "Mug"],
        "ExamineInLight": ["Book", "Cup", "Mug", "Pillow", "Plate"],
    }[task_type]
    if not obj_pool:
        raise UnsatisfiableTask(f"{scene.scene_id} has no duplicated object for {task_type}")
    obj_cls = rng.choice(obj_pool)
    sliced = (
        task_type in ("PickAndPlace", "StackAndPlace", "HeatAndPlace", "CoolAndPlace")
        and obj_cls in SLICEABLE
        and rng.random() < slice_prob
    )
    states = ["sliced"] if sliced else []
    instances = start.of_class(obj_cls)
    obj = rng.choice(instances).id
    # the executor resolves a cell to its lowest-id match, so the expert must track that one
    obj = next(o.id for o in start.objects_at(start.cell_of(obj)) if o.cls == obj_cls)
    recep_cls: str | None = None

    if sliced:
        plan.do("PickUp", first("Knife"))
        plan.do("Slice", obj)
        plan.place(first("CounterTop"))

    if task_type == "PickAndPlace":
        recep_cls = _choose_recep(rng, start, obj_cls)
        plan.do("PickUp", obj)
        plan.place(first(recep_cls))
        goals = [{"kind": "placed", "obj": obj_cls, "recep": recep_cls, "count": 1, "states": states}]
    elif task_type == "StackAndPlace":
        recep_cls = rng.choice(("CounterTop", "Table", "Cabinet", "Fridge"))
        plate = first("Plate")
        plan.do("PickUp", obj)
        plan.do("Put", plate)
        plan.do("PickUp", plate)
        plan.place(first(recep_cls))
        goals = [{"kind": "placed", "obj": obj_cls, "via": "Plate", "recep": recep_cls, "count": 1, "states": states}]
    elif task_type == "PickTwoAndPlace":
        openables = tuple(r for r in SUITABLE_RECEPTACLES[obj_cls] if r in OPENABLE)
        recep_cls = _choose_recep(rng, start, obj_cls, exclude=openables)
        target = first(recep_cls)
        for inst in sorted(instances, key=lambda o: o.id)[:2]:
            plan.do("PickUp", inst.id)
            plan.place(target)
        goals = [{"kind": "placed", "obj": obj_cls, "recep": recep_cls, "count": 2, "states": []}]
    elif task_type == "CleanAndPlace":
        recep_cls = _choose_recep(rng, start, obj_cls, exclude=("Sink",))
        plan.do("PickUp", obj)
        plan.do("Put", first("Sink"))
        plan.do("ToggleOn", first("Faucet"))
        plan.do("ToggleOff", first("Faucet"))
        plan.do("PickUp", obj)
        plan.place(first(recep_cls))
        goals = [{"kind": "placed", "obj": obj_cls, "recep": recep_cls, "count": 1, "states": ["clean"]}]
    elif task_type == "HeatAndPlace":
        recep_cls = _choose_recep(rng, start, obj_cls, exclude=("Microwave",))
        mw = first("Microwave")
        plan.do("PickUp", obj)
        plan.do("Open", mw)
        plan.do("Put", mw)
        plan.do("Close", mw)
        plan.do("ToggleOn", mw)
        plan.do("ToggleOff", mw)
        plan.do("Open", mw)
        plan.do("PickUp", obj)
        plan.do("Close", mw)
        plan.place(first(recep_cls))
        goals = [{"kind": "placed", "obj": obj_cls, "recep": recep_cls, "count": 1, "states": ["heated"] + states}]
    elif task_type == "CoolAndPlace":
        recep_cls = _choose_recep(rng, start, obj_cls, exclude=("Fridge",))
        fridge = first("Fridge")
        plan.do("PickUp", obj)
        plan.do("Open", fridge)
        plan.do("Put", fridge)
        plan.do("Close", fridge)
        plan.do("Open", fridge)
        plan.do("PickUp", obj)
        plan.do("Close", fridge)
        plan.place(first(recep_cls))
        goals = [{"kind": "placed", "obj": obj_cls, "recep": recep_cls, "count": 1, "states": ["cooled"] + states}]
    else:  # ExamineInLight
        plan.do("PickUp", obj)
        plan.do("ToggleOn", first("Lamp"))
        goals = [{"kind": "holding", "obj": obj_cls, "states": []}, {"kind": "toggled", "obj": "Lamp"}]
    plan.stop()

    if goals_satisfied(start, goals):
        raise UnsatisfiableTask("goal already holds in the initial state")
    if not goals_satisfied(plan.state, goals):
        raise AssertionError(f"expert plan for {task_type} does not reach its goal")

    variant = rng.randrange(len(TEMPLATES[task_type]))
    text = render_instruction(task_type, obj_cls, recep_cls, sliced, variant)
    return Episode(
        episode_id=f"{scene.scene_id}-{task_type}-{seed}",
        scene_id=scene.scene_id,
        task_type=task_type,
        instruction=Instruction(vocab.encode(text), text),
        expert_subgoals=plan.subgoals,
        snapshots=plan.snapshots,
        goals=goals,
        params={"obj": obj_cls, "recep": recep_cls, "sliced": sliced, "variant": variant},
    )
