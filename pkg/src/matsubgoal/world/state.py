from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..catalog import AFFORDANCES, CLASS_INDEX, CLASSES, NUM_CLASSES, OPENABLE, PICKABLE, RECEPTACLE, TOGGLABLE
from ..structures import Pose, StateRepr


@dataclass(frozen=True)
class WorldObject:
    """One object instance.

    Furniture has a fixed ``cell`` and no parent. Movable objects have no cell
    of their own: they sit inside ``parent`` (a receptacle id), or are held
    when ``parent`` is None.
    """

    id: int
    cls: str
    cell: tuple[int, int] | None = None
    parent: int | None = None
    states: frozenset[str] = frozenset()

    @property
    def is_furniture(self) -> bool:
        return self.cell is not None

    def with_states(self, *add: str, remove: tuple[str, ...] = ()) -> WorldObject:
        return replace(self, states=(self.states | set(add)) - set(remove))


@dataclass
class WorldState:
    shape: tuple[int, int]
    objects: dict[int, WorldObject]
    held: int | None
    pose: Pose
    scene_id: str = ""
    _furniture_cells: frozenset = field(default=frozenset(), repr=False, compare=False)

    def __post_init__(self):
        self._furniture_cells = frozenset(o.cell for o in self.objects.values() if o.is_furniture)

    def copy(self) -> WorldState:
        return WorldState(self.shape, dict(self.objects), self.held, self.pose, self.scene_id)

    # -- geometry ---------------------------------------------------------

    def is_wall(self, cell: tuple[int, int]) -> bool:
        r, c = cell
        h, w = self.shape
        return r <= 0 or c <= 0 or r >= h - 1 or c >= w - 1

    def is_ground(self, cell: tuple[int, int]) -> bool:
        return not self.is_wall(cell) and cell not in self._furniture_cells

    def root(self, oid: int) -> WorldObject | None:
        """Outermost container of ``oid``; None when the chain ends in the robot's hand."""
        obj = self.objects[oid]
        while not obj.is_furniture:
            if obj.parent is None:
                return None
            obj = self.objects[obj.parent]
        return obj

    def cell_of(self, oid: int) -> tuple[int, int] | None:
        root = self.root(oid)
        return None if root is None else root.cell

    def enclosed(self, oid: int) -> bool:
        """True if some container above ``oid`` is a closed openable."""
        obj = self.objects[oid]
        while obj.parent is not None:
            obj = self.objects[obj.parent]
            if obj.cls in OPENABLE and "open" not in obj.states:
                return True
        return False

    def children(self, oid: int) -> list[int]:
        return sorted(o.id for o in self.objects.values() if o.parent == oid)

    def descendants(self, oid: int) -> list[int]:
        out, frontier = [], [oid]
        while frontier:
            kids = [k for p in frontier for k in self.children(p)]
            out.extend(kids)
            frontier = kids
        return sorted(out)

    def objects_at(self, cell: tuple[int, int]) -> list[WorldObject]:
        return [o for o in sorted(self.objects.values(), key=lambda o: o.id) if self.cell_of(o.id) == cell]

    def of_class(self, cls: str) -> list[WorldObject]:
        return [o for o in sorted(self.objects.values(), key=lambda o: o.id) if o.cls == cls]

    # -- observation --------------------------------------------------------

    def to_state_repr(self) -> StateRepr:
        h, w = self.shape
        voxels = np.zeros((h, w, NUM_CLASSES), dtype=np.uint8)
        aff = np.zeros((h, w, len(AFFORDANCES)), dtype=np.uint8)
        a = {name: i for i, name in enumerate(AFFORDANCES)}
        for o in self.objects.values():
            cell = self.cell_of(o.id)
            if cell is None:
                continue
            voxels[cell][CLASS_INDEX[o.cls]] = 1
            if o.cls in PICKABLE:
                aff[cell][a["pickable"]] = 1
            if o.cls in RECEPTACLE:
                aff[cell][a["receptacle"]] = 1
            if o.cls in TOGGLABLE:
                aff[cell][a["togglable"]] = 1
            if o.cls in OPENABLE:
                aff[cell][a["openable"]] = 1
        for r in range(h):
            for c in range(w):
                aff[r, c, a["ground" if self.is_ground((r, c)) else "obstacle"]] = 1
        aff[..., a["observed"]] = 1
        held = np.zeros(NUM_CLASSES, dtype=np.uint8)
        held[CLASS_INDEX[self.objects[self.held].cls] if self.held is not None else 0] = 1
        return StateRepr(voxels=voxels, held=held, pose=self.pose, affordances=aff)

    # -- serialisation ------------------------------------------------------------

    def to_json(self) -> dict:
        objs = []
        for o in sorted(self.objects.values(), key=lambda o: o.id):
            objs.append([o.id, o.cls, list(o.cell) if o.cell else None, o.parent, sorted(o.states)])
        return {
            "scene_id": self.scene_id,
            "shape": list(self.shape),
            "held": self.held,
            "pose": [self.pose.row, self.pose.col, self.pose.yaw],
            "objects": objs,
        }

    @classmethod
    def from_json(cls, rec: dict) -> WorldState:
        objects = {}
        for oid, ocls, cell, parent, states in rec["objects"]:
            if ocls not in CLASSES:
                raise ValueError(f"unknown object class {ocls!r}")
            objects[oid] = WorldObject(oid, ocls, tuple(cell) if cell else None, parent, frozenset(states))
        r, c, yaw = rec["pose"]
        return cls(tuple(rec["shape"]), objects, rec["held"], Pose(r, c, yaw), rec.get("scene_id", ""))
