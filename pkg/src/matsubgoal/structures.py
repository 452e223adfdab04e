"""Records passed between the world, the model and the harness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .catalog import ACTS, CLASSES, NUM_CLASSES, STOP

YAWS = (0, 90, 180, 270)


@dataclass(frozen=True)
class Pose:
    """Robot cell (row, col) and heading; yaw 0 faces decreasing row ("north")."""

    row: int
    col: int
    yaw: int = 0
    pitch: int = 0

    def __post_init__(self):
        if self.yaw not in YAWS:
            raise ValueError(f"yaw must be one of {YAWS}, got {self.yaw}")


@dataclass(eq=False)
class Subgoal:
    act: int
    arg: int
    mask: np.ndarray  # (H, W) uint8, 1 on the argument instance's cell(s)

    def __post_init__(self):
        if not 0 <= self.act < len(ACTS):
            raise ValueError(f"unknown act index {self.act}")
        if not 0 <= self.arg < NUM_CLASSES:
            raise ValueError(f"unknown class index {self.arg}")
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        if self.mask.ndim != 2:
            raise ValueError("subgoal mask must be a planar grid")
        if self.act != STOP and not self.mask.any():
            raise ValueError(f"{ACTS[self.act]} subgoal needs a nonempty mask")

    @classmethod
    def at(cls, act: str, arg: str, cell: tuple[int, int] | None, shape: tuple[int, int]) -> Subgoal:
        mask = np.zeros(shape, dtype=np.uint8)
        if cell is not None:
            mask[cell] = 1
        return cls(ACTS.index(act), CLASSES.index(arg), mask)

    @classmethod
    def stop(cls, shape: tuple[int, int]) -> Subgoal:
        return cls(STOP, 0, np.zeros(shape, dtype=np.uint8))

    @property
    def cells(self) -> list[tuple[int, int]]:
        return [(int(r), int(c)) for r, c in zip(*np.nonzero(self.mask))]

    @property
    def cell_index(self) -> int | None:
        """Flat index of the first marked cell (row-major), None for an empty mask."""
        flat = np.flatnonzero(self.mask)
        return int(flat[0]) if flat.size else None

    def key(self) -> tuple[int, int, tuple[tuple[int, int], ...]]:
        return self.act, self.arg, tuple(self.cells)

    def __eq__(self, other) -> bool:
        return isinstance(other, Subgoal) and self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())

    def describe(self) -> str:
        if self.act == STOP:
            return "Stop"
        return f"{ACTS[self.act]} {CLASSES[self.arg]} @ {self.cells}"

    def to_json(self) -> list:
        return [ACTS[self.act], CLASSES[self.arg], [list(c) for c in self.cells]]

    @classmethod
    def from_json(cls, rec: list, shape: tuple[int, int]) -> Subgoal:
        act, arg, cells = rec
        mask = np.zeros(shape, dtype=np.uint8)
        for r, c in cells:
            mask[r, c] = 1
        return cls(ACTS.index(act), CLASSES.index(arg), mask)


@dataclass
class StateRepr:
    """What the high-level controller knows about the world at one step.

    ``voxels`` is (H, W, K) with one binary channel per object class (depth
    collapsed); ``held`` is a K one-hot with index 0 meaning empty-handed;
    ``affordances`` is the (H, W, 7) top-down affordance grid.
    """

    voxels: np.ndarray
    held: np.ndarray
    pose: Pose
    affordances: np.ndarray = field(repr=False)

    def __post_init__(self):
        h, w, k = self.voxels.shape
        if self.held.shape != (k,) or self.held.sum() != 1:
            raise ValueError("held must be a one-hot vector over the class channels")
        if not (0 <= self.pose.row < h and 0 <= self.pose.col < w):
            raise ValueError(f"pose {self.pose} is off the {h}x{w} grid")

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.voxels.shape[:2]


@dataclass
class Instruction:
    tokens: list[int]
    text: str = ""

    def __post_init__(self):
        if len(self.tokens) < 2:
            raise ValueError("instruction needs CLS plus at least one token")
