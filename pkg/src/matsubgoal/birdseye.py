"""Top-down map assembly and the world-to-egocentric transform."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .catalog import AFFORDANCES
from .structures import Pose, StateRepr


def planar_footprint(mask: np.ndarray) -> np.ndarray:
    """Max-pool a mask over its non-planar axes; planar masks pass through."""
    mask = np.asarray(mask)
    return mask.max(axis=tuple(range(2, mask.ndim))) if mask.ndim > 2 else mask


def build_birds_eye(state: StateRepr, past_masks: Sequence[np.ndarray]) -> np.ndarray:
    """Stack affordances, the summed past-argument footprints and the class map.

    Returns an (H, W, 7 + 1 + K) float array.
    """
    h, w = state.grid_shape
    history = np.zeros((h, w))
    for m in past_masks:
        fp = planar_footprint(m)
        if fp.shape != (h, w):
            raise ValueError(f"mask of shape {fp.shape} does not match the {h}x{w} grid")
        history += fp
    if state.affordances.shape != (h, w, len(AFFORDANCES)):
        raise ValueError(f"affordance grid has shape {state.affordances.shape}")
    # voxels are stored with the vertical axis already pooled away
    classes = state.voxels.astype(np.float64)
    return np.concatenate([state.affordances.astype(np.float64), history[..., None], classes], axis=-1)


def _rotate(dr: np.ndarray, dc: np.ndarray, yaw: int) -> tuple[np.ndarray, np.ndarray]:
    # quarter turn that brings the heading onto "up": (dr, dc) -> (-dc, dr)
    for _ in range(yaw // 90):
        dr, dc = -dc, dr
    return dr, dc


def egocentric_index(pose: Pose, shape: tuple[int, int], out_size: int) -> np.ndarray:
    """Flat egocentric cell index for every world cell (row-major), -1 if cut off."""
    h, w = shape
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dr, dc = _rotate(rows - pose.row, cols - pose.col, pose.yaw)
    centre = out_size // 2
    er, ec = dr + centre, dc + centre
    inside = (er >= 0) & (er < out_size) & (ec >= 0) & (ec < out_size)
    return np.where(inside, er * out_size + ec, -1).reshape(-1)


def transform_to_egocentric(grid: np.ndarray, pose: Pose, out_size: int | None = None) -> np.ndarray:
    """Re-express an (H, W, C) top-down grid in the robot's frame.

    The robot lands on the centre cell facing "up" (decreasing row). Cells with
    no world counterpart are zero. ``out_size`` defaults to H (square grids).
    """
    h, w = grid.shape[:2]
    if not (0 <= pose.row < h and 0 <= pose.col < w):
        raise ValueError(f"pose {pose} is off the {h}x{w} grid")
    out_size = h if out_size is None else out_size
    idx = egocentric_index(pose, (h, w), out_size)
    flat = grid.reshape(h * w, *grid.shape[2:])
    out = np.zeros((out_size * out_size, *grid.shape[2:]), dtype=grid.dtype)
    keep = idx >= 0
    out[idx[keep]] = flat[keep]
    return out.reshape(out_size, out_size, *grid.shape[2:])
