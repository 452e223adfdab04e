"""Flat ``section.key = value`` run configuration.

Sections: ``mat``, ``train``, ``model``, ``data`` and ``grid``. Blank lines and
``#`` comments are ignored. Values are coerced to the type of the field they
set; tuples are comma separated and ``none`` clears an optional value.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .mat import MatConfig
from .model import ModelConfig
from .train import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    dir: str = "data"
    seed: int = 0
    num_scenes: int = 30
    unseen_scenes: int = 5
    slice_prob: float = 0.1
    train_limit: int | None = None  # use only the first N training episodes


@dataclass(frozen=True)
class GridConfig:
    conditions: tuple[str, ...] = ("full", "no_mat", "minus_instruction", "minus_subgoals", "minus_state")
    alphas: tuple[int, ...] = (3, 5, 7, 9, 11)
    seeds: tuple[int, ...] = (0, 1, 2)
    folds: tuple[str, ...] = ("valid_seen", "valid_unseen", "test_seen", "test_unseen")
    eval_limit: int | None = None  # episodes per fold
    workers: int = 1


@dataclass(frozen=True)
class RunConfig:
    mat: MatConfig = field(default_factory=MatConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: dict[str, Any] = field(default_factory=dict)  # ModelConfig overrides; vocab comes from the data
    data: DataConfig = field(default_factory=DataConfig)
    grid: GridConfig = field(default_factory=GridConfig)

    def train_config(self, **overrides) -> TrainConfig:
        return dataclasses.replace(self.train, mat=self.mat, **overrides)

    def model_config(self, vocab_size: int, seed: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, **{**self.model, "seed": seed})


_SECTIONS = {"mat": MatConfig, "train": TrainConfig, "model": ModelConfig, "data": DataConfig, "grid": GridConfig}


def _coerce(raw: str, hint: Any, key: str) -> Any:
    raw = raw.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or type(hint).__name__ == "UnionType":
        if raw.lower() == "none":
            return None
        return _coerce(raw, next(a for a in args if a is not type(None)), key)
    if origin is tuple:
        parts = [p for p in (s.strip() for s in raw.split(",")) if p]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(p, args[0], key) for p in parts)
        if len(parts) != len(args):
            raise ValueError(f"{key}: expected {len(args)} comma-separated values, got {raw!r}")
        return tuple(_coerce(p, a, key) for p, a in zip(parts, args))
    try:
        if hint is bool:
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return raw.lower() in ("true", "1", "yes")
        if hint in (int, float, str):
            return hint(raw)
    except ValueError:
        raise ValueError(f"{key}: cannot read {raw!r} as {hint.__name__}") from None
    raise TypeError(f"{key}: unsupported field type {hint!r}")


def _field_types(cls) -> dict[str, Any]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def parse_assignments(lines: Iterable[str], source: str = "<config>") -> dict[str, dict[str, Any]]:
    """Turn ``section.key = value`` lines into typed per-section overrides."""
    out: dict[str, dict[str, Any]] = {s: {} for s in _SECTIONS}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{n}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        section, _, name = key.partition(".")
        if section not in _SECTIONS or not name:
            raise ValueError(f"{source}:{n}: unknown key {key!r}")
        types = _field_types(_SECTIONS[section])
        if name not in types or name in ("mat", "vocab_size"):
            raise ValueError(f"{source}:{n}: unknown key {key!r}")
        out[section][name] = _coerce(raw, types[name], key)
    return out


def build_config(overrides: dict[str, dict[str, Any]]) -> RunConfig:
    return RunConfig(
        mat=MatConfig(**overrides.get("mat", {})),
        train=TrainConfig(**overrides.get("train", {})),
        model=dict(overrides.get("model", {})),
        data=DataConfig(**overrides.get("data", {})),
        grid=GridConfig(**overrides.get("grid", {})),
    )


def load_config(path: str | Path | None = None, assignments: Iterable[str] = ()) -> RunConfig:
    """Read a config file (optional) and apply ``key=value`` overrides on top."""
    merged: dict[str, dict[str, Any]] = {s: {} for s in _SECTIONS}
    if path is not None:
        for section, values in parse_assignments(Path(path).read_text().splitlines(), str(path)).items():
            merged[section].update(values)
    for section, values in parse_assignments(assignments, "<command line>").items():
        merged[section].update(values)
    return build_config(merged)
