"""Fold construction and the on-disk dataset format.

A dataset directory holds ``episodes.<fold>.jsonl`` (one episode per line),
``scenes.jsonl`` (the scene library) and ``vocab.txt``. Every episode line
carries ``"schema": SCHEMA_VERSION``.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from ..catalog import TASK_TYPES
from ..structures import Instruction, Subgoal
from .generator import DEFAULT_GRID, Episode, Scene, UnsatisfiableTask, generate_episode, generate_scene
from .state import WorldState
from .vocab import Vocab

SCHEMA_VERSION = 1
FOLDS = ("train", "valid_seen", "valid_unseen", "test_seen", "test_unseen")
DEFAULT_COUNTS = {"train": 200, "valid_seen": 40, "valid_unseen": 40, "test_seen": 40, "test_unseen": 40}


@dataclass
class DatasetSplit:
    folds: dict[str, list[Episode]]
    scenes: dict[str, Scene]
    vocab: Vocab
    scene_folds: dict[str, list[str]] = field(default_factory=dict)

    def __getitem__(self, fold: str) -> list[Episode]:
        return self.folds[fold]


def build_split(
    num_scenes: int = 30,
    counts: dict[str, int] | None = None,
    seed: int = 0,
    unseen_scenes: int = 5,
    slice_prob: float = 0.1,
    shape: tuple[int, int] = DEFAULT_GRID,
) -> DatasetSplit:
    """Generate all five folds.

    The first ``num_scenes - 2 * unseen_scenes`` scenes serve train and both
    seen folds; each unseen fold gets its own ``unseen_scenes`` scenes.
    """
    counts = {**DEFAULT_COUNTS, **(counts or {})}
    n_train = num_scenes - 2 * unseen_scenes
    if n_train < 1 or unseen_scenes < 1:
        raise ValueError(f"cannot split {num_scenes} scenes with {unseen_scenes} per unseen fold")
    vocab = Vocab.build()
    scenes = [generate_scene(seed * 100_000 + i, shape) for i in range(num_scenes)]
    pools = {
        "train": scenes[:n_train],
        "valid_seen": scenes[:n_train],
        "test_seen": scenes[:n_train],
        "valid_unseen": scenes[n_train : n_train + unseen_scenes],
        "test_unseen": scenes[n_train + unseen_scenes :],
    }
    rng = random.Random(f"split-{seed}")
    used: set[str] = set()
    folds: dict[str, list[Episode]] = {}
    for fold in FOLDS:
        want = counts[fold]
        episodes: list[Episode] = []
        attempts = 0
        while len(episodes) < want:
            attempts += 1
            if attempts > 50 * want + 100:
                raise ValueError(f"could not generate {want} episodes for {fold}")
            task = TASK_TYPES[len(episodes) % len(TASK_TYPES)]
            scene = rng.choice(pools[fold])
            ep_seed = rng.randrange(1_000_000)
            try:
                ep = generate_episode(scene, task, ep_seed, vocab, slice_prob=slice_prob)
            except UnsatisfiableTask:
                continue
            if ep.episode_id in used:
                continue
            used.add(ep.episode_id)
            episodes.append(ep)
        folds[fold] = episodes
    return DatasetSplit(
        folds=folds,
        scenes={s.scene_id: s for s in scenes},
        vocab=vocab,
        scene_folds={f: [s.scene_id for s in p] for f, p in pools.items()},
    )


# -- serialisation ------------------------------------------------------------------


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def episode_to_json(ep: Episode) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "episode_id": ep.episode_id,
        "scene_id": ep.scene_id,
        "task_type": ep.task_type,
        "instruction": {"text": ep.instruction.text, "tokens": ep.instruction.tokens},
        "expert_subgoals": [sg.to_json() for sg in ep.expert_subgoals],
        "snapshots": [s.to_json() for s in ep.snapshots],
        "goals": ep.goals,
        "params": ep.params,
    }


def episode_from_json(rec: dict) -> Episode:
    if rec.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"unsupported episode schema {rec.get('schema')!r}")
    snapshots = [WorldState.from_json(s) for s in rec["snapshots"]]
    shape = snapshots[0].shape
    return Episode(
        episode_id=rec["episode_id"],
        scene_id=rec["scene_id"],
        task_type=rec["task_type"],
        instruction=Instruction(list(rec["instruction"]["tokens"]), rec["instruction"]["text"]),
        expert_subgoals=[Subgoal.from_json(s, shape) for s in rec["expert_subgoals"]],
        snapshots=snapshots,
        goals=rec["goals"],
        params=rec["params"],
    )


def write_split(split: DatasetSplit, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for fold, episodes in split.folds.items():
        path = out / f"episodes.{fold}.jsonl"
        path.write_text("".join(_dumps(episode_to_json(e)) + "\n" for e in episodes))
        written.append(path)
    scenes_path = out / "scenes.jsonl"
    lines = []
    for sid in sorted(split.scenes):
        rec = split.scenes[sid].to_json()
        rec["folds"] = sorted(f for f, ids in split.scene_folds.items() if sid in ids)
        lines.append(_dumps(rec) + "\n")
    scenes_path.write_text("".join(lines))
    split.vocab.save(out / "vocab.txt")
    return written + [scenes_path, out / "vocab.txt"]


def read_fold(data_dir: str | Path, fold: str) -> list[Episode]:
    path = Path(data_dir) / f"episodes.{fold}.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"missing fold file {path}")
    return [episode_from_json(json.loads(line)) for line in path.read_text().splitlines() if line]


def read_split(data_dir: str | Path) -> DatasetSplit:
    data_dir = Path(data_dir)
    folds = {f: read_fold(data_dir, f) for f in FOLDS}
    scenes: dict[str, Scene] = {}
    scene_folds: dict[str, list[str]] = {f: [] for f in FOLDS}
    for line in (data_dir / "scenes.jsonl").read_text().splitlines():
        rec = json.loads(line)
        scene = Scene.from_json(rec)
        scenes[scene.scene_id] = scene
        for f in rec.get("folds", []):
            scene_folds[f].append(scene.scene_id)
    return DatasetSplit(folds, scenes, Vocab.load(data_dir / "vocab.txt"), scene_folds)
