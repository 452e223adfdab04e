"""Ablation grid and the directional smoke experiment.

Each grid cell is (condition, alpha, seed). A cell trains one model from
scratch and evaluates it on every requested fold. Cells share nothing, so they
may run in worker processes; rows are gathered and written by one writer in a
fixed order, which keeps the CSV byte-identical across reruns.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from multiprocessing import get_context
from pathlib import Path
from typing import Sequence

from .checkpoint import save_model
from .config import RunConfig
from .evaluate import adversarial_gap, evaluate
from .model import SubgoalModel
from .train import TrainResult, train
from .world.dataset import DatasetSplit

GRID_COLUMNS = ("condition", "alpha", "seed", "fold", "n", "sr", "gc", "f1_micro", "mask_acc")
SMOKE_COLUMNS = ("seed", "condition", "loss_epoch_first", "loss_epoch_last", "decrease", "adv_gap_valid_unseen")


@dataclass(frozen=True, order=True)
class Cell:
    condition: str
    alpha: int
    seed: int

    @property
    def name(self) -> str:
        return f"{self.condition}-a{self.alpha}-s{self.seed}"


def grid_cells(config: RunConfig) -> list[Cell]:
    """Every condition at the default alpha plus the alpha sweep on ``full``, per seed."""
    base = config.mat.alpha_steps
    cells: list[Cell] = []
    for seed in config.grid.seeds:
        for cond in config.grid.conditions:
            cells.append(Cell(cond, base, seed))
        for alpha in config.grid.alphas:
            cell = Cell("full", alpha, seed)
            if cell not in cells:
                cells.append(cell)
    return cells


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def train_cell(
    cell: Cell, split: DatasetSplit, config: RunConfig, out_dir: Path | None = None
) -> tuple[SubgoalModel, TrainResult]:
    episodes = split["train"]
    if config.data.train_limit is not None:
        episodes = episodes[: config.data.train_limit]
    model = SubgoalModel(config.model_config(len(split.vocab), cell.seed))
    tcfg = config.train_config(seed=cell.seed, ablation=cell.condition, alpha=cell.alpha)
    if out_dir is None:
        return model, train(model, episodes, tcfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{cell.name}.log.jsonl", "w") as log:
        result = train(model, episodes, tcfg, log)
    save_model(out_dir / f"{cell.name}.ckpt", model, {"cell": cell.name, "epoch_totals": result.epoch_totals})
    return model, result


def run_cell(cell: Cell, split: DatasetSplit, config: RunConfig, out_dir: Path | None = None) -> list[dict]:
    model, _ = train_cell(cell, split, config, out_dir)
    rows = []
    for fold in config.grid.folds:
        episodes = split[fold]
        if config.grid.eval_limit is not None:
            episodes = episodes[: config.grid.eval_limit]
        rep = evaluate(model, episodes, fold, cell.seed)
        rows.append(
            {
                "condition": cell.condition,
                "alpha": str(cell.alpha),
                "seed": str(cell.seed),
                "fold": fold,
                "n": str(rep.n),
                "sr": _fmt(rep.sr),
                "gc": _fmt(rep.gc),
                "f1_micro": _fmt(rep.f1["micro"].f1),
                "mask_acc": _fmt(rep.mask_accuracy),
            }
        )
    return rows


def _run_cell_job(args) -> list[dict]:
    return run_cell(*args)


def render_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def run_experiment_grid(
    split: DatasetSplit, config: RunConfig, csv_path: str | Path, out_dir: str | Path | None = None
) -> list[dict]:
    """Train and evaluate every cell, then write one CSV (rows in cell order)."""
    cells = grid_cells(config)
    out = Path(out_dir) if out_dir is not None else None
    jobs = [(cell, split, config, out) for cell in cells]
    if config.grid.workers > 1:
        with get_context("fork").Pool(config.grid.workers) as pool:
            per_cell = pool.map(_run_cell_job, jobs, chunksize=1)
    else:
        per_cell = [_run_cell_job(job) for job in jobs]
    rows = [row for rows in per_cell for row in rows]
    Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
    Path(csv_path).write_text(render_csv(rows, GRID_COLUMNS))
    return rows


def run_smoke(split: DatasetSplit, config: RunConfig, seeds: Sequence[int], csv_path: str | Path | None = None) -> list[dict]:
    """Full-MAT versus clean training per seed: loss trajectory and adversarial gap."""
    rows = []
    probe = split["valid_unseen"]
    if config.grid.eval_limit is not None:
        probe = probe[: config.grid.eval_limit]
    for seed in seeds:
        for cond in ("full", "clean"):
            model, result = train_cell(Cell(cond, config.mat.alpha_steps, seed), split, config)
            gap = adversarial_gap(model, probe, config.mat, seed)
            rows.append(
                {
                    "seed": str(seed),
                    "condition": cond,
                    "loss_epoch_first": _fmt(result.epoch_totals[0]),
                    "loss_epoch_last": _fmt(result.epoch_totals[-1]),
                    "decrease": _fmt(result.relative_decrease),
                    "adv_gap_valid_unseen": _fmt(gap),
                }
            )
    if csv_path is not None:
        Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
        Path(csv_path).write_text(render_csv(rows, SMOKE_COLUMNS))
    return rows

