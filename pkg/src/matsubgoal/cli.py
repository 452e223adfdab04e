"""Command-line entry point: ``matsubgoal <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_model, save_model
from .config import load_config
from .evaluate import evaluate
from .grid import run_experiment_grid, run_smoke
from .model import SubgoalModel
from .train import ABLATIONS, train
from .world.dataset import FOLDS, build_split, read_fold, read_split, write_split
from .world.executor import execute_subgoal, goals_satisfied
from .world.vocab import Vocab


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")


def _config(args):
    return load_config(args.config, args.set)


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    seed = cfg.data.seed if args.seed is None else args.seed
    split = build_split(
        num_scenes=cfg.data.num_scenes, seed=seed, unseen_scenes=cfg.data.unseen_scenes, slice_prob=cfg.data.slice_prob
    )
    for path in write_split(split, args.out):
        print(path)
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    split_dir = args.data or Path(cfg.data.dir)
    episodes = read_fold(split_dir, "train")
    if cfg.data.train_limit is not None:
        episodes = episodes[: cfg.data.train_limit]
    vocab_size = len(Vocab.load(split_dir / "vocab.txt"))
    flags = {"ablation": args.ablation, "alpha": args.alpha, "seed": args.seed, "epochs": args.epochs}
    overrides = {k: v for k, v in flags.items() if v is not None}
    tcfg = cfg.train_config(**overrides)
    model = SubgoalModel(cfg.model_config(vocab_size, tcfg.seed))
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "train.log.jsonl", "w") as log:
        result = train(model, episodes, tcfg, log)
    meta = {
        "ablation": tcfg.ablation,
        "seed": tcfg.seed,
        "alpha": tcfg.resolved_mat().alpha_steps,
        "epoch_totals": result.epoch_totals,
    }
    save_model(args.out / "model.ckpt", model, meta)
    print(json.dumps({"checkpoint": str(args.out / "model.ckpt"), **meta}))
    return 0


EVAL_COLUMNS = ("checkpoint", "fold", "seed", "n", "sr", "gc", "f1_micro", "mask_acc")


def cmd_eval(args) -> int:
    model, meta = load_model(args.checkpoint)
    episodes = read_fold(args.data, args.fold)
    if args.limit is not None:
        episodes = episodes[: args.limit]
    report = evaluate(model, episodes, args.fold, int(meta.get("seed", 0)))
    print(report.summary())
    if args.csv is not None:
        new = not args.csv.exists()
        with open(args.csv, "a", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if new:
                writer.writerow(EVAL_COLUMNS)
            writer.writerow(
                [args.checkpoint, args.fold, report.seed, report.n]
                + [f"{x:.6f}" for x in (report.sr, report.gc, report.f1["micro"].f1, report.mask_accuracy)]
            )
    return 0


def cmd_grid(args) -> int:
    cfg = _config(args)
    split = read_split(args.data or cfg.data.dir)
    if args.smoke:
        rows = run_smoke(split, cfg, cfg.grid.seeds, args.csv)
    else:
        rows = run_experiment_grid(split, cfg, args.csv, args.out)
    print(f"wrote {len(rows)} rows to {args.csv}")
    return 0


def cmd_inspect_episode(args) -> int:
    episodes = read_fold(args.data, args.fold)
    if args.id is not None:
        matches = [e for e in episodes if e.episode_id == args.id]
        if not matches:
            raise ValueError(f"no episode {args.id!r} in {args.fold}")
        ep = matches[0]
    else:
        if not 0 <= args.index < len(episodes):
            raise ValueError(f"index {args.index} out of range for {len(episodes)} episodes")
        ep = episodes[args.index]
    print(f"episode  {ep.episode_id}  ({ep.task_type}, scene {ep.scene_id})")
    print(f"instruction: {ep.instruction.text}")
    print(f"goals: {json.dumps(ep.goals)}")
    state = ep.initial.copy()
    for k, sg in enumerate(ep.expert_subgoals):
        state, ok = execute_subgoal(state, sg)
        held = state.objects[state.held].cls if state.held is not None else "-"
        pose = state.pose
        status = "ok" if ok else "FAILED"
        print(f"  {k:2d}. {sg.describe():<32} {status:<6} robot=({pose.row},{pose.col},{pose.yaw}) held={held}")
    print(f"goals satisfied after replay: {goals_satisfied(state, ep.goals)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="matsubgoal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the five folds and the scene library")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True)
    _add_config_args(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model and write a checkpoint plus log")
    p.add_argument("--data", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--ablation", choices=ABLATIONS)
    p.add_argument("--alpha", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="closed-loop evaluation of a checkpoint on one fold")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--fold", choices=FOLDS, required=True)
    p.add_argument("--limit", type=int)
    p.add_argument("--csv", type=Path, help="append a result row here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="run the ablation and alpha grid into one CSV")
    p.add_argument("--data", type=Path)
    p.add_argument("--csv", type=Path, required=True)
    p.add_argument("--out", type=Path, help="directory for per-run logs and checkpoints")
    p.add_argument("--smoke", action="store_true", help="run the full-vs-clean smoke comparison instead")
    _add_config_args(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("inspect-episode", help="print an episode and replay its expert plan")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--fold", choices=FOLDS, default="train")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--index", type=int, default=0)
    group.add_argument("--id")
    p.set_defaults(func=cmd_inspect_episode)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, CheckpointError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
