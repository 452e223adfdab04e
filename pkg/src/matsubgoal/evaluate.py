"""Closed-loop evaluation and the adversarial robustness probe.

A rollout sees only the instruction, the initial world and a step budget; the
expert plan is read afterwards, by the scorer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .catalog import ACTS
from .mat import MatConfig, run_inner_loop
from .metrics import TypeScore, f1_per_type, goal_condition_rate, greedy_alignment, longest_common_subsequence, success_rate
from .model import SubgoalModel
from .structures import Subgoal
from .train import compute_loss, inner_seed, teacher_forced_samples
from .world.executor import execute_subgoal, goals_satisfied
from .world.generator import Episode
from .world.state import WorldState

STEP_CAP_FACTOR = 3
STOP = ACTS.index("Stop")
PROBE_STREAM = 1_000_000  # keeps probe seeds apart from training epochs


@dataclass
class Rollout:
    predicted: list[Subgoal]
    succeeded: list[bool]  # executor outcome per non-Stop prediction
    final_state: WorldState

    def executed_pairs(self) -> list[tuple[int, int]]:
        done = [sg for sg in self.predicted if sg.act != STOP]
        return [(sg.act, sg.arg) for sg, ok in zip(done, self.succeeded) if ok]


def rollout(model: SubgoalModel, tokens: Sequence[int], initial: WorldState, max_steps: int) -> Rollout:
    """Predict and execute subgoals from the model's own history until Stop or ``max_steps``."""
    state = initial.copy()
    history: list[Subgoal] = []
    succeeded: list[bool] = []
    for _ in range(max_steps):
        sg = model.predict(model.make_input(tokens, history, state.to_state_repr()))
        history.append(sg)
        if sg.act == STOP:
            break
        state, ok = execute_subgoal(state, sg)
        succeeded.append(ok)
    return Rollout(history, succeeded, state)


@dataclass
class EpisodeScore:
    success: bool
    total: int  # expert subgoals other than Stop
    completed: int
    predicted_pairs: list[tuple[int, int]]
    truth_pairs: list[tuple[int, int]]
    mask_hits: int
    mask_checked: int


def score_episode(episode: Episode, result: Rollout) -> EpisodeScore:
    truth = episode.expert_subgoals
    truth_work = [(sg.act, sg.arg) for sg in truth if sg.act != STOP]
    pred_pairs = [(sg.act, sg.arg) for sg in result.predicted]
    truth_pairs = [(sg.act, sg.arg) for sg in truth]
    hits = checked = 0
    for i, j in greedy_alignment(pred_pairs, truth_pairs):
        if truth[j].act == STOP:
            continue
        checked += 1
        hits += int(truth[j].mask.reshape(-1)[result.predicted[i].mask.reshape(-1).argmax()] == 1)
    return EpisodeScore(
        success=goals_satisfied(result.final_state, episode.goals),
        total=len(truth_work),
        completed=longest_common_subsequence(result.executed_pairs(), truth_work),
        predicted_pairs=pred_pairs,
        truth_pairs=truth_pairs,
        mask_hits=hits,
        mask_checked=checked,
    )


@dataclass
class EvalReport:
    fold: str
    sr: float
    gc: float
    f1: dict[str, TypeScore]
    n: int
    seed: int
    mask_accuracy: float
    episodes: list[EpisodeScore] = field(default_factory=list, repr=False)

    def summary(self) -> str:
        lines = [
            f"fold={self.fold} n={self.n} seed={self.seed}",
            f"SR={self.sr:.4f} GC={self.gc:.4f} mask_acc={self.mask_accuracy:.4f}",
            f"{'type':<10} {'prec':>6} {'rec':>6} {'f1':>6} {'support':>7}",
        ]
        for name, s in self.f1.items():
            lines.append(f"{name:<10} {s.precision:6.3f} {s.recall:6.3f} {s.f1:6.3f} {s.support:7d}")
        return "\n".join(lines)


def evaluate(model: SubgoalModel, episodes: Sequence[Episode], fold: str = "", seed: int = 0) -> EvalReport:
    if not episodes:
        raise ValueError("cannot evaluate an empty fold")
    scores = []
    for ep in episodes:
        result = rollout(model, ep.instruction.tokens, ep.initial, STEP_CAP_FACTOR * len(ep.expert_subgoals))
        scores.append(score_episode(ep, result))
    checked = sum(s.mask_checked for s in scores)
    return EvalReport(
        fold=fold,
        sr=success_rate([s.success for s in scores]),
        gc=goal_condition_rate([(s.total, s.completed) for s in scores]),
        f1=f1_per_type([s.predicted_pairs for s in scores], [s.truth_pairs for s in scores]),
        n=len(scores),
        seed=seed,
        mask_accuracy=sum(s.mask_hits for s in scores) / checked if checked else 0.0,
        episodes=scores,
    )


def adversarial_gap(
    model: SubgoalModel, episodes: Sequence[Episode], mat: MatConfig | None = None, seed: int = 0
) -> float:
    """Mean of l_at - l_cln over teacher-forced samples at a freshly searched perturbation."""
    mat = mat or MatConfig()
    gaps = []
    i = 0
    for ep in episodes:
        for sample in teacher_forced_samples(ep):
            x = sample.to_input(model)
            with model.frozen():
                delta, _ = run_inner_loop(model, x, sample.target, mat, inner_seed(seed, PROBE_STREAM, i))
            parts = compute_loss(model, x, sample.target, delta)
            gaps.append(parts.l_at - parts.l_cln)
            i += 1
    return float(np.mean(gaps))
