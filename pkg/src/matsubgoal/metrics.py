"""Episode-level success metrics and per-type subgoal F1."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence

from .catalog import ACTS

Pair = tuple[int, int]  # (act index, argument class index)


def success_rate(successes: Sequence[bool]) -> float:
    if not successes:
        raise ValueError("success rate over zero episodes")
    return sum(bool(s) for s in successes) / len(successes)


def goal_condition_rate(counts: Sequence[tuple[int, int]]) -> float:
    """Mean of completed/total over episodes, given (total, completed) pairs."""
    if not counts:
        raise ValueError("goal-condition rate over zero episodes")
    fractions = []
    for total, done in counts:
        if total <= 0 or not 0 <= done <= total:
            raise ValueError(f"bad goal-condition count ({total}, {done})")
        fractions.append(done / total)
    return sum(fractions) / len(fractions)


def longest_common_subsequence(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def greedy_alignment(pred: Sequence[Hashable], truth: Sequence[Hashable]) -> list[tuple[int, int]]:
    """Match predictions to truth in order: each prediction takes the next equal, unused truth item."""
    matches = []
    j = 0
    for i, p in enumerate(pred):
        for jj in range(j, len(truth)):
            if truth[jj] == p:
                matches.append((i, jj))
                j = jj + 1
                break
    return matches


@dataclass(frozen=True)
class TypeScore:
    precision: float
    recall: float
    f1: float
    support: int
    predicted: int
    matched: int

    @classmethod
    def from_counts(cls, matched: int, predicted: int, support: int) -> TypeScore:
        p = matched / predicted if predicted else 0.0
        r = matched / support if support else 0.0
        # harmonic mean of p and r, written so it rounds only once
        f = 2 * matched / (predicted + support) if predicted + support else 0.0
        return cls(p, r, f, support, predicted, matched)


def f1_per_type(pred_seqs: Sequence[Sequence[Pair]], truth_seqs: Sequence[Sequence[Pair]]) -> dict[str, TypeScore]:
    """Per-act precision/recall/F1 over all episodes, plus a ``micro`` total."""
    if len(pred_seqs) != len(truth_seqs):
        raise ValueError("prediction and truth lists differ in length")
    matched = {a: 0 for a in ACTS}
    predicted = {a: 0 for a in ACTS}
    support = {a: 0 for a in ACTS}
    for pred, truth in zip(pred_seqs, truth_seqs):
        for act, _ in pred:
            predicted[ACTS[act]] += 1
        for act, _ in truth:
            support[ACTS[act]] += 1
        for i, _ in greedy_alignment(pred, truth):
            matched[ACTS[pred[i][0]]] += 1
    scores = {a: TypeScore.from_counts(matched[a], predicted[a], support[a]) for a in ACTS}
    scores["micro"] = TypeScore.from_counts(sum(matched.values()), sum(predicted.values()), sum(support.values()))
    return scores
