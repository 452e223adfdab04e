"""Training objective and the outer loop.

Per sample the inner loop finds a perturbation with the model frozen, then a
single backward pass through

    total = l_cln + l_at + lam * l_kl

updates the parameters with Adam. The perturbation itself is a constant leaf
during that pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, TextIO

import numpy as np

from . import autodiff as ad
from .losses import output_kl, subgoal_cross_entropy
from .mat import MAT, VILLA_BASELINE, MatConfig, PerturbationSet, run_inner_loop
from .model import SPACES, ModelInput, SubgoalModel
from .structures import Subgoal
from .world.generator import Episode

ABLATIONS = ("full", "no_mat", "minus_instruction", "minus_subgoals", "minus_state", "clean")


@dataclass(frozen=True)
class LossBreakdown:
    l_cln: float
    l_at: float
    l_kl: float
    lam: float
    total: float

    def to_dict(self) -> dict:
        return {"l_cln": self.l_cln, "l_at": self.l_at, "l_kl": self.l_kl, "lambda": self.lam, "total": self.total}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    lr: float = 1e-3
    lam: float = 1.0
    seed: int = 0
    mat: MatConfig = field(default_factory=MatConfig)
    ablation: str = "full"
    alpha: int | None = None  # overrides mat.alpha_steps when set

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.epochs < 0 or self.lr <= 0:
            raise ValueError("epochs must be nonnegative and lr positive")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; expected one of {ABLATIONS}")

    @property
    def adversarial(self) -> bool:
        return self.ablation != "clean"

    def resolved_mat(self) -> MatConfig:
        """The perturbation settings the ablation implies."""
        mat = self.mat
        if self.alpha is not None:
            mat = replace(mat, alpha_steps=self.alpha)
        if self.ablation == "no_mat":
            return replace(mat, update_rule=VILLA_BASELINE)
        if self.ablation.startswith("minus_"):
            dropped = self.ablation[len("minus_") :]
            return replace(mat, update_rule=MAT, active_spaces=tuple(s for s in SPACES if s != dropped))
        return mat


def _loss_graph(
    model: SubgoalModel, x: ModelInput, target: Subgoal, delta: PerturbationSet | None, lam: float
) -> tuple[ad.Tensor, LossBreakdown]:
    clean = model.forward(x)
    l_cln = subgoal_cross_entropy(clean, target)
    if delta is None:
        return l_cln, LossBreakdown(l_cln.item(), 0.0, 0.0, lam, l_cln.item())
    adv = model.forward(x, delta.tensors())
    l_at = subgoal_cross_entropy(adv, target)
    l_kl = output_kl(clean, adv) + output_kl(adv, clean)
    total = l_cln + l_at + ad.scale(l_kl, lam)
    parts = (l_cln.item(), l_at.item(), l_kl.item())
    return total, LossBreakdown(*parts, lam, parts[0] + parts[1] + lam * parts[2])


def compute_loss(
    model: SubgoalModel, x: ModelInput, target: Subgoal, delta: PerturbationSet | None, lam: float = 1.0
) -> LossBreakdown:
    """Evaluate the objective at a fixed perturbation (``None`` means clean only)."""
    with model.frozen():
        return _loss_graph(model, x, target, delta, lam)[1]


def loss_and_gradients(
    model: SubgoalModel, x: ModelInput, target: Subgoal, delta: PerturbationSet | None, lam: float = 1.0
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Objective plus its gradient for every trainable parameter (zeros if unreached)."""
    total, parts = _loss_graph(model, x, target, delta, lam)
    grads = ad.backward(total)
    return parts, {n: grads.get(p, np.zeros(p.shape)) for n, p in model.params.items() if p.trainable}


class Adam:
    """Adam over a model's trainable parameters."""

    def __init__(self, model: SubgoalModel, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.model = model
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros(p.shape) for n, p in model.params.items()}
        self.v = {n: np.zeros(p.shape) for n, p in model.params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, g in grads.items():
            self.m[name] = self.b1 * self.m[name] + (1.0 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1.0 - self.b2) * g * g
            p = self.model.params[name]
            p.data = p.data - self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)


@dataclass(frozen=True)
class Sample:
    episode_id: str
    k: int
    tokens: list[int]
    history: list[Subgoal]
    state: object  # StateRepr
    target: Subgoal

    @property
    def sample_id(self) -> str:
        return f"{self.episode_id}#{self.k}"

    def to_input(self, model: SubgoalModel) -> ModelInput:
        return model.make_input(self.tokens, self.history, self.state)


def teacher_forced_samples(episode: Episode) -> list[Sample]:
    """One sample per expert subgoal, conditioned on the expert prefix."""
    return [
        Sample(
            episode.episode_id,
            k,
            list(episode.instruction.tokens),
            list(episode.expert_subgoals[:k]),
            episode.snapshots[k].to_state_repr(),
            sg,
        )
        for k, sg in enumerate(episode.expert_subgoals)
    ]


def inner_seed(seed: int, epoch: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, index]).generate_state(1)[0])


def train_iteration(
    model: SubgoalModel,
    optimizer: Adam,
    sample: Sample,
    config: TrainConfig,
    rng_seed: int,
) -> tuple[LossBreakdown, PerturbationSet | None]:
    x = sample.to_input(model)
    delta = None
    if config.adversarial:
        with model.frozen():
            delta, _ = run_inner_loop(model, x, sample.target, config.resolved_mat(), rng_seed)
    parts, grads = loss_and_gradients(model, x, sample.target, delta, config.lam)
    optimizer.step(grads)
    return parts, delta


@dataclass
class TrainResult:
    epoch_totals: list[float]
    iterations: int

    @property
    def relative_decrease(self) -> float:
        first, last = self.epoch_totals[0], self.epoch_totals[-1]
        return (first - last) / first


def train(
    model: SubgoalModel,
    episodes: Iterable[Episode],
    config: TrainConfig,
    log: TextIO | Callable[[dict], None] | None = None,
) -> TrainResult:
    """Run ``config.epochs`` shuffled passes over all teacher-forced samples."""
    samples = [s for ep in episodes for s in teacher_forced_samples(ep)]
    if not samples:
        raise ValueError("no training samples")
    optimizer = Adam(model, config.lr)
    rng = np.random.default_rng(config.seed)
    emit = log
    if log is not None and not callable(log):
        emit = lambda rec: log.write(json.dumps(rec, sort_keys=True) + "\n")  # noqa: E731
    totals = []
    iterations = 0
    for epoch in range(config.epochs):
        running = 0.0
        for i, j in enumerate(rng.permutation(len(samples))):
            sample = samples[j]
            parts, delta = train_iteration(model, optimizer, sample, config, inner_seed(config.seed, epoch, i))
            running += parts.total
            iterations += 1
            if emit:
                norms = delta.norms() if delta is not None else {s: 0.0 for s in SPACES}
                emit({"epoch": epoch, "sample": sample.sample_id, **parts.to_dict(), "delta_norms": norms})
        totals.append(running / len(samples))
    return TrainResult(totals, iterations)

