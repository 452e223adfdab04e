"""Moment-based perturbation updates in the three embedding spaces.

Each inner step takes the gradient g of the adversarial cross-entropy with
respect to the perturbation and, per active space,

    m_t = rho1 * m_{t-1} + (1 - rho1) * g
    v_t = rho2 * v_{t-1} + (1 - rho2) * g * g
    m_hat = m_t / (1 - rho1**t),   v_hat = v_t / (1 - rho2**t)
    step = eta * m_hat / sqrt(v_hat + eps_num)
    delta <- project(delta + step_scale * step / ||step||_F)

where ``project`` rescales onto the Frobenius ball of radius ``eps_ball``.
The renormalisation cancels ``eta``; ``step_scale`` sets the applied length.

The moment-free baseline replaces ``step`` with ``eta * g / ||g||_F``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .losses import subgoal_cross_entropy
from .model import SPACES, ModelInput, SubgoalModel
from .structures import Subgoal

MAT = "mat"
VILLA_BASELINE = "villa"
DEGENERATE_NORM = 1e-20


@dataclass(frozen=True)
class MatConfig:
    rho1: float = 0.9
    rho2: float = 0.999
    eta: float = 1e-3
    eps_num: float = 1e-8
    eps_ball: float = 1.0
    alpha_steps: int = 7
    init_sigma: float | None = None  # None -> eps_ball / 10
    update_rule: str = MAT
    active_spaces: tuple[str, ...] = SPACES
    projection: str = "per_component"  # or "joint"
    step_scale: float = 1.0
    use_second_moment: bool = True

    def __post_init__(self):
        object.__setattr__(self, "active_spaces", tuple(s for s in SPACES if s in set(self.active_spaces)))
        if not (0.0 <= self.rho1 < 1.0 and 0.0 <= self.rho2 < 1.0):
            raise ValueError("rho1 and rho2 must lie in [0, 1)")
        if self.eta <= 0 or self.eps_num < 0 or self.eps_ball <= 0 or self.step_scale <= 0:
            raise ValueError("eta, eps_ball and step_scale must be positive; eps_num nonnegative")
        if self.alpha_steps < 1:
            raise ValueError("alpha_steps must be at least 1")
        if self.init_sigma is not None and self.init_sigma < 0:
            raise ValueError("init_sigma must be nonnegative")
        if self.update_rule not in (MAT, VILLA_BASELINE):
            raise ValueError(f"unknown update rule {self.update_rule!r}")
        if self.projection not in ("per_component", "joint"):
            raise ValueError(f"unknown projection {self.projection!r}")

    @property
    def sigma(self) -> float:
        return self.eps_ball / 10 if self.init_sigma is None else self.init_sigma


@dataclass
class PerturbationSet:
    """One additive perturbation per embedding space; inactive ones stay zero."""

    components: dict[str, np.ndarray]
    active: tuple[str, ...]

    @property
    def delta_l(self) -> np.ndarray:
        return self.components["instruction"]

    @property
    def delta_g(self) -> np.ndarray:
        return self.components["subgoals"]

    @property
    def delta_s(self) -> np.ndarray:
        return self.components["state"]

    def norms(self) -> dict[str, float]:
        return {s: float(np.linalg.norm(self.components[s])) for s in SPACES}

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        """Active components as graph leaves, ready for ``SubgoalModel.forward``."""
        return {s: Tensor(self.components[s], requires_grad=requires_grad) for s in self.active}

    def copy(self) -> PerturbationSet:
        return PerturbationSet({s: c.copy() for s, c in self.components.items()}, self.active)


@dataclass
class MomentState:
    """Raw moments m, v plus their bias-corrected estimates.

    The corrected estimates are carried in the gain form
    ``m_hat_t = m_hat_{t-1} + k_t * (g - m_hat_{t-1})`` with
    ``k_t = (1 - rho) / (1 - rho**t)``, which equals ``m_t / (1 - rho**t)``
    algebraically and gives ``m_hat_1 = g`` bit for bit (``k_1`` is exactly 1).
    """

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    m_hat: dict[str, np.ndarray] = field(default_factory=dict)
    v_hat: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    skipped: list[tuple[int, str]] = field(default_factory=list)  # (step, space) left unmoved

    def __post_init__(self):
        for s, a in self.m.items():
            self.m_hat.setdefault(s, np.zeros_like(a))
            self.v_hat.setdefault(s, np.zeros_like(a))

    def copy(self) -> MomentState:
        dup = lambda d: {s: a.copy() for s, a in d.items()}  # noqa: E731
        return MomentState(dup(self.m), dup(self.v), dup(self.m_hat), dup(self.v_hat), self.t, list(self.skipped))


def project_to_ball(x: np.ndarray, radius: float) -> np.ndarray:
    """Radially rescale ``x`` onto the Frobenius ball of ``radius`` if outside."""
    norm = np.linalg.norm(x)
    return x * (radius / norm) if norm > radius else x


def _project(components: dict[str, np.ndarray], active: tuple[str, ...], config: MatConfig) -> None:
    if config.projection == "per_component":
        for s in active:
            components[s] = project_to_ball(components[s], config.eps_ball)
        return
    joint = np.sqrt(np.sum([np.sum(components[s] ** 2) for s in active]))
    if joint > config.eps_ball:
        for s in active:
            components[s] = components[s] * (config.eps_ball / joint)


def init_perturbations(
    shapes: Mapping[str, tuple[int, ...]], config: MatConfig, rng_seed: int
) -> tuple[PerturbationSet, MomentState]:
    """Gaussian start inside the ball, zero moments, t = 0."""
    missing = set(SPACES) - set(shapes)
    if missing:
        raise KeyError(f"missing shapes for {sorted(missing)}")
    rng = np.random.default_rng(rng_seed)
    comps = {s: np.zeros(shapes[s]) for s in SPACES}
    for s in config.active_spaces:
        if config.sigma > 0:
            comps[s] = rng.normal(0.0, config.sigma, size=shapes[s])
    _project(comps, config.active_spaces, config)
    moments = MomentState(
        m={s: np.zeros(shapes[s]) for s in config.active_spaces},
        v={s: np.zeros(shapes[s]) for s in config.active_spaces},
    )
    return PerturbationSet(comps, config.active_spaces), moments


def adversarial_loss(model: SubgoalModel, x: ModelInput, target: Subgoal, delta: PerturbationSet) -> float:
    """E(delta) = CE(f(x + delta), g) without touching any gradient."""
    with model.frozen():
        return float(subgoal_cross_entropy(model.forward(x, delta.tensors()), target).data)


def adversarial_gradient(
    model: SubgoalModel, x: ModelInput, target: Subgoal, delta: PerturbationSet
) -> dict[str, np.ndarray]:
    """dE/d(delta) for each active space; parameters are neither read for grads nor changed."""
    leaves = delta.tensors(requires_grad=True)
    with model.frozen():
        loss = subgoal_cross_entropy(model.forward(x, leaves), target)
        grads = ad.backward(loss)
    return {s: grads.get(t, np.zeros(t.shape)) for s, t in leaves.items()}


def _check_grads(delta: PerturbationSet, grads: Mapping[str, np.ndarray]) -> None:
    for s in delta.active:
        if s not in grads:
            raise KeyError(f"no gradient for active space {s}")
        if grads[s].shape != delta.components[s].shape:
            raise ad.ShapeError(f"gradient for {s} has shape {grads[s].shape}, delta {delta.components[s].shape}")


def corrected_moments(moments: MomentState, space: str) -> tuple[np.ndarray, np.ndarray]:
    """Bias-corrected (m_hat, v_hat) for one space at the current counter."""
    return moments.m_hat[space], moments.v_hat[space]


def mat_step(
    delta: PerturbationSet, moments: MomentState, grads: Mapping[str, np.ndarray], config: MatConfig
) -> tuple[PerturbationSet, MomentState]:
    """One moment-based update; returns new objects and leaves the inputs alone."""
    _check_grads(delta, grads)
    new = delta.copy()
    mom = moments.copy()
    mom.t += 1
    k1 = (1.0 - config.rho1) / (1.0 - config.rho1**mom.t)
    k2 = (1.0 - config.rho2) / (1.0 - config.rho2**mom.t)
    for s in delta.active:
        g = grads[s]
        g2 = g * g
        mom.m[s] = config.rho1 * mom.m[s] + (1.0 - config.rho1) * g
        mom.v[s] = config.rho2 * mom.v[s] + (1.0 - config.rho2) * g2
        mom.m_hat[s] = mom.m_hat[s] + k1 * (g - mom.m_hat[s])
        mom.v_hat[s] = mom.v_hat[s] + k2 * (g2 - mom.v_hat[s])
        m_hat, v_hat = mom.m_hat[s], mom.v_hat[s]
        if config.use_second_moment:
            step = config.eta * m_hat / np.sqrt(v_hat + config.eps_num)
        else:
            step = config.eta * m_hat
        norm = np.linalg.norm(step)
        if norm < DEGENERATE_NORM:
            mom.skipped.append((mom.t, s))
            continue
        new.components[s] = new.components[s] + config.step_scale * (step / norm)
    _project(new.components, new.active, config)
    return new, mom


def villa_baseline_step(delta: PerturbationSet, grads: Mapping[str, np.ndarray], config: MatConfig) -> PerturbationSet:
    """Moment-free normalised-gradient ascent step followed by projection."""
    _check_grads(delta, grads)
    new = delta.copy()
    for s in delta.active:
        norm = np.linalg.norm(grads[s])
        if norm < DEGENERATE_NORM:
            continue
        new.components[s] = new.components[s] + config.eta * grads[s] / norm
    _project(new.components, new.active, config)
    return new


def run_inner_loop(
    model: SubgoalModel, x: ModelInput, target: Subgoal, config: MatConfig, rng_seed: int
) -> tuple[PerturbationSet, MomentState]:
    """``alpha_steps`` gradient/update rounds from a fresh start; moments start at zero."""
    delta, moments = init_perturbations(model.embedding_shapes(x), config, rng_seed)
    for _ in range(config.alpha_steps):
        grads = adversarial_gradient(model, x, target, delta)
        if config.update_rule == MAT:
            delta, moments = mat_step(delta, moments, grads, config)
        else:
            delta = villa_baseline_step(delta, grads, config)
            moments = replace(moments, t=moments.t + 1)
    return delta, moments
