"""Continuous adaptation of step size, diagonal preconditioner and trajectory length.

One call to :func:`adaptive_step` performs a full iteration of adaptive
stochastic-gradient-ascent HMC: draw a jittered trajectory length, run one
batched HMC transition, then update every adapted quantity from that batch.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .criteria import CriterionInputs, CriterionKind, criterion
from .hmc import ChainState, ProposalBatch, hmc_propose
from .targets import TargetModel

VARIANCE_FLOOR = 1e-10


@dataclass(frozen=True)
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    first_moment: float = 0.0
    second_moment: float = 0.0
    step_count: int = 0
    skipped: int = 0


def adam_step(state: AdamState, gradient) -> tuple[AdamState, float]:
    """Bias-corrected ADAM; returns the new state and the increment to *add*.

    The increment descends ``gradient``. Non-finite gradients leave the state
    untouched apart from the ``skipped`` counter.
    """
    g = float(gradient)
    if not math.isfinite(g):
        return replace(state, skipped=state.skipped + 1), 0.0
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * g
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    increment = -state.lr * m_hat / (math.sqrt(v_hat) + state.epsilon)
    return replace(state, first_moment=m, second_moment=v, step_count=t), increment


def step_size_gradient(accept_prob, target: float = 0.8) -> float:
    """``target - harmonic_mean(accept_prob)``; a zero entry makes the mean zero."""
    alpha = np.asarray(accept_prob, dtype=float)
    if np.any(alpha <= 0):
        return float(target)
    with np.errstate(over="ignore"):
        return float(target - 1.0 / np.mean(1.0 / alpha))


def moment_rate(t: int, kappa: float) -> float:
    """Decaying learning rate ``1 / (ceil(t / kappa) + 1)`` for running moments."""
    return 1.0 / (math.ceil(t / kappa) + 1)


@dataclass(frozen=True)
class WelfordState:
    mean: np.ndarray
    var: np.ndarray
    kappa: float = 8.0


def welford_update(state: WelfordState, batch, t: int) -> WelfordState:
    """Exponentially weighted mean/variance step; the variance uses the old mean."""
    if t < 1:
        raise ValueError("t must be >= 1")
    batch = np.asarray(batch, dtype=float)
    rate = moment_rate(t, state.kappa)
    mean = (1.0 - rate) * state.mean + rate * batch.mean(axis=0)
    var = (1.0 - rate) * state.var + rate * np.mean((batch - state.mean) ** 2, axis=0)
    return replace(state, mean=mean, var=var)


def center_update(center, batch, weights, t: int, kappa: float) -> np.ndarray:
    """Same schedule as the Welford mean, using a weighted batch mean."""
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    if not total > 0:
        return center
    rate = moment_rate(t, kappa)
    batch_mean = weights @ np.asarray(batch, dtype=float) / total
    return (1.0 - rate) * center + rate * batch_mean


@dataclass(frozen=True)
class OjaState:
    direction: np.ndarray
    t: int = 0


def oja_rate(t: int, scale: float = 8.0) -> float:
    return min(1.0, scale / t)


def oja_update(state: OjaState, batch, center, rate: float) -> OjaState:
    """Minibatch Oja step towards the top eigenvector of the centered batch."""
    z = np.asarray(batch, dtype=float) - center
    p = state.direction
    raw = z.T @ (z @ p)
    norm = np.linalg.norm(raw)
    if not norm > 0 or not np.isfinite(norm):
        return replace(state, t=state.t + 1)
    blended = p + rate * raw / norm
    return OjaState(blended / np.linalg.norm(blended), state.t + 1)


def mass_from_variance(var) -> np.ndarray:
    """Diagonal inverse mass normalized so that its largest entry is exactly 1."""
    var = np.maximum(np.asarray(var, dtype=float), VARIANCE_FLOOR)
    return var / var.max()


def sample_trajectory(rng: np.random.Generator, phi_tau: float) -> tuple[float, float]:
    """``tau = u * exp(phi_tau)`` with ``u ~ Unif(0, 1)``; returns ``(tau, u)``."""
    u = float(rng.uniform())
    return u * math.exp(phi_tau), u


@dataclass(frozen=True)
class AdaptConfig:
    """Adaptation hyperparameters. ``None`` fields are resolved per run."""

    target_accept: float = 0.8
    kappa: float = 8.0
    lr_tau: Optional[float] = None
    lr_eps: float = 0.05
    beta1_tau: float = 0.0
    beta2_tau: float = 0.5
    beta1_eps: float = 0.9
    beta2_eps: float = 0.999
    oja_scale: float = 8.0
    init_steps: int = 100
    averaging_start: Optional[int] = None
    eps_init: Optional[float] = None
    adapt_mass: bool = True
    max_leapfrog_steps: int = 1024

    def resolved(self, kind: CriterionKind, dim: int, warmup_steps: int) -> "AdaptConfig":
        lr_tau = self.lr_tau
        if lr_tau is None:
            lr_tau = 0.025 if kind is CriterionKind.CHEES else 0.05
        eps_init = self.eps_init if self.eps_init is not None else 1e-2 * dim ** -0.25
        start = self.averaging_start
        if start is None:
            start = max(self.init_steps, warmup_steps // 2)
        return replace(self, lr_tau=lr_tau, eps_init=eps_init, averaging_start=start)


@dataclass(frozen=True)
class AdaptState:
    phi_tau: float
    phi_eps: float
    adam_tau: AdamState
    adam_eps: AdamState
    moments: WelfordState
    proposed_center: np.ndarray
    oja: OjaState
    inv_mass: np.ndarray
    t: int = 0
    sum_phi_tau: float = 0.0
    sum_phi_eps: float = 0.0
    n_averaged: int = 0


@dataclass
class StepInfo:
    t: int
    step_size: float
    tau: float
    leapfrog_steps: int
    accept_prob: np.ndarray
    n_divergent: int
    criterion_value: float
    grad_phi_tau: float
    phi_tau: float
    phi_eps: float
    max_var: float
    proposal: ProposalBatch = field(repr=False)

    @property
    def harmonic_accept(self) -> float:
        alpha = self.accept_prob
        if np.any(alpha <= 0):
            return 0.0
        return float(1.0 / np.mean(1.0 / alpha))


def init_adapt_state(config: AdaptConfig, chains: ChainState,
                     inv_mass: Optional[np.ndarray] = None) -> AdaptState:
    """Fresh state from resolved ``config``; unit variance, uniform direction."""
    if config.lr_tau is None or config.eps_init is None:
        raise ValueError("AdaptConfig must be resolved before use")
    dim = chains.position.shape[1]
    mean = chains.position.mean(axis=0)
    phi0 = math.log(config.eps_init)
    return AdaptState(
        phi_tau=phi0,
        phi_eps=phi0,
        adam_tau=AdamState(config.lr_tau, config.beta1_tau, config.beta2_tau),
        adam_eps=AdamState(config.lr_eps, config.beta1_eps, config.beta2_eps),
        moments=WelfordState(mean.copy(), np.ones(dim), config.kappa),
        proposed_center=mean.copy(),
        oja=OjaState(np.full(dim, 1.0 / math.sqrt(dim))),
        inv_mass=np.ones(dim) if inv_mass is None else np.asarray(inv_mass, dtype=float),
    )


def adaptive_step(state: AdaptState, chains: ChainState, model: TargetModel,
                  rng: np.random.Generator, config: AdaptConfig,
                  kind: CriterionKind) -> tuple[AdaptState, ChainState, StepInfo]:
    """One iteration of adaptive SGA-HMC.

    During the first ``config.init_steps`` iterations the trajectory is a
    single leapfrog step and ``phi_tau`` is held fixed; the step size,
    moments and principal direction adapt throughout.
    """
    t = state.t + 1
    step_size = math.exp(state.phi_eps)
    tau, _ = sample_trajectory(rng, state.phi_tau)
    if t <= config.init_steps:
        tau = step_size
    tau = min(tau, config.max_leapfrog_steps * step_size)
    inv_mass = mass_from_variance(state.moments.var) if config.adapt_mass else state.inv_mass

    prop = hmc_propose(chains, step_size, tau, inv_mass, model, rng)
    alpha = prop.accept_prob
    moments = state.moments
    out = criterion(kind, CriterionInputs(
        current=chains.position,
        proposed=prop.proposed_positions,
        final_momenta=prop.final_momenta,
        accept_prob=alpha,
        tau=max(tau, step_size),
        center=moments.mean,
        proposed_center=state.proposed_center,
        inv_mass=inv_mass,
        direction=state.oja.direction,
    ))

    phi_tau, adam_tau = state.phi_tau, state.adam_tau
    if t > config.init_steps and alpha.sum() > 0:
        adam_tau, inc = adam_step(adam_tau, -out.grad_phi_tau)
        phi_tau += inc
    adam_eps, inc = adam_step(state.adam_eps, step_size_gradient(alpha, config.target_accept))
    phi_eps = state.phi_eps + inc

    next_x = prop.next_state.position
    oja = state.oja
    if kind is CriterionKind.SNAPER:
        oja = oja_update(oja, next_x, moments.mean, oja_rate(t, config.oja_scale))
    proposed_center = center_update(
        state.proposed_center, np.where((alpha > 0)[:, None], prop.proposed_positions, 0.0),
        alpha, t, config.kappa)
    moments = welford_update(moments, next_x, t)

    sums = (state.sum_phi_tau, state.sum_phi_eps, state.n_averaged)
    if t >= config.averaging_start:
        sums = (sums[0] + phi_tau, sums[1] + phi_eps, sums[2] + 1)

    new_state = AdaptState(
        phi_tau=phi_tau, phi_eps=phi_eps, adam_tau=adam_tau, adam_eps=adam_eps,
        moments=moments, proposed_center=proposed_center, oja=oja, inv_mass=inv_mass, t=t,
        sum_phi_tau=sums[0], sum_phi_eps=sums[1], n_averaged=sums[2],
    )
    info = StepInfo(
        t=t, step_size=step_size, tau=tau, leapfrog_steps=prop.leapfrog_steps,
        accept_prob=alpha, n_divergent=int(prop.divergent.sum()),
        criterion_value=out.value, grad_phi_tau=out.grad_phi_tau,
        phi_tau=phi_tau, phi_eps=phi_eps, max_var=float(moments.var.max()), proposal=prop,
    )
    return new_state, prop.next_state, info


@dataclass(frozen=True)
class FrozenHyper:
    """Fixed HMC hyperparameters for the sampling phase."""

    step_size: float
    tau_max: float
    inv_mass: np.ndarray
    direction: np.ndarray
    center: np.ndarray
    phi_tau: float
    phi_eps: float

    @property
    def mean_tau(self) -> float:
        return 0.5 * self.tau_max


def finalize_hyperparameters(state: AdaptState, config: AdaptConfig) -> FrozenHyper:
    """Replace ``phi_tau`` and ``phi_eps`` by their iterate averages.

    The preconditioner, center and direction come from the final statistics.
    """
    if state.n_averaged > 0:
        phi_tau = state.sum_phi_tau / state.n_averaged
        phi_eps = state.sum_phi_eps / state.n_averaged
    else:
        warnings.warn("empty averaging window; using final hyperparameters", RuntimeWarning)
        phi_tau, phi_eps = state.phi_tau, state.phi_eps
    inv_mass = mass_from_variance(state.moments.var) if config.adapt_mass else state.inv_mass
    return FrozenHyper(
        step_size=math.exp(phi_eps), tau_max=math.exp(phi_tau), inv_mass=inv_mass,
        direction=state.oja.direction.copy(), center=state.moments.mean.copy(),
        phi_tau=phi_tau, phi_eps=phi_eps,
    )


def sampling_step(hyper: FrozenHyper, chains: ChainState, model: TargetModel,
                  rng: np.random.Generator,
                  max_leapfrog_steps: int = 1024) -> tuple[ChainState, ProposalBatch, float]:
    """Fixed-hyperparameter HMC step with ``tau ~ Unif(0, tau_max)``."""
    tau, _ = sample_trajectory(rng, hyper.phi_tau)
    tau = min(tau, max_leapfrog_steps * hyper.step_size)
    prop = hmc_propose(chains, hyper.step_size, tau, hyper.inv_mass, model, rng)
    return prop.next_state, prop, tau
