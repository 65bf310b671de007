"""Batched leapfrog integration and Metropolis-Hastings correction.

The preconditioner is a diagonal inverse mass ``v``: kinetic energy is
``0.5 * sum(v * m**2)`` and momenta are drawn with variance ``1 / v``.
All chains in a batch share the step size and the number of leapfrog steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .targets import TargetModel


@dataclass
class ChainState:
    """Positions of B chains with cached potential energy and its gradient."""

    position: np.ndarray
    potential: np.ndarray
    grad_potential: np.ndarray

    @classmethod
    def from_positions(cls, model: TargetModel, positions) -> "ChainState":
        x = np.array(positions, dtype=float, ndmin=2)
        logp, grad = model.value_and_grad(x)
        return cls(x, -logp, -grad)

    @property
    def n_chains(self) -> int:
        return self.position.shape[0]


@dataclass
class PhasePoint:
    position: np.ndarray
    momentum: np.ndarray
    potential: np.ndarray
    grad_potential: np.ndarray


@dataclass
class ProposalBatch:
    proposed_positions: np.ndarray
    final_momenta: np.ndarray
    accept_prob: np.ndarray
    accepted: np.ndarray
    divergent: np.ndarray
    next_state: ChainState
    leapfrog_steps: int

    @property
    def next_positions(self) -> np.ndarray:
        return self.next_state.position


def kinetic_energy(momentum, inv_mass) -> np.ndarray:
    return 0.5 * np.sum(inv_mass * momentum * momentum, axis=-1)


def sample_momentum(rng: np.random.Generator, inv_mass, n_chains: int) -> np.ndarray:
    inv_mass = np.asarray(inv_mass, dtype=float)
    return rng.standard_normal((n_chains, inv_mass.size)) / np.sqrt(inv_mass)


def leapfrog(start: PhasePoint, step_size: float, n_steps: int, inv_mass,
             model: TargetModel) -> PhasePoint:
    """Run ``n_steps`` leapfrog steps; interior half kicks are fused.

    Non-finite values propagate into the returned point rather than raising.
    """
    if not step_size > 0:
        raise ValueError("step_size must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x = start.position.copy()
    m = start.momentum - 0.5 * step_size * start.grad_potential
    drift = step_size * np.asarray(inv_mass, dtype=float)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for i in range(n_steps):
            x += drift * m
            logp, grad = model.value_and_grad(x)
            kick = step_size if i < n_steps - 1 else 0.5 * step_size
            m += kick * grad
    return PhasePoint(x, m, -logp, -grad)


def num_leapfrog_steps(tau: float, step_size: float) -> int:
    """``max(1, ceil(tau / step_size))``."""
    if not tau > 0:
        return 1
    return max(1, math.ceil(tau / step_size))


def hmc_propose(state: ChainState, step_size: float, tau: float, inv_mass,
                model: TargetModel, rng: np.random.Generator) -> ProposalBatch:
    """One HMC transition for every chain in ``state``.

    Draw order from ``rng`` is fixed: momenta ``(B, D)`` then one uniform per
    chain. Proposals with non-finite energy are rejected with ``alpha = 0``.
    """
    inv_mass = np.asarray(inv_mass, dtype=float)
    n_steps = num_leapfrog_steps(tau, step_size)
    m0 = sample_momentum(rng, inv_mass, state.n_chains)
    start = PhasePoint(state.position, m0, state.potential, state.grad_potential)
    end = leapfrog(start, step_size, n_steps, inv_mass, model)
    with np.errstate(over="ignore", invalid="ignore"):
        h0 = state.potential + kinetic_energy(m0, inv_mass)
        h1 = end.potential + kinetic_energy(end.momentum, inv_mass)
        delta = h0 - h1
    divergent = ~np.isfinite(delta) | ~np.all(np.isfinite(end.position), axis=-1)
    divergent |= ~np.all(np.isfinite(end.grad_potential), axis=-1)
    log_alpha = np.where(divergent, -np.inf, np.minimum(delta, 0.0))
    alpha = np.exp(log_alpha)
    uniforms = rng.uniform(size=state.n_chains)
    accepted = uniforms < alpha
    sel = accepted[:, None]
    next_state = ChainState(
        np.where(sel, end.position, state.position),
        np.where(accepted, end.potential, state.potential),
        np.where(sel, end.grad_potential, state.grad_potential),
    )
    return ProposalBatch(
        proposed_positions=end.position,
        final_momenta=end.momentum,
        accept_prob=alpha,
        accepted=accepted,
        divergent=divergent,
        next_state=next_state,
        leapfrog_steps=n_steps,
    )
