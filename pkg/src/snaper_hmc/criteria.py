"""Trajectory-length criteria and their pathwise derivative.

All three criteria are acceptance-weighted jump statistics of a scalar test
function of the centered state:

* ``CHEES``:  f(z) = 0.5 * ||z||^2, value = ESJD_f
* ``CHEESR``: same f, value = ESJD_f / tau
* ``SNAPER``: f(z) = (z . p)^2 for a unit vector p, value = ESJD_f / tau
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np


class CriterionKind(enum.Enum):
    CHEES = "chees"
    CHEESR = "cheesr"
    SNAPER = "snaper"

    @classmethod
    def parse(cls, value) -> "CriterionKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown criterion {value!r} (expected one of {names})") from None

    @property
    def is_rate(self) -> bool:
        return self is not CriterionKind.CHEES


@dataclass
class CriterionInputs:
    current: np.ndarray
    proposed: np.ndarray
    final_momenta: np.ndarray
    accept_prob: np.ndarray
    tau: float
    center: np.ndarray
    proposed_center: np.ndarray
    inv_mass: np.ndarray
    direction: Optional[np.ndarray] = None


@dataclass(frozen=True)
class CriterionOutput:
    value: float
    grad_phi_tau: float


def f_chees(z):
    z = np.asarray(z, dtype=float)
    return 0.5 * np.sum(z * z, axis=-1), z


def f_snaper(z, p):
    z = np.asarray(z, dtype=float)
    proj = z @ np.asarray(p, dtype=float)
    return proj**2, 2.0 * proj[..., None] * p


def jump_function(kind: CriterionKind, z, p=None):
    """Value and gradient of the criterion's test function at ``z``."""
    if kind is CriterionKind.SNAPER:
        if p is None:
            raise ValueError("SNAPER needs a principal direction")
        return f_snaper(z, p)
    return f_chees(z)


def _jumps(kind: CriterionKind, inputs: CriterionInputs):
    alpha = np.asarray(inputs.accept_prob, dtype=float)
    # divergent proposals carry alpha == 0 and may hold non-finite values
    ok = alpha > 0
    proposed = np.where(ok[:, None], inputs.proposed, inputs.current)
    f_cur, _ = jump_function(kind, inputs.current - inputs.center, inputs.direction)
    f_new, grad_new = jump_function(kind, proposed - inputs.proposed_center, inputs.direction)
    return alpha, ok, f_new - f_cur, grad_new


def esjd(kind: CriterionKind, inputs: CriterionInputs) -> float:
    """Acceptance-weighted mean squared jump of the test function."""
    alpha, _, delta, _ = _jumps(CriterionKind.parse(kind), inputs)
    total = alpha.sum()
    if not total > 0:
        return 0.0
    return float(np.sum(alpha * delta**2) / total)


def criterion(kind: CriterionKind, inputs: CriterionInputs) -> CriterionOutput:
    """Criterion value and its derivative with respect to ``phi_tau = log tau_max``.

    The acceptance probabilities are treated as constant weights. The
    derivative of the proposal with respect to ``tau`` is the end-point
    velocity ``v * m'``; ``tau = u * exp(phi_tau)`` gives ``dtau/dphi = tau``.
    """
    kind = CriterionKind.parse(kind)
    alpha, ok, delta, grad_new = _jumps(kind, inputs)
    total = alpha.sum()
    if not total > 0:
        return CriterionOutput(0.0, 0.0)
    tau = float(inputs.tau)
    velocity = np.where(ok[:, None], inputs.inv_mass * inputs.final_momenta, 0.0)
    jump = float(np.sum(alpha * delta**2) / total)
    directional = np.sum(grad_new * velocity, axis=-1)
    djump_dtau = float(np.sum(alpha * 2.0 * delta * directional) / total)
    if kind.is_rate:
        return CriterionOutput(jump / tau, djump_dtau - jump / tau)
    return CriterionOutput(jump, tau * djump_dtau)
