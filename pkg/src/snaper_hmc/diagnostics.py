"""Effective sample size, its lag-1 upper bound, split R-hat, and run reports.

Scalar traces are arrays of shape ``(T,)`` (one chain) or ``(T, B)``.
Autocovariances are averaged over chains and normalized by the pooled
(within + between) variance, so chains stuck in different places deflate ESS.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

ESS_CAP = 4.0


class DegenerateSeriesError(ValueError):
    """Raised for constant series where correlations are undefined."""


def _as_chains(series) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("expected a (T,) or (T, B) trace")
    if x.shape[0] < 4:
        raise ValueError("need at least 4 draws per chain")
    return x


def _autocov(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased per-chain autocovariances, shape ``(max_lag + 1, B)``, via FFT."""
    n = x.shape[0]
    centered = x - x.mean(axis=0)
    size = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(centered, n=size, axis=0)
    acov = np.fft.irfft(spec * np.conj(spec), n=size, axis=0)[: max_lag + 1]
    return acov / n


def autocorrelation(series, max_lag: Optional[int] = None) -> np.ndarray:
    """Sample autocorrelation ``rho(0..max_lag)`` of a single series."""
    x = _as_chains(series)
    if x.shape[1] != 1:
        raise ValueError("autocorrelation takes a single series")
    n = x.shape[0]
    max_lag = n - 1 if max_lag is None else min(int(max_lag), n - 1)
    acov = _autocov(x, max_lag)[:, 0]
    if not acov[0] > 0:
        raise DegenerateSeriesError("series has zero variance")
    return acov / acov[0]


def _pooled_rho(x: np.ndarray, max_lag: int) -> np.ndarray:
    n = x.shape[0]
    acov = _autocov(x, max_lag)
    within = acov[0].mean() * n / (n - 1)
    between = x.mean(axis=0).var(ddof=1) if x.shape[1] > 1 else 0.0
    var_plus = within * (n - 1) / n + between
    if not var_plus > 0:
        raise DegenerateSeriesError("series has zero variance")
    return 1.0 - (within - acov.mean(axis=1)) / var_plus


def ess(series) -> float:
    """Effective sample size over all chains (Geyer initial positive sequence).

    Returns a value in ``(0, ESS_CAP * T * B]``.
    """
    x = _as_chains(series)
    n, b = x.shape
    rho = _pooled_rho(x, n - 1)
    total = 0.0
    k = 0
    while 2 * k + 1 < n:
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0:
            break
        total += pair
        k += 1
    tau_int = max(-1.0 + 2.0 * total, 1.0 / ESS_CAP)
    return float(n * b / tau_int)


def ess_max(series) -> float:
    """Upper bound ``N (1 - rho1) / (1 + rho1)`` with ``N = T * B``."""
    x = _as_chains(series)
    n, b = x.shape
    rho1 = float(_pooled_rho(x, 1)[1])
    if rho1 <= -1.0:
        warnings.warn(f"lag-1 autocorrelation {rho1:.3g} clamped above -1", RuntimeWarning)
        rho1 = -1.0 + 1e-6
    return float(n * b * (1.0 - rho1) / (1.0 + rho1))


def esjd_trace(series) -> float:
    """Mean squared difference between consecutive draws, averaged over chains."""
    x = _as_chains(series)
    return float(np.mean(np.diff(x, axis=0) ** 2))


def split_rhat(series) -> float:
    """Classic split potential scale reduction over ``2B`` half-chains."""
    x = _as_chains(series)
    n = x.shape[0] // 2
    halves = np.concatenate([x[:n], x[x.shape[0] - n:]], axis=1)
    if halves.shape[1] < 2:
        raise ValueError("need at least one chain of length >= 4")
    within = halves.var(axis=0, ddof=1).mean()
    if not within > 0:
        raise DegenerateSeriesError("zero within-chain variance")
    between = n * halves.mean(axis=0).var(ddof=1)
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def min_ess_over_squares(draws, center) -> tuple[float, int]:
    """Smallest per-dimension ESS of ``(x_d - center_d)**2`` and its dimension."""
    values = ess_of_squares(draws, center)
    d = int(np.argmin(values))
    return float(values[d]), d


def ess_of_squares(draws, center) -> np.ndarray:
    """ESS of ``(x_d - center_d)**2`` for every dimension of ``(T, B, D)`` draws."""
    draws = np.asarray(draws, dtype=float)
    center = np.broadcast_to(np.asarray(center, dtype=float), draws.shape[-1:])
    return np.array([ess((draws[..., d] - center[d]) ** 2) for d in range(draws.shape[-1])])


def harmonic_mean_accept(accept_probs) -> np.ndarray:
    """Per-iteration harmonic mean over chains of ``(T, B)`` acceptance probabilities.

    An iteration with any zero entry has harmonic mean zero.
    """
    alpha = np.atleast_2d(np.asarray(accept_probs, dtype=float))
    out = np.zeros(alpha.shape[0])
    ok = np.all(alpha > 0, axis=1)
    out[ok] = 1.0 / np.mean(1.0 / alpha[ok], axis=1)
    return out


@dataclass
class GradLedger:
    """Per-chain gradient evaluations, split into warmup and sampling phases."""

    warmup: int = 0
    sampling: int = 0
    iterations: list = field(default_factory=list)

    def record(self, n_steps: int, phase: str) -> None:
        if phase == "warmup":
            self.warmup += n_steps
        elif phase == "sampling":
            self.sampling += n_steps
        else:
            raise ValueError(phase)
        self.iterations.append(n_steps)

    @property
    def total(self) -> int:
        return self.warmup + self.sampling

    def balanced(self) -> bool:
        return self.total == sum(self.iterations)


@dataclass
class RunReport:
    criterion: str
    dim: int
    n_chains: int
    n_draws: int
    ess_per_dim: list
    min_ess: float
    argmin_dim: int
    ess_f: dict
    ess_max_f: dict
    esjd_f: dict
    rhat_per_dim: list
    max_rhat: float
    warmup_grads: int
    sampling_grads: int
    ess_per_grad: float
    mean_accept: float
    harmonic_accept: float
    step_size: float
    tau_max: float
    mean_tau: float
    mean_leapfrog: float
    inv_mass: list
    direction: list
    n_divergent: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def total_grads(self) -> int:
        return self.warmup_grads + self.sampling_grads

    def to_json(self) -> str:
        data = asdict(self)
        data["total_grads"] = self.total_grads
        return json.dumps(data, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["dim", "ess_sq", "rhat", "inv_mass", "direction"])
        for d in range(self.dim):
            writer.writerow([d, repr(float(self.ess_per_dim[d])), repr(float(self.rhat_per_dim[d])),
                             repr(float(self.inv_mass[d])), repr(float(self.direction[d]))])
        return buf.getvalue()


def build_report(draws, *, criterion: str, center, direction, inv_mass, ledger: GradLedger,
                 accept_probs, step_size: float, tau_max: float, n_divergent: int = 0,
                 extra: Optional[dict] = None) -> RunReport:
    """Summarize post-warmup ``draws`` of shape ``(T, B, D)``.

    ``center`` is the sample mean of the draws unless given explicitly; ESS of
    both criterion test functions is reported alongside its upper bound.
    """
    draws = np.asarray(draws, dtype=float)
    t, b, dim = draws.shape
    center = draws.mean(axis=(0, 1)) if center is None else np.asarray(center)
    per_dim = ess_of_squares(draws, center)
    rhat = [split_rhat(draws[..., d]) for d in range(dim)]
    direction = np.asarray(direction, dtype=float)
    # expanded forms avoid materializing draws - center
    sq_norm = np.einsum("tbd,tbd->tb", draws, draws) - 2.0 * draws @ center + center @ center
    fvals = {
        "snaper": (draws @ direction - center @ direction) ** 2,
        "chees": 0.5 * sq_norm,
    }
    alpha = np.asarray(accept_probs, dtype=float).reshape(-1, b)
    harmonic = float(np.mean(harmonic_mean_accept(alpha)))
    per_chain = ledger.sampling
    return RunReport(
        criterion=criterion,
        dim=dim,
        n_chains=b,
        n_draws=t,
        ess_per_dim=[float(v) for v in per_dim],
        min_ess=float(per_dim.min()),
        argmin_dim=int(np.argmin(per_dim)),
        ess_f={k: ess(v) for k, v in fvals.items()},
        ess_max_f={k: ess_max(v) for k, v in fvals.items()},
        esjd_f={k: esjd_trace(v) for k, v in fvals.items()},
        rhat_per_dim=rhat,
        max_rhat=max(rhat),
        warmup_grads=ledger.warmup,
        sampling_grads=ledger.sampling,
        ess_per_grad=float(per_dim.min() / (b * per_chain)) if per_chain else 0.0,
        mean_accept=float(alpha.mean()),
        harmonic_accept=harmonic,
        step_size=float(step_size),
        tau_max=float(tau_max),
        mean_tau=0.5 * float(tau_max),
        mean_leapfrog=per_chain / t if t else 0.0,
        inv_mass=[float(v) for v in inv_mass],
        direction=[float(v) for v in direction],
        n_divergent=int(n_divergent),
        extra=dict(extra or {}),
    )
