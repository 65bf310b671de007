"""Differentiable target densities used by the sampler and the benchmarks.

Every model evaluates batches: positions of shape ``(..., D)`` map to
log-densities of shape ``(...)`` and gradients of shape ``(..., D)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

ValueAndGrad = Callable[[np.ndarray], "tuple[np.ndarray, np.ndarray]"]


class DatasetParseError(ValueError):
    """Raised when a CSV dataset row cannot be parsed."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class TargetModel:
    """An unnormalized log-density on R^D with its analytic gradient.

    ``value_and_grad`` is the fused evaluation; the harness counts one
    gradient evaluation per fused call.
    """

    dim: int
    value_and_grad: ValueAndGrad
    name: str = "model"
    reference_moments: Optional[tuple[np.ndarray, np.ndarray]] = None

    def log_density(self, x) -> np.ndarray:
        return self.value_and_grad(np.asarray(x, dtype=float))[0]

    def gradient(self, x) -> np.ndarray:
        return self.value_and_grad(np.asarray(x, dtype=float))[1]


@dataclass(frozen=True)
class Softplus:
    """Softplus bijector mapping R onto (0, inf)."""

    def forward(self, y):
        return np.logaddexp(0.0, y)

    def inverse(self, x):
        x = np.asarray(x, dtype=float)
        # log(exp(x) - 1) written to stay accurate for small and large x
        return x + np.log(-np.expm1(-x))

    def forward_derivative(self, y):
        return _sigmoid(y)

    def log_det_jacobian(self, y):
        return -np.logaddexp(0.0, -np.asarray(y, dtype=float))

    def log_det_jacobian_derivative(self, y):
        return _sigmoid(-np.asarray(y, dtype=float))


Bijector = Softplus


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    column_means: np.ndarray
    column_stds: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def standardized(self) -> "Dataset":
        """Return a copy with zero-mean, unit-std columns (population convention).

        Constant columns are mapped to zero.
        """
        means = self.features.mean(axis=0)
        stds = self.features.std(axis=0)
        safe = np.where(stds > 0, stds, 1.0)
        feats = (self.features - means) / safe
        feats[:, stds == 0] = 0.0
        return Dataset(feats, self.labels.copy(), means, stds, dict(self.metadata))


def _sigmoid(a):
    a = np.asarray(a, dtype=float)
    return np.exp(-np.logaddexp(0.0, -a))


def _log_sigmoid(a):
    return -np.logaddexp(0.0, -a)


def _positive_finite(values, what: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{what} must be a nonempty 1-d vector")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError(f"{what} must be positive and finite, got {arr}")
    return arr


def make_diag_gaussian(scales, name: str = "diag_gaussian") -> TargetModel:
    """Zero-mean Gaussian with diagonal covariance ``diag(scales**2)``."""
    scales = _positive_finite(scales, "scales")
    inv_var = 1.0 / scales**2

    def value_and_grad(x):
        x = np.asarray(x, dtype=float)
        grad = x * -inv_var
        return 0.5 * np.einsum("...d,...d->...", x, grad), grad

    return TargetModel(
        dim=scales.size,
        value_and_grad=value_and_grad,
        name=name,
        reference_moments=(np.zeros(scales.size), scales.copy()),
    )


def make_spiked_gaussian(
    sigma_big: float = 1.0, sigma_small: float = 0.1, n_small: int = 300
) -> TargetModel:
    """One wide direction followed by ``n_small`` repeated narrow ones."""
    scales = np.concatenate([[sigma_big], np.full(n_small, sigma_small)])
    return make_diag_gaussian(scales, name="spiked_gaussian")


def make_aniso_gaussian(dim: int = 10, condition: float = 10.0) -> TargetModel:
    """Scales log-spaced from ``1/condition`` up to 1."""
    scales = np.logspace(-np.log10(condition), 0.0, dim)
    return make_diag_gaussian(scales, name="aniso_gaussian")


def make_logistic_regression(data: Dataset, prior_scale: float = 1.0) -> TargetModel:
    """Bayesian logistic regression with an isotropic Gaussian prior.

    ``prior_scale`` may be ``inf`` for a flat prior.
    """
    feats = np.asarray(data.features, dtype=float)
    labels = np.asarray(data.labels)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise ValueError("dataset must contain at least one row")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be 0 or 1")
    if not prior_scale > 0:
        raise ValueError("prior_scale must be positive")
    signs = 2.0 * labels.astype(float) - 1.0
    signed = feats * signs[:, None]
    prior_prec = 0.0 if np.isinf(prior_scale) else 1.0 / prior_scale**2

    def value_and_grad(theta):
        theta = np.asarray(theta, dtype=float)
        margins = theta @ signed.T
        logp = np.sum(_log_sigmoid(margins), axis=-1)
        logp = logp - 0.5 * prior_prec * np.sum(theta * theta, axis=-1)
        grad = _sigmoid(-margins) @ signed - prior_prec * theta
        return logp, grad

    return TargetModel(dim=feats.shape[1], value_and_grad=value_and_grad, name="logistic")


def synthetic_logistic_dataset(
    n: int = 500, n_features: int = 10, seed: int = 0, coef_scale: float = 1.0
) -> Dataset:
    """Standard-normal features; labels drawn from the model at a fixed coefficient."""
    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((n, n_features))
    coef = coef_scale * rng.standard_normal(n_features) / np.sqrt(n_features)
    labels = (rng.uniform(size=n) < _sigmoid(feats @ coef)).astype(int)
    meta = {"n": n, "n_features": n_features, "seed": seed, "coef_scale": coef_scale}
    return Dataset(
        feats, labels, np.zeros(n_features), np.ones(n_features), {**meta, "coef": coef}
    )


def unconstrain(model: TargetModel, transforms: Sequence[Optional[Bijector]]) -> TargetModel:
    """Reparameterize constrained coordinates onto the real line.

    ``transforms[d]`` maps the unconstrained ``y_d`` to the model's ``x_d``;
    ``None`` leaves a coordinate alone. The returned density includes the
    log-Jacobian correction.
    """
    if len(transforms) != model.dim:
        raise ValueError(f"need {model.dim} transforms, got {len(transforms)}")
    active = [(d, t) for d, t in enumerate(transforms) if t is not None]
    if not active:
        return model

    def value_and_grad(y):
        y = np.asarray(y, dtype=float)
        x = y.copy()
        log_det = np.zeros(y.shape[:-1])
        for d, t in active:
            x[..., d] = t.forward(y[..., d])
            log_det = log_det + t.log_det_jacobian(y[..., d])
        logp, grad_x = model.value_and_grad(x)
        grad = grad_x.copy()
        for d, t in active:
            grad[..., d] = grad_x[..., d] * t.forward_derivative(y[..., d])
            grad[..., d] += t.log_det_jacobian_derivative(y[..., d])
        return logp + log_det, grad

    return TargetModel(
        dim=model.dim, value_and_grad=value_and_grad, name=f"unconstrained_{model.name}"
    )


def make_normal_scale(n: int = 50, true_loc: float = 1.0, true_scale: float = 2.0,
                      seed: int = 0) -> TargetModel:
    """Posterior over (loc, scale) of normal data; scale is softplus-unconstrained.

    Priors: loc ~ N(0, 10^2), scale ~ HalfNormal(10).
    """
    rng = np.random.default_rng(seed)
    data = true_loc + true_scale * rng.standard_normal(n)
    s1, s2 = data.sum(), np.sum(data**2)

    def constrained(x):
        loc, scale = x[..., 0], x[..., 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            ss = s2 - 2.0 * loc * s1 + n * loc**2
            logp = -n * np.log(scale) - 0.5 * ss / scale**2
            logp = logp - 0.5 * loc**2 / 100.0 - 0.5 * scale**2 / 100.0
            g_loc = (s1 - n * loc) / scale**2 - loc / 100.0
            g_scale = -n / scale + ss / scale**3 - scale / 100.0
        return logp, np.stack([g_loc, g_scale], axis=-1)

    base = TargetModel(dim=2, value_and_grad=constrained, name="normal_scale")
    return unconstrain(base, [None, Softplus()])


def load_csv_dataset(path, standardize: bool = False) -> Dataset:
    """Read a numeric CSV whose last column is a 0/1 label.

    A first row with no numeric fields is taken as a header.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [(i + 1, row) for i, row in enumerate(csv.reader(fh)) if row]
    if rows and not any(_is_number(v) for v in rows[0][1]):
        rows = rows[1:]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    width = len(rows[0][1])
    if width < 2:
        raise DatasetParseError(rows[0][0], "need at least one feature and a label")
    values = []
    for line, row in rows:
        if len(row) != width:
            raise DatasetParseError(line, f"expected {width} fields, got {len(row)}")
        try:
            values.append([float(v) for v in row])
        except ValueError as exc:
            raise DatasetParseError(line, str(exc)) from None
    arr = np.asarray(values)
    labels = arr[:, -1]
    if not np.all(np.isin(labels, (0.0, 1.0))):
        bad = rows[int(np.flatnonzero(~np.isin(labels, (0.0, 1.0)))[0])][0]
        raise DatasetParseError(bad, "label must be 0 or 1")
    feats = arr[:, :-1]
    ds = Dataset(
        feats, labels.astype(int), np.zeros(feats.shape[1]), np.ones(feats.shape[1]),
        {"path": str(path)},
    )
    return ds.standardized() if standardize else ds


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True
