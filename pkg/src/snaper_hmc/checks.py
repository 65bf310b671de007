"""Fast self-test bundle behind ``snaper-hmc check``.

Each check takes its implementation as an argument so a deliberately broken
variant can be swapped in to confirm the check catches it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import diagnostics as diag
from .adaptation import OjaState, oja_rate, oja_update
from .criteria import CriterionInputs, CriterionKind, criterion
from .hmc import ChainState, PhasePoint, hmc_propose, leapfrog
from .targets import (
    make_aniso_gaussian,
    make_diag_gaussian,
    make_logistic_regression,
    make_normal_scale,
    synthetic_logistic_dataset,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    observed: float
    expected: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.name}: observed {self.observed:.6g}, "
                f"expected {self.expected} ({self.seconds:.2f}s)")


def _rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(b) + np.abs(a))))


def check_model_gradients(tol: float = 1e-5) -> CheckResult:
    rng = np.random.default_rng(0)
    models = [
        make_diag_gaussian([0.5, 1.0, 2.0]),
        make_logistic_regression(synthetic_logistic_dataset(50, 4, seed=1), 2.0),
        make_normal_scale(n=20),
    ]
    worst = 0.0
    for model in models:
        for _ in range(5):
            x = rng.standard_normal(model.dim)
            h = 1e-5 * (1.0 + np.abs(x))
            fd = np.array([
                (model.log_density(x + h[d] * e) - model.log_density(x - h[d] * e)) / (2 * h[d])
                for d, e in enumerate(np.eye(model.dim))
            ])
            worst = max(worst, _rel_err(model.gradient(x), fd))
    return CheckResult("model gradients vs central differences", worst <= tol, worst,
                       f"<= {tol:g}")


def check_reversibility(integrator=leapfrog, tol: float = 1e-10) -> CheckResult:
    model = make_aniso_gaussian(5, 4.0)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, 5)) * 0.5
    m = rng.standard_normal((4, 5))
    inv_mass = np.linspace(0.3, 1.0, 5)
    state = ChainState.from_positions(model, x)
    start = PhasePoint(x, m, state.potential, state.grad_potential)
    end = integrator(start, 0.1, 17, inv_mass, model)
    back = integrator(PhasePoint(end.position, -end.momentum, end.potential, end.grad_potential),
                      0.1, 17, inv_mass, model)
    err = float(max(np.max(np.abs(back.position - x)), np.max(np.abs(-back.momentum - m))))
    return CheckResult("leapfrog reversibility", err <= tol, err, f"<= {tol:g}")


def check_criterion_gradient(criterion_fn=criterion, tol: float = 1e-3) -> CheckResult:
    """Pathwise tau-derivative against a small extra drift along the end velocity."""
    rng = np.random.default_rng(2)
    dim, b, delta = 6, 16, 1e-5
    worst = 0.0
    for kind in CriterionKind:
        for _ in range(5):
            inputs = random_criterion_inputs(rng, dim, b)
            base = criterion_fn(kind, inputs)
            # finite difference in tau, realized by extending the end point
            tau = inputs.tau
            shifted = _shift(inputs, delta)
            bumped = criterion_fn(kind, shifted)
            if kind.is_rate:
                fd = (bumped.value * (tau + delta) - base.value * tau) / delta
                analytic = (base.grad_phi_tau + base.value) * 1.0
            else:
                fd = (bumped.value - base.value) / delta * tau
                analytic = base.grad_phi_tau
            worst = max(worst, abs(fd - analytic) / max(abs(analytic), 1e-12))
    return CheckResult("criterion tau-gradient vs extra drift", worst <= tol, worst, f"<= {tol:g}")


def random_criterion_inputs(rng, dim: int, b: int) -> CriterionInputs:
    p = rng.standard_normal(dim)
    return CriterionInputs(
        current=rng.standard_normal((b, dim)),
        proposed=rng.standard_normal((b, dim)),
        final_momenta=rng.standard_normal((b, dim)),
        accept_prob=rng.uniform(0.1, 1.0, size=b),
        tau=float(rng.uniform(0.5, 2.0)),
        center=0.1 * rng.standard_normal(dim),
        proposed_center=0.1 * rng.standard_normal(dim),
        inv_mass=rng.uniform(0.2, 1.0, size=dim),
        direction=p / np.linalg.norm(p),
    )


def _shift(inputs: CriterionInputs, delta: float) -> CriterionInputs:
    velocity = inputs.inv_mass * inputs.final_momenta
    return CriterionInputs(
        current=inputs.current, proposed=inputs.proposed + delta * velocity,
        final_momenta=inputs.final_momenta, accept_prob=inputs.accept_prob,
        tau=inputs.tau + delta, center=inputs.center, proposed_center=inputs.proposed_center,
        inv_mass=inputs.inv_mass, direction=inputs.direction,
    )


def check_exactness(n_draws: int = 2000) -> CheckResult:
    """Fixed HMC on a 1-d standard normal: mean within 4 standard errors of 0."""
    model = make_diag_gaussian([1.0])
    rng = np.random.default_rng(3)
    chains = ChainState.from_positions(model, np.zeros((32, 1)))
    draws = np.empty((n_draws, 32))
    for i in range(n_draws):
        prop = hmc_propose(chains, 0.2, 1.6, np.ones(1), model, rng)
        chains = prop.next_state
        draws[i] = chains.position[:, 0]
    se = np.sqrt(1.0 / diag.ess(draws))
    z = abs(draws.mean()) / se
    var_z = abs(draws.var() - 1.0) / np.sqrt(2.0 / diag.ess(draws**2))
    worst = max(z, var_z)
    return CheckResult("HMC exactness (1-d normal moments)", worst < 4.0, worst, "< 4 SE")


def check_ess_oracle() -> CheckResult:
    rng = np.random.default_rng(4)
    n, phi = 20000, 0.9
    x = np.empty(n)
    x[0] = rng.standard_normal()
    noise = rng.standard_normal(n) * np.sqrt(1 - phi**2)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + noise[t]
    ratio = diag.ess(x) / n / ((1 - phi) / (1 + phi))
    return CheckResult("AR(1) ESS oracle", abs(ratio - 1) < 0.25, ratio, "within 25% of 1")


def check_oja() -> CheckResult:
    rng = np.random.default_rng(5)
    scales = np.array([3.0, 1.0, 1.0, 1.0])
    state = OjaState(np.full(4, 0.5))
    for t in range(1, 501):
        batch = rng.standard_normal((64, 4)) * scales
        state = oja_update(state, batch, np.zeros(4), oja_rate(t))
    overlap = abs(state.direction[0])
    return CheckResult("Oja top eigenvector", overlap > 0.99, overlap, "> 0.99")


ALL_CHECKS = (check_model_gradients, check_reversibility, check_criterion_gradient,
              check_exactness, check_ess_oracle, check_oja)


def run_checks(checks=ALL_CHECKS) -> list[CheckResult]:
    results = []
    for fn in checks:
        t0 = time.perf_counter()
        res = fn()
        res.seconds = time.perf_counter() - t0
        results.append(res)
    return results
