"""Experiment protocols: adaptive runs, fixed-hyperparameter sweeps, comparisons."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from . import diagnostics as diag
from .adaptation import (
    AdaptState,
    FrozenHyper,
    adaptive_step,
    finalize_hyperparameters,
    init_adapt_state,
    sampling_step,
)
from .config import CompareConfig, RunConfig, SweepConfig, build_model, format_run_config
from .hmc import ChainState
from .targets import TargetModel

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("iteration", "step_size", "tau", "leapfrog_steps", "phi_tau", "phi_eps",
                 "max_var", "mean_accept", "harmonic_accept", "criterion", "grad_phi_tau",
                 "n_divergent")


class DivergenceStorm(RuntimeError):
    """Nearly every recent warmup iteration diverged."""


def replicate_seed(base_seed: int, replicate: int) -> int:
    """64-bit seed for replicate ``r``: ``SeedSequence(base, spawn_key=(r,))``."""
    state = np.random.SeedSequence(base_seed, spawn_key=(replicate,)).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed))


@dataclass
class RunResult:
    config: RunConfig
    report: diag.RunReport
    hyper: FrozenHyper
    trace: list
    ledger: diag.GradLedger
    draws: Optional[np.ndarray] = None
    converged: bool = True
    adapt_state: Optional[AdaptState] = field(default=None, repr=False)


def warmup(model: TargetModel, cfg: RunConfig, rng: np.random.Generator,
           ledger: diag.GradLedger, init_inv_mass=None):
    """Run the adaptive phase from the origin; returns state, chains and trace rows."""
    chains = ChainState.from_positions(model, np.zeros((cfg.chains, model.dim)))
    state = init_adapt_state(cfg.adapt, chains, init_inv_mass)
    rows = []
    stormy = []
    for _ in range(cfg.warmup_steps):
        state, chains, info = adaptive_step(state, chains, model, rng, cfg.adapt, cfg.kind)
        ledger.record(info.leapfrog_steps, "warmup")
        rows.append((info.t, info.step_size, info.tau, info.leapfrog_steps, info.phi_tau,
                     info.phi_eps, info.max_var, float(info.accept_prob.mean()),
                     info.harmonic_accept, info.criterion_value, info.grad_phi_tau,
                     info.n_divergent))
        stormy.append(info.n_divergent > cfg.chains // 2)
        window = stormy[-cfg.divergence_window:]
        if len(window) == cfg.divergence_window and np.mean(window) > cfg.divergence_abort:
            raise DivergenceStorm(
                f"{np.mean(window):.0%} of the last {cfg.divergence_window} iterations diverged "
                f"(iteration {info.t}, step size {info.step_size:.3g})")
    return state, chains, rows


def max_split_rhat(draws: np.ndarray) -> float:
    """Largest split R-hat of ``x_d`` over dimensions of ``(T, B, D)`` draws."""
    return max(diag.split_rhat(draws[..., d]) for d in range(draws.shape[-1]))


def run(cfg: RunConfig, model: Optional[TargetModel] = None, keep_draws: bool = True,
        init_inv_mass=None) -> RunResult:
    """Warm up, freeze the iterate-averaged hyperparameters, then sample."""
    cfg.validate()
    model = build_model(cfg.model) if model is None else model
    cfg = cfg.resolved(model.dim)
    rng = make_rng(cfg.seed)
    ledger = diag.GradLedger()
    state, chains, rows = warmup(model, cfg, rng, ledger, init_inv_mass)
    hyper = finalize_hyperparameters(state, cfg.adapt)
    max_steps = cfg.adapt.max_leapfrog_steps
    samp = cfg.sampling

    blocks, alphas, n_div = [], [], 0
    n_collected = 0
    converged = samp.mode == "fixed"
    target = samp.draws if samp.mode == "fixed" else samp.max_draws
    block = samp.draws if samp.mode == "fixed" else samp.check_every
    while n_collected < target:
        size = min(block, target - n_collected)
        out = np.empty((size, cfg.chains, model.dim))
        acc = np.empty((size, cfg.chains))
        for i in range(size):
            chains, prop, _ = sampling_step(hyper, chains, model, rng, max_steps)
            ledger.record(prop.leapfrog_steps, "sampling")
            out[i] = chains.position
            acc[i] = prop.accept_prob
            n_div += int(prop.divergent.sum())
        blocks.append(out)
        alphas.append(acc)
        n_collected += size
        if samp.mode == "rhat":
            blocks = [np.concatenate(blocks)]
            converged = max_split_rhat(blocks[0]) < samp.rhat_threshold
            if converged:
                break
    draws = np.concatenate(blocks)

    report = diag.build_report(
        draws, criterion=cfg.kind.value, center=None, direction=hyper.direction,
        inv_mass=hyper.inv_mass, ledger=ledger, accept_probs=np.concatenate(alphas),
        step_size=hyper.step_size, tau_max=hyper.tau_max, n_divergent=n_div,
        extra={"converged": converged, "model": model.name, "seed": cfg.seed,
               "warmup_steps": cfg.warmup_steps},
    )
    return RunResult(cfg, report, hyper, rows, ledger, draws if keep_draws else None,
                     converged, state)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def write_draws(draws: np.ndarray, path: Path) -> None:
    """Little-endian float64, row-major ``(T, B, D)``, plus a JSON sidecar."""
    path = Path(path)
    np.ascontiguousarray(draws, dtype="<f8").tofile(path)
    sidecar = {"file": path.name, "shape": list(draws.shape), "dtype": "<f8", "order": "C",
               "axes": ["draw", "chain", "dim"]}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def read_draws(path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    return np.fromfile(path, dtype=meta["dtype"]).reshape(meta["shape"])


def write_run_outputs(result: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.ini").write_text(format_run_config(result.config))
    (out / "hyper_trace.csv").write_text(_csv_text(TRACE_COLUMNS, result.trace))
    (out / "report.json").write_text(result.report.to_json())
    (out / "report.csv").write_text(result.report.to_csv())
    if result.draws is not None:
        write_draws(result.draws, out / "draws.f64")
    return out


# ---------------------------------------------------------------- sweeps

SWEEP_COLUMNS = ("mean_leapfrog", "mean_tau", "test_function", "ess", "ess_max", "esjd",
                 "ess_per_grad", "ess_max_per_grad", "esjd_per_grad")


def expected_leapfrog(tau_max: float, step_size: float) -> float:
    """``E[max(1, ceil(u * tau_max / step_size))]`` for ``u ~ Unif(0, 1)``."""
    a = tau_max / step_size
    if a <= 1:
        return 1.0
    k = math.floor(a)
    return (k * (k + 1) / 2 + (a - k) * (k + 1)) / a


def tau_for_mean_leapfrog(mean_leapfrog: float, step_size: float) -> float:
    if mean_leapfrog <= 1:
        return step_size
    hi = 2.0 * mean_leapfrog * step_size
    return brentq(lambda t: expected_leapfrog(t, step_size) - mean_leapfrog, step_size, hi,
                  xtol=1e-12)


def resolve_inv_mass(spec: str, model: TargetModel) -> np.ndarray:
    if spec == "identity":
        return np.ones(model.dim)
    if spec == "reference":
        if model.reference_moments is None:
            raise ValueError(f"model {model.name} has no reference moments")
        var = model.reference_moments[1] ** 2
        return var / var.max()
    values = np.array([float(v) for v in spec.split(",")])
    if values.size != model.dim or np.any(values <= 0):
        raise ValueError(f"mass needs {model.dim} positive values")
    return values / values.max()


def oracle_direction(model: TargetModel, draws: np.ndarray) -> np.ndarray:
    """Top principal axis: from reference scales if known, else from the draws."""
    if model.reference_moments is not None:
        p = np.zeros(model.dim)
        p[int(np.argmax(model.reference_moments[1]))] = 1.0
        return p
    flat = draws.reshape(-1, model.dim)
    _, vecs = np.linalg.eigh(np.cov(flat, rowvar=False))
    return vecs[:, -1]


def fixed_chain(model: TargetModel, hyper: FrozenHyper, n_chains: int, burnin: int,
                n_draws: int, rng: np.random.Generator, init=None):
    """Fixed-hyperparameter HMC; returns draws ``(T, B, D)`` and per-chain grad count."""
    start = np.zeros((n_chains, model.dim)) if init is None else init
    chains = ChainState.from_positions(model, start)
    for _ in range(burnin):
        chains, _, _ = sampling_step(hyper, chains, model, rng)
    draws = np.empty((n_draws, n_chains, model.dim))
    grads = 0
    for i in range(n_draws):
        chains, prop, _ = sampling_step(hyper, chains, model, rng)
        grads += prop.leapfrog_steps
        draws[i] = chains.position
    return draws, grads


def fixed_hyper(model: TargetModel, step_size: float, tau_max: float, inv_mass,
                direction=None, center=None) -> FrozenHyper:
    dim = model.dim
    return FrozenHyper(
        step_size=step_size, tau_max=tau_max, inv_mass=np.asarray(inv_mass, dtype=float),
        direction=np.full(dim, dim ** -0.5) if direction is None else direction,
        center=np.zeros(dim) if center is None else center,
        phi_tau=math.log(tau_max), phi_eps=math.log(step_size))


def sweep_point_metrics(model: TargetModel, draws: np.ndarray, grads: int,
                        direction: np.ndarray) -> dict:
    """ESS, ESS_max and ESJD (raw and per gradient) for the three test functions."""
    t, b, _ = draws.shape
    center = (model.reference_moments[0] if model.reference_moments is not None
              else draws.mean(axis=(0, 1)))
    per_dim = diag.ess_of_squares(draws, center)
    worst = int(np.argmin(per_dim))
    z_dir = draws @ direction - center @ direction
    sq = np.einsum("tbd,tbd->tb", draws, draws) - 2.0 * draws @ center + center @ center
    series = {
        "snaper": z_dir**2,
        "chees": 0.5 * sq,
        "min_sq": (draws[..., worst] - center[worst]) ** 2,
    }
    cost = b * grads
    mean_l = grads / t
    out = {}
    for name, f in series.items():
        e, em, j = diag.ess(f), diag.ess_max(f), diag.esjd_trace(f)
        out[name] = {"ess": e, "ess_max": em, "esjd": j, "ess_per_grad": e / cost,
                     "ess_max_per_grad": em / cost, "esjd_per_grad": j / mean_l,
                     "mean_leapfrog": mean_l}
    out["min_sq"]["dim"] = worst
    return out


def sweep(cfg: SweepConfig, model: Optional[TargetModel] = None) -> list[tuple]:
    """One row per grid point and test function (``SWEEP_COLUMNS``)."""
    cfg.validate()
    model = build_model(cfg.model) if model is None else model
    inv_mass = resolve_inv_mass(cfg.mass, model)
    rng = make_rng(cfg.seed)
    rows = []
    for g in cfg.grid:
        tau_max = 2.0 * g if cfg.grid_kind == "tau" else tau_for_mean_leapfrog(g, cfg.step_size)
        hyper = fixed_hyper(model, cfg.step_size, tau_max, inv_mass)
        draws, grads = fixed_chain(model, hyper, cfg.chains, cfg.burnin, cfg.draws, rng)
        direction = (oracle_direction(model, draws) if cfg.direction == "oracle"
                     else oracle_direction(replace_reference(model), draws))
        metrics = sweep_point_metrics(model, draws, grads, direction)
        for name in ("snaper", "chees", "min_sq"):
            m = metrics[name]
            rows.append((m["mean_leapfrog"], 0.5 * tau_max, name, m["ess"], m["ess_max"],
                         m["esjd"], m["ess_per_grad"], m["ess_max_per_grad"],
                         m["esjd_per_grad"]))
        log.info("sweep point %.4g done (mean L %.3g)", g, grads / cfg.draws)
    return rows


def replace_reference(model: TargetModel) -> TargetModel:
    return replace(model, reference_moments=None)


def sweep_csv(rows) -> str:
    return _csv_text(SWEEP_COLUMNS, rows)


# ---------------------------------------------------------------- comparisons

COMPARE_COLUMNS = ("criterion", "replicate", "seed", "min_ess_per_grad", "mean_tau",
                   "step_size", "mean_leapfrog", "warmup_grads", "sampling_grads",
                   "total_grads", "converged", "max_rhat", "harmonic_accept")
SUMMARY_COLUMNS = ("criterion", "statistic", "percentile", "value")


def compare_row(crit: str, replicate: int, res: RunResult) -> tuple:
    """One COMPARE_COLUMNS row for a finished run."""
    rep = res.report
    return (crit, replicate, res.config.seed, rep.ess_per_grad, rep.mean_tau, rep.step_size,
            rep.mean_leapfrog, rep.warmup_grads, rep.sampling_grads, rep.total_grads,
            res.converged, rep.max_rhat, rep.harmonic_accept)


def compare(cfg: CompareConfig, model: Optional[TargetModel] = None):
    """Replicated runs per criterion; returns (per-replicate rows, summary rows).

    Replicate ``r`` uses ``replicate_seed(run.seed, r)`` for every criterion,
    so it can be rerun on its own with ``run --seed``.
    """
    cfg.validate()
    model = build_model(cfg.run.model) if model is None else model
    base = cfg.run
    if cfg.mode == "short":
        base = replace(base, sampling=replace(base.sampling, mode="rhat"))
    rows = []
    for crit in cfg.criteria:
        for r in range(cfg.replicates):
            seed = replicate_seed(cfg.run.seed, r)
            res = run(replace(base, criterion=str(crit), seed=seed), model, keep_draws=False)
            rows.append(compare_row(str(crit), r, res))
            log.info("%s replicate %d: min ESS/grad %.3g, total grads %d", crit, r,
                     res.report.ess_per_grad, res.report.total_grads)
    stat = "min_ess_per_grad" if cfg.mode == "long" else "total_grads"
    col = COMPARE_COLUMNS.index(stat)
    summary = []
    for crit in cfg.criteria:
        vals = np.array([row[col] for row in rows if row[0] == str(crit)], dtype=float)
        for q in cfg.percentiles:
            summary.append((str(crit), stat, float(q), float(np.percentile(vals, q))))
    return rows, summary


def compare_csv(rows) -> str:
    return _csv_text(COMPARE_COLUMNS, rows)


def summary_csv(rows) -> str:
    return _csv_text(SUMMARY_COLUMNS, rows)
