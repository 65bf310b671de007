"""Run, sweep and compare configurations and their text format.

Config files are INI-style key/value text read with :mod:`configparser`::

    # comments start with '#' or ';'
    criterion = snaper          # keys before any header belong to [run]
    chains = 64

    [model]
    name = spiked_gaussian
    sigma_small = 0.1

    adapt.kappa = 8             # a dotted key names its section explicitly

Sections: ``run``, ``model``, ``sampling``, ``adapt``, ``sweep``, ``compare``.
Unknown sections or keys are errors. Lists are comma separated; booleans
accept true/false/yes/no/1/0; ``none`` clears an optional field.
"""

from __future__ import annotations

import configparser
import dataclasses
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .adaptation import AdaptConfig
from .criteria import CriterionKind
from . import targets


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""


@dataclass(frozen=True)
class ModelSpec:
    name: str = "aniso_gaussian"
    dim: int = 10
    condition: float = 10.0
    scales: Optional[tuple] = None
    sigma_big: float = 1.0
    sigma_small: float = 0.1
    n_small: int = 300
    n_data: int = 500
    n_features: int = 10
    data_seed: int = 0
    coef_scale: float = 1.0
    prior_scale: float = 1.0
    csv_path: Optional[str] = None
    standardize: bool = True


MODEL_NAMES = ("diag_gaussian", "aniso_gaussian", "spiked_gaussian", "logistic",
               "logistic_csv", "normal_scale")


def build_model(spec: ModelSpec) -> targets.TargetModel:
    if spec.name == "diag_gaussian":
        scales = spec.scales if spec.scales is not None else np.ones(spec.dim)
        return targets.make_diag_gaussian(scales)
    if spec.name == "aniso_gaussian":
        return targets.make_aniso_gaussian(spec.dim, spec.condition)
    if spec.name == "spiked_gaussian":
        return targets.make_spiked_gaussian(spec.sigma_big, spec.sigma_small, spec.n_small)
    if spec.name == "logistic":
        data = targets.synthetic_logistic_dataset(
            spec.n_data, spec.n_features, spec.data_seed, spec.coef_scale)
        return targets.make_logistic_regression(data, spec.prior_scale)
    if spec.name == "logistic_csv":
        if not spec.csv_path:
            raise ConfigError("model.csv_path: required for logistic_csv")
        data = targets.load_csv_dataset(spec.csv_path, spec.standardize)
        return targets.make_logistic_regression(data, spec.prior_scale)
    if spec.name == "normal_scale":
        return targets.make_normal_scale(n=spec.n_data, seed=spec.data_seed)
    raise ConfigError(f"model.name: unknown model {spec.name!r}")


@dataclass(frozen=True)
class SamplingConfig:
    mode: str = "fixed"
    draws: int = 1000
    rhat_threshold: float = 1.01
    check_every: int = 100
    max_draws: int = 20000


@dataclass(frozen=True)
class RunConfig:
    criterion: str = "snaper"
    chains: int = 64
    warmup_steps: int = 1000
    seed: int = 0
    model: ModelSpec = field(default_factory=ModelSpec)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    divergence_window: int = 200
    divergence_abort: float = 0.95

    @property
    def kind(self) -> CriterionKind:
        return CriterionKind.parse(self.criterion)

    def resolved(self, dim: int) -> "RunConfig":
        """Materialize every per-run default (learning rate, window, initial step)."""
        return replace(self, adapt=self.adapt.resolved(self.kind, dim, self.warmup_steps))

    def validate(self) -> "RunConfig":
        try:
            self.kind
        except ValueError as exc:
            raise ConfigError(f"run.criterion: {exc}") from None
        _check(self.chains >= 2, "run.chains", "must be >= 2")
        _check(self.warmup_steps >= self.adapt.init_steps, "run.warmup_steps",
               f"must be >= adapt.init_steps ({self.adapt.init_steps})")
        _check(self.seed >= 0, "run.seed", "must be nonnegative")
        _check(self.sampling.mode in ("fixed", "rhat"), "sampling.mode", "must be fixed or rhat")
        _check(self.sampling.draws >= 4, "sampling.draws", "must be >= 4")
        _check(self.sampling.check_every >= 4, "sampling.check_every", "must be >= 4")
        _check(self.sampling.max_draws >= self.sampling.check_every, "sampling.max_draws",
               "must be >= sampling.check_every")
        _check(self.model.name in MODEL_NAMES, "model.name",
               f"must be one of {', '.join(MODEL_NAMES)}")
        a = self.adapt
        _check(0 < a.target_accept < 1, "adapt.target_accept", "must be in (0, 1)")
        _check(a.kappa > 0, "adapt.kappa", "must be positive")
        _check(a.init_steps >= 0, "adapt.init_steps", "must be nonnegative")
        _check(a.max_leapfrog_steps >= 1, "adapt.max_leapfrog_steps", "must be >= 1")
        if a.averaging_start is not None:
            _check(a.init_steps <= a.averaging_start <= self.warmup_steps, "adapt.averaging_start",
                   "must lie between adapt.init_steps and run.warmup_steps")
        if a.eps_init is not None:
            _check(a.eps_init > 0, "adapt.eps_init", "must be positive")
        return self


@dataclass(frozen=True)
class SweepConfig:
    grid: tuple = (1.0, 2.0, 4.0, 8.0)
    grid_kind: str = "leapfrog"
    step_size: float = 0.1
    mass: str = "identity"
    direction: str = "oracle"
    chains: int = 64
    draws: int = 1000
    burnin: int = 200
    seed: int = 0
    model: ModelSpec = field(default_factory=ModelSpec)

    def validate(self) -> "SweepConfig":
        grid = np.asarray(self.grid, dtype=float)
        _check(grid.size > 0, "sweep.grid", "must be nonempty")
        _check(bool(np.all(np.diff(grid) > 0)), "sweep.grid", "must be strictly increasing")
        _check(bool(np.all(grid > 0)), "sweep.grid", "must be positive")
        _check(self.grid_kind in ("leapfrog", "tau"), "sweep.grid_kind", "must be leapfrog or tau")
        if self.grid_kind == "leapfrog":
            _check(bool(np.all(grid >= 1)), "sweep.grid", "mean leapfrog values must be >= 1")
        _check(self.step_size > 0, "sweep.step_size", "must be positive")
        _check(self.direction in ("oracle", "sample"), "sweep.direction",
               "must be oracle or sample")
        _check(self.chains >= 2, "sweep.chains", "must be >= 2")
        _check(self.draws >= 4, "sweep.draws", "must be >= 4")
        _check(self.model.name in MODEL_NAMES, "model.name",
               f"must be one of {', '.join(MODEL_NAMES)}")
        return self


@dataclass(frozen=True)
class CompareConfig:
    criteria: tuple = ("snaper", "cheesr")
    replicates: int = 20
    mode: str = "long"
    percentiles: tuple = (10.0, 50.0, 90.0)
    run: RunConfig = field(default_factory=RunConfig)

    def validate(self) -> "CompareConfig":
        _check(len(self.criteria) >= 2, "compare.criteria", "need at least two criteria")
        for c in self.criteria:
            try:
                CriterionKind.parse(c)
            except ValueError as exc:
                raise ConfigError(f"compare.criteria: {exc}") from None
        _check(self.replicates >= 1, "compare.replicates", "must be >= 1")
        _check(self.mode in ("long", "short"), "compare.mode", "must be long or short")
        self.run.validate()
        return self


def _check(ok: bool, path: str, message: str) -> None:
    if not ok:
        raise ConfigError(f"{path}: {message}")


# ---------------------------------------------------------------- parsing

def _parse_value(text: str, hint, path: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union and type(None) in args:
        if text.strip().lower() in ("none", ""):
            return None
        (inner,) = [a for a in args if a is not type(None)]
        return _parse_value(text, inner, path)
    text = text.strip()
    try:
        if hint is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if hint is str:
            return text
        if hint is tuple or origin is tuple:
            items = [t.strip() for t in text.split(",") if t.strip()]
            try:
                return tuple(float(t) for t in items)
            except ValueError:
                return tuple(items)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    raise ConfigError(f"{path}: unsupported field type {hint!r}")


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    return str(value)


def _read_sections(text: str, source: str) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"), default_section="__unused__",
        strict=False)
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    sections: dict[str, dict[str, str]] = {}
    for name in parser.sections():
        for key, value in parser.items(name):
            section, _, leaf = key.rpartition(".")
            section = section or name
            sections.setdefault(section, {})[leaf] = value
    return sections


def _fill(cls, values: dict[str, str], section: str, skip=()):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)} - set(skip)
    kwargs = {}
    for key, text in values.items():
        if key not in names or dataclasses.is_dataclass(hints.get(key)):
            raise ConfigError(f"{section}.{key}: unknown key")
        kwargs[key] = _parse_value(text, hints[key], f"{section}.{key}")
    return cls(**kwargs)


_SECTIONS = {"run", "model", "sampling", "adapt", "sweep", "compare"}


def _split(text: str, source: str, allowed: set[str]) -> dict[str, dict[str, str]]:
    sections = _read_sections(text, source)
    for name in sections:
        if name not in allowed:
            raise ConfigError(f"{name}: unknown section (allowed: {', '.join(sorted(allowed))})")
    return sections


def _run_from_sections(sections) -> RunConfig:
    base = _fill(RunConfig, sections.get("run", {}), "run", skip=("model", "sampling", "adapt"))
    return replace(
        base,
        model=_fill(ModelSpec, sections.get("model", {}), "model"),
        sampling=_fill(SamplingConfig, sections.get("sampling", {}), "sampling"),
        adapt=_fill(AdaptConfig, sections.get("adapt", {}), "adapt"),
    )


def parse_run_config(text: str, source: str = "<config>") -> RunConfig:
    sections = _split(text, source, {"run", "model", "sampling", "adapt"})
    return _run_from_sections(sections).validate()


def parse_sweep_config(text: str, source: str = "<config>") -> SweepConfig:
    sections = _split(text, source, {"run", "model", "sweep"})
    if sections.get("run"):
        key = next(iter(sections["run"]))
        raise ConfigError(f"run.{key}: sweep configs take keys under [sweep]")
    cfg = _fill(SweepConfig, sections.get("sweep", {}), "sweep", skip=("model",))
    return replace(cfg, model=_fill(ModelSpec, sections.get("model", {}), "model")).validate()


def parse_compare_config(text: str, source: str = "<config>") -> CompareConfig:
    sections = _split(text, source, {"run", "model", "sampling", "adapt", "compare"})
    cfg = _fill(CompareConfig, sections.get("compare", {}), "compare", skip=("run",))
    return replace(cfg, run=_run_from_sections(sections)).validate()


def load_config(path, parse):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse(text, str(path))


def _section_lines(name: str, obj, skip=()) -> list[str]:
    lines = [f"[{name}]"]
    for f in fields(obj):
        if f.name in skip:
            continue
        lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
    return lines + [""]


def format_run_config(cfg: RunConfig) -> str:
    """Serialize every field, so the output re-parses to an equal config."""
    lines = _section_lines("run", cfg, skip=("model", "sampling", "adapt"))
    lines += _section_lines("model", cfg.model)
    lines += _section_lines("sampling", cfg.sampling)
    lines += _section_lines("adapt", cfg.adapt)
    return "\n".join(lines)


def format_sweep_config(cfg: SweepConfig) -> str:
    return "\n".join(_section_lines("sweep", cfg, skip=("model",))
                     + _section_lines("model", cfg.model))


def format_compare_config(cfg: CompareConfig) -> str:
    return "\n".join(_section_lines("compare", cfg, skip=("run",))) + "\n" + format_run_config(cfg.run)
