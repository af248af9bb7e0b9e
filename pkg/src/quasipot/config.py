"""Experiment configuration: flat ``section.key = value`` text files,
command-line overrides and the named presets for the published runs."""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field

from .errors import ConfigError, ParameterError
from .landscape import diffusion_from_id, landscape_from_id

COMMANDS = ("simulate", "exit-time", "mam", "hj-check", "two-well", "diffusion-estimate")
HJ_CANDIDATES = ("example31", "scaled_loss", "twowell1", "twowell2")
DEFAULT_SEED = 0xC0FFEE


@dataclass
class SimSection:
    eps: float = 0.1
    h: float = 0.01
    max_steps: int = 10000
    seed: int = DEFAULT_SEED
    x0: tuple[float, ...] = (0.0, 0.0)
    record_every: int = 10
    safety_radius: float = 1e6


@dataclass
class DomainSection:
    center: tuple[float, ...] = (0.0, 0.0)
    radius: float = 1.0
    gamma_radius: float = 0.1
    Gamma_radius: float = 0.2


@dataclass
class EnsembleSection:
    trials: int = 200
    eps_list: tuple[float, ...] = ()
    censor_threshold: float = 0.2
    threads: int = 1


@dataclass
class MamSection:
    target: tuple[float, ...] = (1.0, 0.0)
    n_points: int = 100
    max_iters: int = 2000
    step_size: float = 1.0
    tol: float = 1e-8


@dataclass
class HJSection:
    candidate: str = "example31"
    mu: float = 1.5
    samples: int = 1000


@dataclass
class TwoWellSection:
    mu1: float = 1.9999
    mu2: float = 1.0001
    x_range: tuple[float, ...] = (-4.0, 4.0)
    y_range: tuple[float, ...] = (-2.0, 2.0)
    bins: tuple[int, ...] = (80, 40)
    n_cycles: int = 0
    n_chains: int = 200


@dataclass
class MinibatchSection:
    n: int = 8
    m: int = 2
    x: tuple[float, ...] = (0.0, 0.0)
    data_seed: int = DEFAULT_SEED


@dataclass
class OutputSection:
    dir: str = "out"


@dataclass
class ExperimentConfig:
    command: str = "simulate"
    landscape: str = "quadratic_bowl"
    diffusion: str = "diag(1.0)"
    sim: SimSection = field(default_factory=SimSection)
    domain: DomainSection = field(default_factory=DomainSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    mam: MamSection = field(default_factory=MamSection)
    hj: HJSection = field(default_factory=HJSection)
    two_well: TwoWellSection = field(default_factory=TwoWellSection)
    minibatch: MinibatchSection = field(default_factory=MinibatchSection)
    output: OutputSection = field(default_factory=OutputSection)

    def validate(self) -> "ExperimentConfig":
        check(self)
        return self


def _parse(text: str, tp, key: str):
    text = text.strip()
    try:
        if tp is int:
            return int(text, 0)
        if tp is float:
            return float(text)
        if tp is str:
            return text
        origin = typing.get_origin(tp)
        if origin is tuple:
            inner = typing.get_args(tp)[0]
            text = text.strip("()[] ")
            if not text:
                return ()
            return tuple(_parse(t, inner, key) for t in text.split(","))
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r}") from None
    raise ConfigError(key, f"unsupported type {tp!r}")


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _field_types(obj):
    return typing.get_type_hints(type(obj))


def set_key(cfg: ExperimentConfig, key: str, text: str):
    """Assign ``text`` to the dotted ``key``, parsed by the field's type."""
    key = key.strip()
    parts = key.split(".")
    target = cfg
    for part in parts[:-1]:
        if not dataclasses.is_dataclass(target) or not hasattr(target, part):
            raise ConfigError(key, "unknown section")
        target = getattr(target, part)
    name = parts[-1]
    if not dataclasses.is_dataclass(target) or name not in {f.name for f in dataclasses.fields(target)}:
        raise ConfigError(key, "unknown key")
    tp = _field_types(target)[name]
    if dataclasses.is_dataclass(tp):
        raise ConfigError(key, "is a section, not a key")
    setattr(target, name, _parse(text, tp, key))


def parse_config(text: str, cfg: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = cfg or ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected 'key = value'")
        key, value = line.split("=", 1)
        set_key(cfg, key, value)
    return cfg


def _items(obj, prefix=""):
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            yield from _items(value, f"{prefix}{f.name}.")
        else:
            yield f"{prefix}{f.name}", value


def serialize_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {_format(v)}\n" for k, v in _items(cfg))


def _require(cond, key, message):
    if not cond:
        raise ConfigError(key, message)


def check(cfg: ExperimentConfig):
    """Validate ids and numeric ranges; errors name the offending key path."""
    _require(cfg.command in COMMANDS, "command", f"must be one of {', '.join(COMMANDS)}")
    try:
        lc = landscape_from_id(cfg.landscape)
    except ParameterError as exc:
        raise ConfigError("landscape", str(exc)) from None
    if cfg.command != "two-well":
        try:
            diffusion_from_id(cfg.diffusion)
        except ParameterError as exc:
            raise ConfigError("diffusion", str(exc)) from None
    s = cfg.sim
    _require(s.eps >= 0, "sim.eps", "must be >= 0")
    _require(s.h > 0, "sim.h", "must be > 0")
    _require(s.max_steps >= 1, "sim.max_steps", "must be >= 1")
    _require(0 <= s.seed < 2 ** 64, "sim.seed", "must be a 64-bit unsigned integer")
    _require(s.record_every >= 1, "sim.record_every", "must be >= 1")
    _require(len(s.x0) == lc.dim, "sim.x0", f"needs {lc.dim} coordinates")
    d = cfg.domain
    _require(len(d.center) == lc.dim, "domain.center", f"needs {lc.dim} coordinates")
    _require(0 < d.gamma_radius < d.Gamma_radius < d.radius, "domain.gamma_radius",
             "need 0 < gamma_radius < Gamma_radius < radius")
    e = cfg.ensemble
    _require(e.trials >= 10, "ensemble.trials", "must be >= 10")
    _require(e.threads >= 1, "ensemble.threads", "must be >= 1")
    _require(all(v > 0 for v in e.eps_list), "ensemble.eps_list", "values must be > 0")
    _require(0 <= e.censor_threshold <= 1, "ensemble.censor_threshold", "must lie in [0, 1]")
    m = cfg.mam
    _require(len(m.target) == lc.dim, "mam.target", f"needs {lc.dim} coordinates")
    _require(m.n_points >= 20, "mam.n_points", "must be >= 20")
    _require(m.max_iters >= 1, "mam.max_iters", "must be >= 1")
    _require(m.step_size > 0, "mam.step_size", "must be > 0")
    _require(m.tol > 0, "mam.tol", "must be > 0")
    _require(cfg.hj.candidate in HJ_CANDIDATES, "hj.candidate",
             f"must be one of {', '.join(HJ_CANDIDATES)}")
    _require(0 < cfg.hj.mu < 2, "hj.mu", "must lie in (0, 2)")
    _require(cfg.hj.samples >= 1, "hj.samples", "must be >= 1")
    t = cfg.two_well
    _require(1 < t.mu1 < 2, "two_well.mu1", "must lie in (1, 2)")
    _require(1 < t.mu2 < 2, "two_well.mu2", "must lie in (1, 2)")
    _require(len(t.bins) == 2 and min(t.bins) >= 1, "two_well.bins", "need two positive counts")
    _require(len(t.x_range) == 2 and t.x_range[1] > t.x_range[0], "two_well.x_range", "empty range")
    _require(len(t.y_range) == 2 and t.y_range[1] > t.y_range[0], "two_well.y_range", "empty range")
    _require(t.n_cycles >= 0, "two_well.n_cycles", "must be >= 0")
    _require(t.n_chains >= 1, "two_well.n_chains", "must be >= 1")
    b = cfg.minibatch
    _require(1 <= b.n <= 12, "minibatch.n", "must lie in [1, 12]")
    _require(1 <= b.m <= b.n, "minibatch.m", "must lie in [1, minibatch.n]")


PRESETS = {
    "fig1-anisotropic": {
        "command": "exit-time", "landscape": "quadratic_bowl", "diffusion": "diag(1.9999)",
        "sim.eps": "0.1", "sim.h": "0.01", "sim.max_steps": "140000", "sim.x0": "0, 0",
        "ensemble.trials": "50",
    },
    "fig1-isotropic": {
        "command": "exit-time", "landscape": "quadratic_bowl", "diffusion": "diag(1.0)",
        "sim.eps": "0.1", "sim.h": "0.01", "sim.max_steps": "140000", "sim.x0": "0, 0",
        "ensemble.trials": "50",
    },
    "fig2-from-O1": {
        "command": "two-well", "landscape": "two_well",
        "two_well.mu1": "1.9999", "two_well.mu2": "1.0001",
        "sim.eps": "0.2", "sim.h": "0.01", "sim.max_steps": "22000", "sim.x0": "-2, 0",
    },
    "fig2-from-O2": {
        "command": "two-well", "landscape": "two_well",
        "two_well.mu1": "1.9999", "two_well.mu2": "1.0001",
        "sim.eps": "0.2", "sim.h": "0.01", "sim.max_steps": "22000", "sim.x0": "2, 0",
    },
}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; known: {', '.join(PRESETS)}")
    cfg = ExperimentConfig()
    for key, value in PRESETS[name].items():
        set_key(cfg, key, value)
    return cfg
