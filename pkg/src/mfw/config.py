"""Run configuration: a sectioned ``key = value`` file.

Sections are ``grid``, ``model``, ``scales``, ``time``, ``run``, ``output``
and ``experiment``; ``docs/formats.md`` lists every key.  Parsing reports
the offending line and field, and :func:`validate` enforces the
cross-field rules for a given experiment.  :func:`canonical_text` is the
normalized form whose SHA-256 is recorded in the run manifest.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .ldp import DeltaRule
from .models import (Additive, Affine, BoundedLip, CahnHilliard, FastOperatorSpec, LinearClipped,
                     LinearDiagnostic, ModelSpec, NoiseSpec, PorousMedium)
from .paths import STEPS_PER_DELTA

__all__ = ["RunConfig", "load_config", "parse_config", "canonical_text", "config_hash", "validate", "PURPOSES"]

# experiments that need the averaged drift (and hence a dissipative fast equation)
_NEEDS_AVERAGING = {"average", "skeleton", "action", "averaging", "fast-aux", "ergodicity", "ldp-tail"}
# experiments that run the coupled system at scales from the delta rule
_USES_SCALES = {"simulate", "increments", "fast-aux", "averaging", "ldp-tail", "moments"}
PURPOSES = ("check", "simulate", "average", "skeleton", "action", "increments", "fast-aux", "averaging",
            "ergodicity", "ldp-tail", "moments")

_KEYS = {
    "grid": {"n_interior", "length", "bc"},
    "model": {"slow", "r", "stabilization", "a", "b", "c1", "c2", "g_x_gain", "g_offset", "g_F", "Lg",
              "coupling", "coupling_x_gain", "coupling_offset", "coupling_F", "coupling_gain",
              "noise_slow", "noise_slow_dependence", "noise_slow_slope", "noise_slow_cap",
              "noise_fast", "noise_fast_dependence", "noise_fast_slope", "noise_fast_cap"},
    "scales": {"epsilon", "schedule", "delta", "delta_power", "delta_coeff"},
    "time": {"T", "dt", "zeta", "zeta_schedule"},
    "run": {"master_seed", "n_paths", "threads"},
    "output": {"dir", "formats"},
    "experiment": {"x0", "x0_amplitude", "y0", "control", "backend", "cells", "deltas", "event_weights",
                   "threshold", "min_hits", "target", "target_amplitude", "objective", "penalty_weights",
                   "horizon", "n_samples", "p", "record_every", "bound_M", "tail_rtol"},
}


@dataclass(frozen=True)
class ScalesConfig:
    epsilon: Optional[float] = None
    schedule: tuple = ()
    delta: Optional[float] = None
    delta_rule: DeltaRule = DeltaRule()

    def epsilons(self):
        if self.schedule:
            return self.schedule
        return () if self.epsilon is None else (self.epsilon,)

    def delta_for(self, epsilon):
        if self.delta is not None and not self.schedule:
            return self.delta
        return self.delta_rule(epsilon)


@dataclass(frozen=True)
class TimeConfig:
    T: float = 1.0
    dt: Optional[float] = None
    zeta: Optional[float] = None
    zeta_schedule: tuple = ()


@dataclass(frozen=True)
class RunSection:
    master_seed: int = 0
    n_paths: int = 1000
    threads: Optional[int] = None


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"
    formats: tuple = ("csv", "json")


@dataclass(frozen=True)
class ExperimentConfig:
    x0: Optional[tuple] = None
    x0_amplitude: float = 0.0
    y0: Optional[tuple] = None
    control: tuple = ()
    backend: str = "linear_oracle"
    cells: tuple = ()
    deltas: tuple = ()
    event_weights: tuple = (1.0,)
    threshold: Optional[float] = None
    min_hits: int = 10
    target: Optional[tuple] = None
    target_amplitude: float = 0.0
    objective: str = "hit"
    penalty_weights: tuple = (1e2, 1e3, 1e4)
    horizon: float = 10.0
    n_samples: int = 300
    p: float = 2.0
    record_every: int = 1
    bound_M: Optional[float] = None
    tail_rtol: Optional[float] = None

    def initial_state(self, model: ModelSpec):
        if self.x0 is not None:
            return _vector(self.x0, model.n_interior, "experiment.x0")
        return self.x0_amplitude * np.sin(np.pi * model.slow_grid.nodes / model.length)

    def initial_fast(self, model: ModelSpec):
        return np.zeros(model.n_interior) if self.y0 is None else _vector(self.y0, model.n_interior, "experiment.y0")

    def target_state(self, model: ModelSpec):
        if self.target is not None:
            return _vector(self.target, model.n_interior, "experiment.target")
        return self.target_amplitude * np.sin(np.pi * model.slow_grid.nodes / model.length)


def _vector(v, n, name):
    a = np.asarray(v, dtype=float)
    if a.size == 1:
        return np.full(n, float(a.ravel()[0]))
    if a.shape != (n,):
        raise ConfigurationError(f"{name} needs 1 or {n} values, got {a.size}", field=name)
    return a


@dataclass
class RunConfig:
    model: ModelSpec
    scales: ScalesConfig
    time: TimeConfig
    run: RunSection
    output: OutputConfig
    experiment: ExperimentConfig
    raw: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict)
    source: str = "<string>"

    def error(self, message, key):
        """:class:`ConfigurationError` pointing at ``section.key``."""
        return ConfigurationError(message, field=key, line=self.lines.get(key), source=self.source)


# -- parsing -----------------------------------------------------------------------

def _line_map(text):
    """``section.key -> line number`` for every assignment (1-based)."""
    out, section = {}, None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            out.setdefault(section, i)
            continue
        for sep in ("=", ":"):
            if sep in s and section is not None:
                out[f"{section}.{s.split(sep, 1)[0].strip()}"] = i
                break
    return out


class _Reader:
    def __init__(self, raw, lines, source):
        self.raw, self.lines, self.source = raw, lines, source

    def err(self, key, msg):
        return ConfigurationError(msg, field=key, line=self.lines.get(key), source=self.source)

    def get(self, key, conv, default=None):
        sec, name = key.split(".", 1)
        if name not in self.raw.get(sec, {}):
            return default
        text = self.raw[sec][name]
        try:
            return conv(text)
        except (ValueError, TypeError) as exc:
            raise self.err(key, f"cannot parse {key} = {text!r}: {exc}") from None


def _float(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("value must be finite")
    return v


def _int(s):
    v = float(s)
    if v != int(v):
        raise ValueError("value must be an integer")
    return int(v)


def _floats(s):
    return tuple(_float(p) for p in s.replace(";", ",").split(",") if p.strip())


def _words(s):
    return tuple(p.strip() for p in s.split(",") if p.strip())


def _cells(s):
    out = []
    for part in s.split(","):
        if part.strip():
            vals = tuple(_float(v) for v in part.split(":"))
            if len(vals) != 3:
                raise ValueError("cells are written epsilon:delta:zeta")
            out.append(vals)
    return tuple(out)


def _noise(rd: _Reader, prefix):
    coeffs = rd.get(f"model.{prefix}", _floats, (1.0,))
    kind = rd.get(f"model.{prefix}_dependence", str, "additive").strip()
    if kind == "additive":
        dep = Additive()
    elif kind == "linear_clipped":
        dep = LinearClipped(rd.get(f"model.{prefix}_slope", _float, 0.0), rd.get(f"model.{prefix}_cap", _float, 1.0))
    else:
        raise rd.err(f"model.{prefix}_dependence", f"unknown noise dependence {kind!r} (additive, linear_clipped)")
    return NoiseSpec(coeffs, dep)


def _build_model(rd: _Reader):
    kind = rd.get("model.slow", str, "linear").strip()
    if kind == "porous_medium":
        slow = PorousMedium(rd.get("model.r", _float, 3.0), rd.get("model.stabilization", _float, 1.0))
    elif kind == "cahn_hilliard":
        slow = CahnHilliard(rd.get("model.a", _float, 1.0), rd.get("model.b", _float, -1.0))
    elif kind == "linear":
        slow = LinearDiagnostic(rd.get("model.a", _float, 1.0))
    else:
        raise rd.err("model.slow", f"unknown slow variant {kind!r} (porous_medium, cahn_hilliard, linear)")
    g = Affine(rd.get("model.g_x_gain", _float, 0.0), rd.get("model.g_offset", _float, 0.0),
               rd.get("model.g_F", _float, 0.0))
    fast = FastOperatorSpec(rd.get("model.c1", _float, 0.0), rd.get("model.c2", _float, 0.0), g,
                            rd.get("model.Lg", _float, None))
    ckind = rd.get("model.coupling", str, "affine").strip()
    if ckind == "affine":
        coupling = Affine(rd.get("model.coupling_x_gain", _float, 0.0), rd.get("model.coupling_offset", _float, 0.0),
                          rd.get("model.coupling_F", _float, 0.0))
    elif ckind == "bounded_lip":
        coupling = BoundedLip(rd.get("model.coupling_gain", _float, 1.0), rd.get("model.coupling_x_gain", _float, 0.0))
    else:
        raise rd.err("model.coupling", f"unknown coupling {ckind!r} (affine, bounded_lip)")
    n = rd.get("grid.n_interior", _int, 8)
    bc = rd.get("grid.bc", str, None)
    if bc is not None and bc.strip().lower() != slow.bc.value.lower():
        raise rd.err("grid.bc", f"grid.bc = {bc.strip()} but the {kind} variant needs {slow.bc.value}")
    return ModelSpec(slow=slow, fast=fast, coupling=coupling, noise_slow=_noise(rd, "noise_slow"),
                     noise_fast=_noise(rd, "noise_fast"), n_interior=n, length=rd.get("grid.length", _float, 1.0))


def parse_config(text, source="<string>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigurationError(f"malformed config: {exc.message if hasattr(exc, 'message') else exc}",
                                 line=line, source=source) from None
    lines = _line_map(text)
    raw = {s: dict(cp[s]) for s in cp.sections()}
    for sec, items in raw.items():
        if sec not in _KEYS:
            raise ConfigurationError(f"unknown section [{sec}]", field=sec, line=lines.get(sec), source=source)
        for k in items:
            if k not in _KEYS[sec]:
                raise ConfigurationError(f"unknown key {k!r} in [{sec}]", field=f"{sec}.{k}",
                                         line=lines.get(f"{sec}.{k}"), source=source)
    rd = _Reader(raw, lines, source)
    try:
        model = _build_model(rd)
    except ConfigurationError as exc:
        if exc.line is None:
            key = _model_key(exc.field)
            raise ConfigurationError(str(exc.args[0]), field=key, line=lines.get(key), source=source) from None
        raise
    rule = DeltaRule(rd.get("scales.delta_power", _float, 2.0), rd.get("scales.delta_coeff", _float, 1.0))
    scales = ScalesConfig(rd.get("scales.epsilon", _float), rd.get("scales.schedule", _floats, ()),
                          rd.get("scales.delta", _float), rule)
    time = TimeConfig(rd.get("time.T", _float, 1.0), rd.get("time.dt", _float), rd.get("time.zeta", _float),
                      rd.get("time.zeta_schedule", _floats, ()))
    run = RunSection(rd.get("run.master_seed", _int, 0), rd.get("run.n_paths", _int, 1000),
                     rd.get("run.threads", _int))
    output = OutputConfig(rd.get("output.dir", str, "out").strip(), rd.get("output.formats", _words, ("csv", "json")))
    ex = ExperimentConfig(
        x0=rd.get("experiment.x0", _floats), x0_amplitude=rd.get("experiment.x0_amplitude", _float, 0.0),
        y0=rd.get("experiment.y0", _floats), control=rd.get("experiment.control", _floats, ()),
        backend=rd.get("experiment.backend", str, "linear_oracle").strip(),
        cells=rd.get("experiment.cells", _cells, ()), deltas=rd.get("experiment.deltas", _floats, ()),
        event_weights=rd.get("experiment.event_weights", _floats, (1.0,)),
        threshold=rd.get("experiment.threshold", _float), min_hits=rd.get("experiment.min_hits", _int, 10),
        target=rd.get("experiment.target", _floats),
        target_amplitude=rd.get("experiment.target_amplitude", _float, 0.0),
        objective=rd.get("experiment.objective", str, "hit").strip(),
        penalty_weights=rd.get("experiment.penalty_weights", _floats, (1e2, 1e3, 1e4)),
        horizon=rd.get("experiment.horizon", _float, 10.0), n_samples=rd.get("experiment.n_samples", _int, 300),
        p=rd.get("experiment.p", _float, 2.0), record_every=rd.get("experiment.record_every", _int, 1),
        bound_M=rd.get("experiment.bound_M", _float), tail_rtol=rd.get("experiment.tail_rtol", _float))
    cfg = RunConfig(model, scales, time, run, output, ex, raw, lines, source)
    _basic_checks(cfg)
    return cfg


_MODEL_FIELDS = {"slow.r": "model.r", "fast.c1": "model.c1", "fast.Lg": "model.Lg",
                 "noise_slow.coeffs": "model.noise_slow", "noise_fast.coeffs": "model.noise_fast"}


def _model_key(f):
    if f is None:
        return "model"
    return _MODEL_FIELDS.get(f, f if f.startswith(("model.", "grid.")) else f"model.{f.split('.')[-1]}")


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), source=str(path))


def _basic_checks(cfg: RunConfig):
    sc, tm, rn = cfg.scales, cfg.time, cfg.run
    for e in sc.epsilons():
        if not e > 0:
            raise cfg.error("epsilon values must be positive", "scales.schedule" if sc.schedule else "scales.epsilon")
    if sc.schedule and any(b >= a for a, b in zip(sc.schedule, sc.schedule[1:])):
        raise cfg.error("epsilon schedule must be strictly decreasing", "scales.schedule")
    if sc.delta is not None and not sc.delta > 0:
        raise cfg.error("delta must be positive", "scales.delta")
    if not tm.T > 0:
        raise cfg.error("T must be positive", "time.T")
    if tm.dt is not None and not tm.dt > 0:
        raise cfg.error("dt must be positive", "time.dt")
    if rn.n_paths < 1:
        raise cfg.error("n_paths must be >= 1", "run.n_paths")
    if rn.master_seed < 0 or rn.master_seed >= 2**64:
        raise cfg.error("master_seed must be a 64-bit unsigned integer", "run.master_seed")
    if rn.threads is not None and rn.threads < 1:
        raise cfg.error("threads must be >= 1", "run.threads")
    if cfg.experiment.objective not in ("hit", "functional"):
        raise cfg.error("objective must be 'hit' or 'functional'", "experiment.objective")
    if cfg.experiment.backend not in ("linear_oracle", "ergodic"):
        raise cfg.error("backend must be 'linear_oracle' or 'ergodic'", "experiment.backend")


def _multiple(v, dt):
    k = round(v / dt)
    return k >= 1 and abs(k * dt - v) <= 1e-9 * v


def validate(cfg: RunConfig, purpose: str):
    """Cross-field rules for ``purpose`` (one of :data:`PURPOSES`)."""
    if purpose not in PURPOSES:
        raise ValueError(f"unknown purpose {purpose!r}")
    sc, tm = cfg.scales, cfg.time
    if purpose in _USES_SCALES:
        eps = sc.epsilons()
        if not eps and purpose not in ("fast-aux",):
            raise cfg.error("an epsilon or an epsilon schedule is required", "scales.epsilon")
        for e in eps:
            d = sc.delta_for(e)
            if purpose in ("ldp-tail", "averaging", "moments") and not d / e < 1:
                raise cfg.error(f"delta/epsilon = {d / e:.6g} at epsilon={e:g} must be < 1", "scales.delta_power")
            if tm.dt is not None and tm.dt > d / STEPS_PER_DELTA * (1 + 1e-12):
                raise cfg.error(f"dt={tm.dt:g} violates dt <= delta/{STEPS_PER_DELTA} = {d / STEPS_PER_DELTA:g} "
                                f"at epsilon={e:g}", "time.dt")
        for e, d, z in cfg.experiment.cells:
            if tm.dt is not None and tm.dt > d / STEPS_PER_DELTA * (1 + 1e-12):
                raise cfg.error(f"dt={tm.dt:g} violates dt <= delta/{STEPS_PER_DELTA} = {d / STEPS_PER_DELTA:g}",
                                "time.dt")
    if tm.dt is not None:
        if not _multiple(tm.T, tm.dt):
            raise cfg.error(f"T={tm.T:g} is not a multiple of dt={tm.dt:g}", "time.dt")
        zetas = ([tm.zeta] if tm.zeta is not None else []) + list(tm.zeta_schedule)
        zetas += [z for _, _, z in cfg.experiment.cells]
        for z in zetas:
            if not _multiple(z, tm.dt):
                raise cfg.error(f"zeta={z:g} is not a multiple of dt={tm.dt:g}", "time.zeta")
    if purpose == "increments" and len(tm.zeta_schedule) < 2:
        raise cfg.error("increments need a zeta_schedule with at least two values", "time.zeta_schedule")
    if purpose == "fast-aux" and not cfg.experiment.cells:
        raise cfg.error("fast-aux needs experiment.cells", "experiment.cells")
    if purpose == "ldp-tail" and cfg.experiment.threshold is None:
        raise cfg.error("ldp-tail needs experiment.threshold", "experiment.threshold")
    if purpose in _NEEDS_AVERAGING:
        gap = min(cfg.model.dissipativity_gap(), cfg.model.effective_gap())
        if not gap > 0:
            raise cfg.error(f"dissipativity gap {gap:.6g} <= 0: the frozen fast equation has no attracting "
                            f"invariant measure", "model.c1")
    return cfg


# -- canonical form ----------------------------------------------------------------------

def canonical_text(cfg_or_raw) -> str:
    """Sorted sections and keys with whitespace-normalized values."""
    raw = cfg_or_raw.raw if isinstance(cfg_or_raw, RunConfig) else cfg_or_raw
    out = []
    for sec in sorted(raw):
        out.append(f"[{sec}]")
        for k in sorted(raw[sec]):
            out.append(f"{k} = {' '.join(str(raw[sec][k]).split())}")
        out.append("")
    return "\n".join(out)


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
