"""Command-line front end: ``mfw <subcommand> [target] --config PATH [--seed N] [--out DIR]``.

Exit codes: 0 success, 1 experiment failure (criterion not met or a
numerical error), 2 configuration error.  Every run writes the canonical
config (``config.ini``) and ``manifest.json`` into the output directory.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import math
import os
import sys
import traceback

import numpy as np

from . import __version__
from .action import (ActionProblem, OptimizerParams, TerminalFunctional, TerminalHit, linear_minimum_action,
                     linear_system, penalty_continuation)
from .averaging import ErgodicAverage, LinearOracle, ergodicity_decay, fbar_values
from .config import RunConfig, canonical_text, config_hash, load_config, validate
from .errors import ConfigurationError, DissipativityViolated
from .hypotheses import check_fast_strict_monotonicity, default_fast_constants, reports_to_json, run_all
from .ldp import (TailEvent, _control_mesh, estimate_tail, mesh_dt, moment_diagnostics, uniformly_bounded,
                  validate_averaging, validate_fast_auxiliary, validate_increments)
from .paths import ScaleParams, TimeGrid, simulate_coupled
from .rng import WienerDriver, set_threads
from .skeleton import Control, EnergyEnvelope, energy_report, solve_skeleton

__all__ = ["main", "run", "EXIT_OK", "EXIT_FAILED", "EXIT_CONFIG"]

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2

SUBCOMMANDS = ("check", "simulate", "average", "skeleton", "action", "validate")
TARGETS = ("increments", "fast-aux", "averaging", "ergodicity", "ldp-tail", "moments")

# pass bands for the scaling verdicts
INCREMENT_SLOPE = (0.8, 1.2)
HALVING_FACTOR = (1.6, 2.6)
TREND_N_SE = 2.0


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="milliseconds")


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write(path, text):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _fmt(v):
    return "%.17g" % v if isinstance(v, (float, np.floating)) else str(v)


class Session:
    """Output directory bookkeeping for one invocation."""

    def __init__(self, out_dir, formats=("csv", "json")):
        self.out_dir = out_dir
        self.formats = tuple(formats)
        self.outputs = []
        os.makedirs(out_dir, exist_ok=True)

    def _register(self, name, experiment):
        path = os.path.join(self.out_dir, name)
        self.outputs.append({"experiment": experiment, "path": name, "sha256": _sha256_file(path)})

    def write_text(self, name, text, experiment):
        _atomic_write(os.path.join(self.out_dir, name), text)
        self._register(name, experiment)

    def write_rows(self, name, header, rows, experiment):
        if "csv" not in self.formats:
            return
        path = os.path.join(self.out_dir, name)
        tmp = f"{path}.tmp{os.getpid()}"
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        os.replace(tmp, path)
        self._register(name, experiment)

    def write_table(self, name, table, experiment):
        self.write_rows(name, table.columns, table.rows(), experiment)

    def write_json(self, name, payload, experiment):
        if "json" not in self.formats:
            return
        text = payload if isinstance(payload, str) else json.dumps(payload, indent=2, sort_keys=True)
        self.write_text(name, text + "\n", experiment)


# -- shared setup -------------------------------------------------------------------

def _backend(cfg: RunConfig, seed):
    m = cfg.model
    if not m.coupling.depends_on_y:
        return None
    if cfg.experiment.backend == "linear_oracle":
        if not m.fast.is_linear:
            raise cfg.error("linear_oracle needs a linear fast drift (c2 = 0, affine g)", "experiment.backend")
        return LinearOracle(m)
    return ErgodicAverage(m, seed=seed)


def _control(cfg: RunConfig):
    c = cfg.experiment.control
    return None if not c else np.asarray(c, dtype=float)


def _single_epsilon(cfg: RunConfig):
    eps = cfg.scales.epsilons()
    if len(eps) != 1:
        raise cfg.error("this experiment takes a single epsilon", "scales.epsilon")
    return eps[0], cfg.scales.delta_for(eps[0])


def _skeleton_grid(cfg: RunConfig):
    T = cfg.time.T
    return TimeGrid(T, cfg.time.dt if cfg.time.dt is not None else T / 1000)


def _row_vector(cfg, vals, n, key):
    a = np.asarray(vals, dtype=float)
    if a.size == 1:
        return np.full(n, float(a[0]))
    if a.size != n:
        raise cfg.error(f"{key} needs 1 or {n} values", key)
    return a


# -- experiments ---------------------------------------------------------------------
# each returns (passed, summary)

def exp_check(cfg, s: Session, seed):
    reports = run_all(cfg.model, n_samples=cfg.experiment.n_samples, seed=seed)
    s.write_json("check.json", reports_to_json(reports, gap=cfg.model.dissipativity_gap()), "check")
    s.write_rows("check.csv", ["condition_id", "n_samples", "worst_margin", "verdict"],
                 [(r.condition_id, r.n_samples, float(r.worst_margin), r.verdict) for r in reports], "check")
    failed = [r.condition_id for r in reports if not r.passed]
    return not failed, {"checks": len(reports), "failed": failed}


def exp_simulate(cfg, s: Session, seed):
    m, ex = cfg.model, cfg.experiment
    eps, delta = _single_epsilon(cfg)
    grid = TimeGrid(cfg.time.T, cfg.time.dt if cfg.time.dt is not None else mesh_dt(cfg.time.T, delta))
    P = cfg.run.n_paths
    driver = WienerDriver.ensemble(seed, P, m.noise_slow.n_modes, m.noise_fast.n_modes)
    every = max(1, ex.record_every)
    means = []

    def observe(k, x, y):
        if k % every == 0 or k == grid.n_steps:
            means.append(np.r_[k * grid.dt, x.mean(axis=0), y.mean(axis=0)])

    x, y = simulate_coupled(m, ScaleParams(eps, delta), grid, driver, ex.initial_state(m), ex.initial_fast(m),
                            _control_mesh(_control(cfg), m, grid), observer=observe)
    n = m.n_interior
    names = [f"x_{i}" for i in range(1, n + 1)] + [f"y_{i}" for i in range(1, n + 1)]
    s.write_rows("simulate_mean.csv", ["t", *names], means, "simulate")
    s.write_rows("simulate_terminal.csv", ["path", *names],
                 np.column_stack([np.arange(P), x, y]).tolist(), "simulate")
    xh = m.slow_h_norm(x)
    return True, {"epsilon": eps, "delta": delta, "dt": grid.dt, "n_paths": P,
                  "mean_terminal_h_norm": float(np.mean(xh))}


def exp_average(cfg, s: Session, seed):
    m = cfg.model
    backend = _backend(cfg, seed)
    x = cfg.experiment.initial_state(m)
    fb = fbar_values(x, backend, m)
    s.write_rows("average.csv", ["node", "x", "fbar"], np.column_stack([m.slow_grid.nodes, x, fb]), "average")
    return True, {"backend": type(backend).__name__ if backend is not None else "none",
                  "fbar_h_norm": float(m.slow_h_norm(fb))}


def _constant_control(cfg, grid):
    m = cfg.model
    k1 = m.noise_slow.n_modes
    c = _control(cfg)
    row = np.zeros(k1) if c is None else _row_vector(cfg, c[:k1] if c.size > k1 else c, k1, "experiment.control")
    return Control.for_model(m, grid, np.tile(row, (grid.n_steps, 1)), bound_M=cfg.experiment.bound_M)


def exp_skeleton(cfg, s: Session, seed):
    m = cfg.model
    backend = _backend(cfg, seed)
    grid = _skeleton_grid(cfg)
    ctrl = _constant_control(cfg, grid)
    traj = solve_skeleton(cfg.experiment.initial_state(m), ctrl, m, backend, grid)
    rows = traj.rows()[:: max(1, cfg.experiment.record_every)]
    s.write_rows("skeleton.csv", ["t", *[f"x_{i}" for i in range(1, m.n_interior + 1)]], rows, "skeleton")
    rep = energy_report(traj, EnergyEnvelope.from_model(m, backend))
    s.write_json("skeleton.json", rep.as_dict(), "skeleton")
    return rep.within, rep.as_dict()


def _reference_action(cfg, backend, x0):
    """Closed-form minimum action when the skeleton is linear, else None."""
    m, ex = cfg.model, cfg.experiment
    if ex.objective != "hit":
        return None
    try:
        G, B, b = linear_system(m, backend)
    except ValueError:
        return None
    return linear_minimum_action(G, B, b, x0, ex.target_state(m), cfg.time.T)


def exp_action(cfg, s: Session, seed):
    m, ex = cfg.model, cfg.experiment
    backend = _backend(cfg, seed)
    grid = _skeleton_grid(cfg)
    x0 = ex.initial_state(m)
    w0 = ex.penalty_weights[0]
    if ex.objective == "hit":
        obj = TerminalHit(ex.target_state(m), w0)
    else:
        if ex.threshold is None:
            raise cfg.error("objective = functional needs experiment.threshold", "experiment.threshold")
        obj = TerminalFunctional(_row_vector(cfg, ex.event_weights, m.n_interior, "experiment.event_weights"),
                                 ex.threshold, w0)
    runs = penalty_continuation(ActionProblem(x0, grid, obj), m, backend, ex.penalty_weights, OptimizerParams())
    s.write_rows("action.csv", ["penalty_weight", "action_value", "terminal_gap", "iterations", "gradient_norm",
                                "converged", "status"],
                 [(float(w), r.action_value, r.terminal_gap, r.iterations, r.gradient_norm, int(r.converged),
                   r.status) for w, r in zip(ex.penalty_weights, runs)], "action")
    final = runs[-1]
    k = final.control.values.shape[1]
    t = grid.times()[:-1]
    s.write_rows("action_control.csv", ["t", *[f"phi_{i}" for i in range(1, k + 1)]],
                 np.column_stack([t, final.control.values[: grid.n_steps]]), "action")
    summary = final.summary()
    ref = _reference_action(cfg, backend, x0)
    if ref is not None:
        summary["reference_action"] = ref
        summary["relative_error"] = abs(final.action_value - ref) / ref if ref > 0 else abs(final.action_value)
    return bool(final.converged), summary


def exp_increments(cfg, s: Session, seed):
    m, ex = cfg.model, cfg.experiment
    eps, delta = _single_epsilon(cfg)
    t = validate_increments(m, ScaleParams(eps, delta), cfg.time.zeta_schedule, cfg.run.n_paths, cfg.time.T,
                            _control(cfg), ex.initial_state(m), ex.initial_fast(m), cfg.time.dt, seed)
    s.write_table("increments.csv", t, "increments")
    fit = t.slope()
    lo, hi = INCREMENT_SLOPE
    return lo <= fit.slope <= hi, {"slope": fit.slope, "slope_stderr": fit.stderr, "band": [lo, hi]}


def exp_fast_aux(cfg, s: Session, seed):
    m, ex = cfg.model, cfg.experiment
    t = validate_fast_auxiliary(m, ex.cells, cfg.run.n_paths, cfg.time.T, _control(cfg), ex.initial_state(m),
                                ex.initial_fast(m), cfg.time.dt, seed)
    s.write_table("fast_aux.csv", t, "fast-aux")
    r = t.ratios()
    lo, hi = HALVING_FACTOR
    return bool(np.all((r >= lo) & (r <= hi))), {"ratios": r.tolist(), "band": [lo, hi]}


def exp_averaging(cfg, s: Session, seed):
    m, ex = cfg.model, cfg.experiment
    t = validate_averaging(m, _backend(cfg, seed), cfg.scales.epsilons(), cfg.run.n_paths, cfg.scales.delta_rule,
                           cfg.time.T, _control(cfg), ex.initial_state(m), ex.initial_fast(m), cfg.time.dt, seed)
    s.write_table("averaging.csv", t, "averaging")
    return t.decreasing(TREND_N_SE), {"estimates": t.estimates.tolist(), "n_se": TREND_N_SE}


def exp_ergodicity(cfg, s: Session, seed):
    m, ex = cfg.model, cfg.experiment
    dt = cfg.time.dt if cfg.time.dt is not None else 1e-3
    fit = ergodicity_decay(ex.initial_state(m), ex.initial_fast(m), m, ex.horizon, cfg.run.n_paths, dt=dt, seed=seed)
    s.write_rows("ergodicity.csv", ["t", "signal", "stderr"], fit.rows(), "ergodicity")
    kappa = check_fast_strict_monotonicity(m, default_fast_constants(m)).details["kappa_hat"]
    # the implicit step contracts at log(1 + k dt)/dt instead of k
    k0 = kappa / 2
    bias = k0 - math.log1p(k0 * dt) / dt
    bound = k0 - 2 * fit.rate_stderr - bias
    ok = (not fit.degenerate) and fit.rate_hat >= bound
    return ok, {"rate_hat": fit.rate_hat, "rate_stderr": fit.rate_stderr, "r2": fit.r2, "kappa_hat": kappa,
                "lower_bound": bound, "degenerate": fit.degenerate}


def exp_ldp_tail(cfg, s: Session, seed):
    m, ex = cfg.model, cfg.experiment
    res = estimate_tail(m, TailEvent(tuple(ex.event_weights), ex.threshold), cfg.scales.epsilons(),
                        cfg.run.n_paths, cfg.scales.delta_rule, cfg.time.T, float(ex.initial_state(m)[0]),
                        float(ex.initial_fast(m)[0]), seed, _backend(cfg, seed), ex.min_hits, True,
                        ex.penalty_weights)
    s.write_table("ldp_tail.csv", res.table, "ldp-tail")
    ok = res.discrepancy_decreasing()
    if ex.tail_rtol is not None:
        ok = ok and res.final_within(ex.tail_rtol)
    return ok, {"rate": res.rate, "rate_optimized": res.rate_optimized,
                "rel_discrepancy": res.discrepancy.tolist(), "tail_rtol": ex.tail_rtol}


def exp_moments(cfg, s: Session, seed):
    m, ex = cfg.model, cfg.experiment
    t = moment_diagnostics(m, cfg.scales.epsilons(), cfg.run.n_paths, cfg.scales.delta_rule, cfg.time.T,
                           _control(cfg), ex.initial_state(m), ex.initial_fast(m), ex.p, seed)
    s.write_table("moments.csv", t, "moments")
    return uniformly_bounded(t, TREND_N_SE), {"estimates": t.estimates.tolist(), "p": ex.p}


EXPERIMENTS = {
    "check": exp_check, "simulate": exp_simulate, "average": exp_average, "skeleton": exp_skeleton,
    "action": exp_action, "increments": exp_increments, "fast-aux": exp_fast_aux, "averaging": exp_averaging,
    "ergodicity": exp_ergodicity, "ldp-tail": exp_ldp_tail, "moments": exp_moments,
}


# -- entry points ----------------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(prog="mfw", description="Slow-fast SPDE experiments.")
    p.add_argument("--version", action="version", version=f"mfw {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        if name == "validate":
            sp.add_argument("target", choices=TARGETS)
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)
    return p


def _error_record(exc):
    rec = {"type": type(exc).__name__, "message": str(exc)}
    for k in ("field", "line", "source"):
        v = getattr(exc, k, None)
        if v is not None:
            rec[k] = v
    return rec


def run(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    purpose = args.target if args.command == "validate" else args.command
    started = _now()
    manifest = {"tool": "mfw", "version": __version__, "command": args.command, "experiment": purpose,
                "started": started, "outputs": [], "summary": {}, "errors": []}
    out_dir = args.out
    cfg = None
    code = EXIT_OK
    session = None
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigurationError("--seed must be a 64-bit unsigned integer", field="run.master_seed")
            cfg.raw.setdefault("run", {})["master_seed"] = str(args.seed)
        seed = args.seed if args.seed is not None else cfg.run.master_seed
        validate(cfg, purpose)
        out_dir = out_dir or cfg.output.dir
        session = Session(out_dir, cfg.output.formats)
        text = canonical_text(cfg)
        session.write_text("config.ini", text, "config")
        manifest.update(config_hash=config_hash(text), seed=seed, threads=set_threads(cfg.run.threads))
        passed, summary = EXPERIMENTS[purpose](cfg, session, seed)
        manifest["summary"][purpose] = {"passed": bool(passed), **summary}
        code = EXIT_OK if passed else EXIT_FAILED
    except (ConfigurationError, DissipativityViolated) as exc:
        if isinstance(exc, ConfigurationError):
            msg = exc.diagnostic()
        else:
            msg = f"{args.config}: [model] {exc}"
        print(f"mfw: configuration error: {msg}", file=sys.stderr)
        manifest["errors"].append(_error_record(exc))
        code = EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"mfw: {exc}", file=sys.stderr)
        manifest["errors"].append(_error_record(exc))
        code = EXIT_CONFIG
    except Exception as exc:  # numerical failures are reported, not raised
        print(f"mfw: {purpose} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        rec = _error_record(exc)
        rec["traceback"] = traceback.format_exc()
        manifest["errors"].append(rec)
        manifest["summary"].setdefault(purpose, {"passed": False})
        code = EXIT_FAILED
    if session is None:
        out_dir = out_dir or "out"
        os.makedirs(out_dir, exist_ok=True)
        session = Session(out_dir, ())
    manifest["outputs"] = session.outputs
    manifest["finished"] = _now()
    manifest["exit_code"] = code
    _atomic_write(os.path.join(out_dir, "manifest.json"), json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return code


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
