"""Monte Carlo scaling experiments for the slow-fast system.

Each experiment returns a :class:`ScalingTable`: one row per parameter value
with an ensemble estimate and its standard error, plus a weighted log-log
slope fit.  Where two processes are compared (``X`` against its block-frozen
snapshot, ``Y`` against the auxiliary ``Y_hat``) both consume the same
driver normals, so the measured difference contains no independent noise.

Rare-event probabilities for one-node linear models use a compiled kernel
that draws the same counter-based normals as :func:`mfw.paths.simulate_coupled`
and therefore reproduces its paths.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba as nb
import numpy as np
from scipy import stats

from .action import (ActionProblem, TerminalFunctional, linear_system, penalty_continuation,
                     scalar_tail_action)
from .errors import ConfigurationError, InfeasibleEvent
from .models import Affine, LinearDiagnostic, ModelSpec
from .paths import (CoupledStepper, FastStepper, ScaleParams, TimeGrid, guard, iter_normals,
                    simulate_coupled, STEPS_PER_DELTA)
from .rng import FAST, SLOW, WienerDriver, _normal, _split_seed
from .skeleton import Control, solve_skeleton

__all__ = [
    "DeltaRule",
    "EnsembleStats",
    "SlopeFit",
    "ScalingTable",
    "TailEvent",
    "TailResult",
    "mesh_dt",
    "validate_increments",
    "validate_fast_auxiliary",
    "zeta_rule_split",
    "validate_averaging",
    "moment_diagnostics",
    "uniformly_bounded",
    "scalar_terminals",
    "estimate_tail",
]


@dataclass(frozen=True)
class DeltaRule:
    """``delta = coeff * epsilon**power``."""

    power: float = 2.0
    coeff: float = 1.0

    def __post_init__(self):
        if not (self.power > 0 and self.coeff > 0):
            raise ConfigurationError("delta rule needs positive power and coefficient", field="scales.delta_rule")

    def __call__(self, epsilon):
        return self.coeff * float(epsilon) ** self.power


@dataclass(frozen=True)
class EnsembleStats:
    """Sample mean and variance over ``n_paths`` (scalars or per-time vectors)."""

    n_paths: int
    mean: object
    variance: object
    hit_count: Optional[int] = None

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.hit_count is not None and not 0 <= self.hit_count <= self.n_paths:
            raise ValueError("hit_count must lie in [0, n_paths]")

    @classmethod
    def from_samples(cls, samples):
        s = np.asarray(samples, dtype=float)
        n = s.shape[0]
        var = s.var(axis=0, ddof=1) if n > 1 else np.zeros_like(s[0])
        return cls(n, s.mean(axis=0), var)

    @classmethod
    def from_hits(cls, hits, n_paths):
        p = hits / n_paths
        return cls(int(n_paths), p, p * (1.0 - p), int(hits))

    @property
    def stderr(self):
        return np.sqrt(np.asarray(self.variance) / self.n_paths)

    @property
    def ci95(self):
        return 1.96 * self.stderr


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    stderr: float
    intercept: float

    @property
    def ci95(self):
        return (self.slope - 1.96 * self.stderr, self.slope + 1.96 * self.stderr)


@dataclass
class ScalingTable:
    """Rows ``(parameter, estimate, stderr, *extra)`` with a strictly monotone parameter column."""

    name: str
    parameter: str
    parameters: np.ndarray
    estimates: np.ndarray
    stderr: np.ndarray
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.parameters = np.asarray(self.parameters, dtype=float)
        self.estimates = np.asarray(self.estimates, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        self.extra = {k: np.asarray(v, dtype=float) for k, v in self.extra.items()}
        n = self.parameters.size
        if any(a.shape != (n,) for a in (self.estimates, self.stderr, *self.extra.values())):
            raise ValueError("all table columns must have one entry per row")
        d = np.diff(self.parameters)
        if n > 1 and not (np.all(d > 0) or np.all(d < 0)):
            raise ValueError(f"{self.parameter} must be strictly monotone across rows")

    def __len__(self):
        return self.parameters.size

    @property
    def columns(self):
        return [self.parameter, "estimate", "stderr", *self.extra]

    def rows(self):
        return np.column_stack([self.parameters, self.estimates, self.stderr, *self.extra.values()])

    def slope(self, against=None) -> SlopeFit:
        """Weighted least-squares slope of ``log estimate`` on ``log parameter`` (or an extra column).

        Weights are the inverse squared relative standard errors.  When a row
        has zero error the fit is unweighted and its error comes from the
        residuals.
        """
        xs = self.parameters if against is None else self.extra[against]
        if np.any(xs <= 0) or np.any(self.estimates <= 0):
            raise ValueError("log-log fit needs positive parameters and estimates")
        x, y = np.log(xs), np.log(self.estimates)
        rel = self.stderr / self.estimates
        X = np.column_stack([np.ones_like(x), x])
        if np.all(rel > 0):
            w = 1.0 / rel**2
            cov = np.linalg.inv(X.T @ (w[:, None] * X))
            beta = cov @ (X.T @ (w * y))
        else:
            beta, *_ = np.linalg.lstsq(X, y, rcond=None)
            dof = max(1, x.size - 2)
            s2 = float(np.sum((y - X @ beta) ** 2)) / dof
            cov = s2 * np.linalg.inv(X.T @ X)
        return SlopeFit(float(beta[1]), float(math.sqrt(max(cov[1, 1], 0.0))), float(beta[0]))

    def _gaps(self, n_se):
        est, se = self.estimates, self.stderr
        return np.diff(est), n_se * np.sqrt(se[:-1] ** 2 + se[1:] ** 2)

    def decreasing(self, n_se=2.0):
        """Each row is below the previous one by more than ``n_se`` combined standard errors."""
        d, band = self._gaps(n_se)
        return bool(np.all(-d > band))

    def nonincreasing(self, n_se=2.0):
        """No row exceeds the previous one by more than ``n_se`` combined standard errors."""
        d, band = self._gaps(n_se)
        return bool(np.all(d <= band))

    def ratios(self):
        """``estimate[i] / estimate[i+1]``."""
        return self.estimates[:-1] / self.estimates[1:]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for row in self.rows():
                w.writerow(["%.17g" % v for v in row])

    @classmethod
    def from_csv(cls, path, name=""):
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            data = np.array([[float(v) for v in row] for row in r])
        extra = {k: data[:, 3 + i] for i, k in enumerate(header[3:])}
        return cls(name, header[0], data[:, 0], data[:, 1], data[:, 2], extra)


# -- shared plumbing ------------------------------------------------------------

def mesh_dt(T, delta, multiples_of=(), steps_per_delta=STEPS_PER_DELTA):
    """Largest ``dt <= delta/steps_per_delta`` dividing ``T`` and every value in ``multiples_of``."""
    cap = delta / steps_per_delta
    base = min([T, *multiples_of])
    dt = base / max(1, math.ceil(base / cap - 1e-9))
    for v in (T, *multiples_of):
        k = round(v / dt)
        if k < 1 or abs(k * dt - v) > 1e-9 * v:
            raise ConfigurationError(f"{v} is not a multiple of dt={dt:.6g}; choose commensurate block lengths",
                                     field="time.zeta")
    return dt


def _state(v, model, default=0.0):
    if v is None:
        return np.full(model.n_interior, default)
    a = getattr(v, "values", v)
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return np.full(model.n_interior, float(a))
    if a.shape != (model.n_interior,):
        raise ValueError(f"expected a state of length {model.n_interior}, got {a.shape}")
    return a


def _control_mesh(control, model, grid: TimeGrid):
    """Control rows (slow block then fast block) at the left endpoints of ``grid``.

    ``control`` is None, a constant vector, or a callable ``t -> vector``; a
    vector with only the slow block gets a zero fast block.
    """
    k1, k2 = model.noise_slow.n_modes, model.noise_fast.n_modes
    if control is None:
        return None
    if callable(control):
        vals = np.array([np.asarray(control(t), dtype=float) for t in grid.times()[:-1]])
    else:
        vals = np.broadcast_to(np.asarray(control, dtype=float), (grid.n_steps, np.size(control))).copy()
    if vals.ndim != 2 or vals.shape[1] not in (k1, k1 + k2):
        raise ValueError(f"control rows must have {k1} or {k1 + k2} entries")
    if vals.shape[1] == k1:
        vals = np.hstack([vals, np.zeros((grid.n_steps, k2))])
    return vals


def _driver(model, seed, n_paths):
    return WienerDriver.ensemble(seed, n_paths, model.noise_slow.n_modes, model.noise_fast.n_modes)


def _stats_row(samples):
    s = EnsembleStats.from_samples(samples)
    return float(s.mean), float(s.stderr)


# -- time increments ------------------------------------------------------------

def validate_increments(model: ModelSpec, scales: ScaleParams, zetas: Sequence[float], n_paths, T=1.0,
                        control=None, x0=None, y0=None, dt=None, seed=0) -> ScalingTable:
    """``E int_0^T |X_t - X_{t(zeta)}|_H^2 dt`` per block length ``zeta`` on one shared ensemble.

    ``t(zeta)`` is the start of the block containing ``t``; the integral is a
    left Riemann sum on the mesh.  Rows are sorted by decreasing ``zeta``.
    """
    zetas = sorted((float(z) for z in zetas), reverse=True)
    if len(zetas) < 2 or zetas[0] / zetas[-1] < 8 * (1 - 1e-12):
        raise ConfigurationError("zeta schedule must span at least a factor of 8", field="time.zeta")
    dt = mesh_dt(T, scales.delta, zetas) if dt is None else dt
    grid = TimeGrid(T, dt)
    spb = [round(z / dt) for z in zetas]
    acc = np.zeros((len(zetas), n_paths))
    snaps = [None] * len(zetas)
    N = grid.n_steps

    def observe(k, x, y):
        for i, s in enumerate(spb):
            if k % s == 0:
                snaps[i] = x.copy()
            if k < N:
                acc[i] += model.slow_h_norm(x - snaps[i]) ** 2 * dt

    simulate_coupled(model, scales, grid, _driver(model, seed, n_paths), _state(x0, model), _state(y0, model),
                     control=_control_mesh(control, model, grid), observer=observe)
    rows = [_stats_row(a) for a in acc]
    return ScalingTable("increments", "zeta", zetas, [r[0] for r in rows], [r[1] for r in rows],
                        {"dt": np.full(len(zetas), dt)})


# -- fast auxiliary process -----------------------------------------------------

def _aux_difference(model, scales, grid, driver, x0, y0, phi, fast_control=True, radius=1e6):
    """Per-path ``int |Y_t - Y_hat_t|^2 dt`` with ``Y_hat`` frozen on blocks of ``grid.zeta``."""
    st = CoupledStepper(model, scales, grid.dt)
    aux = FastStepper(model, grid.dt / scales.delta)
    P, n = driver.n_paths, model.n_interior
    x = np.array(np.broadcast_to(x0, (P, n)))
    y = np.array(np.broadcast_to(y0, (P, n)))
    yh = y.copy()
    if phi is not None and not fast_control:
        phi = phi.copy()
        phi[:, model.noise_slow.n_modes:] = 0.0
    spb = grid.steps_per_block
    acc = np.zeros(P)
    xb = x
    for k, z1, z2 in iter_normals(driver, grid.n_steps):
        if k % spb == 0:
            xb = x.copy()
        acc += model.fast_h_norm(y - yh) ** 2 * grid.dt
        x, y = st.step(x, y, z1, z2, None if phi is None else phi[k])
        yh = aux.step(xb, yh, z2)
        guard(k + 1, model.slow_h_norm(x), model.fast_h_norm(y), radius=radius)
    return acc


def validate_fast_auxiliary(model: ModelSpec, cells: Sequence[tuple], n_paths, T=1.0, control=None, x0=None,
                            y0=None, dt=None, seed=0) -> ScalingTable:
    """``E int_0^T |Y_t - Y_hat_t|_H^2 dt`` per cell ``(epsilon, delta, zeta)``.

    ``Y`` is the fast component of the controlled system and ``Y_hat`` the
    block-frozen auxiliary process driven by the same fast normals.  All cells
    share one mesh and one ensemble.  The parameter column is
    ``zeta + delta/epsilon`` (rows sorted by it, decreasing).
    """
    cells = sorted(((float(e), float(d), float(z)) for e, d, z in cells), key=lambda c: -(c[2] + c[1] / c[0]))
    if dt is None:
        dt = min(mesh_dt(T, d, [z for _, _, z in cells]) for _, d, _ in cells)
    est, se = [], []
    for eps, delta, zeta in cells:
        grid = TimeGrid(T, dt, zeta)
        grid.check_fast_resolution(delta)
        acc = _aux_difference(model, ScaleParams(eps, delta), grid, _driver(model, seed, n_paths),
                              _state(x0, model), _state(y0, model), _control_mesh(control, model, grid))
        m, s = _stats_row(acc)
        est.append(m)
        se.append(s)
    eps_c, delta_c, zeta_c = (np.array(c) for c in zip(*cells))
    return ScalingTable("fast_auxiliary", "zeta_plus_ratio", zeta_c + delta_c / eps_c, est, se,
                        {"epsilon": eps_c, "delta": delta_c, "zeta": zeta_c, "ratio": delta_c / eps_c})


def zeta_rule_split(model: ModelSpec, epsilon, deltas: Sequence[float], n_paths, T=1.0, control=None, x0=None,
                    y0=None, seed=0) -> ScalingTable:
    """Separate the block-length and scale-ratio contributions under ``zeta = sqrt(delta)``.

    The block term is measured with the fast control switched off; the ratio
    term with one-step blocks (so the snapshot error vanishes) and the fast
    control on.  Rows by decreasing ``delta``; the estimate column holds the
    block term and ``ratio_term`` the other one.
    """
    deltas = sorted((float(d) for d in deltas), reverse=True)
    zeta_term, zeta_se, ratio_term, ratio_se, zetas = [], [], [], [], []
    for delta in deltas:
        scales = ScaleParams(epsilon, delta)
        g0 = TimeGrid.for_scales(T, delta)
        zeta = g0.zeta
        dt = g0.dt
        ctrl = _control_mesh(control, model, g0)
        drv = _driver(model, seed, n_paths)
        a = _aux_difference(model, scales, g0, drv, _state(x0, model), _state(y0, model), ctrl, fast_control=False)
        b = _aux_difference(model, scales, TimeGrid(T, dt, dt), drv, _state(x0, model), _state(y0, model), ctrl)
        for out, err, v in ((zeta_term, zeta_se, a), (ratio_term, ratio_se, b)):
            m, s = _stats_row(v)
            out.append(m)
            err.append(s)
        zetas.append(zeta)
    return ScalingTable("zeta_rule", "delta", deltas, zeta_term, zeta_se,
                        {"zeta": zetas, "ratio": np.array(deltas) / epsilon, "ratio_term": ratio_term,
                         "ratio_term_stderr": ratio_se})


# -- averaging error and moments ------------------------------------------------

def _epsilon_schedule(epsilons):
    eps = [float(e) for e in epsilons]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigurationError("epsilon schedule must be strictly decreasing", field="scales.epsilon")
    return eps


def validate_averaging(model: ModelSpec, backend, epsilons: Sequence[float], n_paths, delta_rule=DeltaRule(),
                       T=1.0, control=None, x0=None, y0=None, dt=None, seed=0) -> ScalingTable:
    """``E sup_t |X^eps_t - Xbar_t|_H^2`` per ``epsilon`` with ``delta = delta_rule(epsilon)``.

    ``Xbar`` is the skeleton under the same control (slow block) on the same
    mesh as the stochastic run, so time discretization cancels in the
    difference.  ``dt=None`` picks the mesh per ``epsilon`` from
    ``delta/20``; a fixed ``dt`` drives every cell with the same normals.
    """
    eps_list = _epsilon_schedule(epsilons)
    x0v, y0v = _state(x0, model), _state(y0, model)
    k1 = model.noise_slow.n_modes
    est, se, deltas, dts = [], [], [], []
    for eps in eps_list:
        delta = delta_rule(eps)
        if delta / eps >= 1:
            raise ConfigurationError(f"delta/epsilon = {delta / eps:.3g} must be < 1", field="scales.delta_rule")
        h = mesh_dt(T, delta) if dt is None else dt
        grid = TimeGrid(T, h)
        grid.check_fast_resolution(delta)
        phi = _control_mesh(control, model, grid)
        ctrl = Control.for_model(model, grid, None if phi is None else phi[:, :k1])
        xbar = solve_skeleton(x0v, ctrl, model, backend, grid).states
        sup = np.zeros(n_paths)

        def observe(k, x, y):
            np.maximum(sup, model.slow_h_norm(x - xbar[k]) ** 2, out=sup)

        simulate_coupled(model, ScaleParams(eps, delta), grid, _driver(model, seed, n_paths), x0v, y0v,
                         control=phi, observer=observe)
        m, s = _stats_row(sup)
        est.append(m)
        se.append(s)
        deltas.append(delta)
        dts.append(h)
    return ScalingTable("averaging", "epsilon", eps_list, est, se, {"delta": deltas, "dt": dts})


def moment_diagnostics(model: ModelSpec, epsilons: Sequence[float], n_paths, delta_rule=DeltaRule(), T=1.0,
                       control=None, x0=None, y0=None, p=2.0, seed=0) -> ScalingTable:
    """``E sup_t |X^eps_t|_H^p`` per ``epsilon``; :meth:`uniformly_bounded` checks for growth."""
    eps_list = _epsilon_schedule(epsilons)
    x0v, y0v = _state(x0, model), _state(y0, model)
    est, se, deltas = [], [], []
    for eps in eps_list:
        delta = delta_rule(eps)
        grid = TimeGrid(T, mesh_dt(T, delta))
        sup = np.zeros(n_paths)

        def observe(k, x, y):
            np.maximum(sup, model.slow_h_norm(x) ** p, out=sup)

        simulate_coupled(model, ScaleParams(eps, delta), grid, _driver(model, seed, n_paths), x0v, y0v,
                         control=_control_mesh(control, model, grid), observer=observe)
        m, s = _stats_row(sup)
        est.append(m)
        se.append(s)
        deltas.append(delta)
    return ScalingTable("moments", "epsilon", eps_list, est, se, {"delta": deltas, "p": np.full(len(eps_list), p)})


def uniformly_bounded(table: ScalingTable, n_se=2.0):
    """No row exceeds the first by more than ``n_se`` combined standard errors."""
    e, s = table.estimates, table.stderr
    return bool(np.all(e[1:] - e[0] <= n_se * np.sqrt(s[0] ** 2 + s[1:] ** 2)))



# -- rare-event tails -----------------------------------------------------------

@dataclass(frozen=True)
class TailEvent:
    """``<weights, X_T> >= threshold`` in the L2 pairing of the slow grid."""

    weights: tuple
    threshold: float

    def values(self, model: ModelSpec, x):
        w = np.asarray(self.weights, dtype=float)
        return model.slow_grid.spacing * (np.asarray(x) @ w)

    def functional(self, penalty_weight=1.0):
        return TerminalFunctional(np.asarray(self.weights, dtype=float), self.threshold, penalty_weight)


def _affine_step_coefficients(model: ModelSpec, scales: ScaleParams, dt):
    """Coefficients of the one-node coupled step as an affine map of ``(x, y, z1, z2)``."""
    if model.n_interior != 1 or model.noise_slow.n_modes != 1 or model.noise_fast.n_modes != 1:
        raise ValueError("the tail kernel needs a one-node model with one noise mode per component")
    if not (isinstance(model.slow, LinearDiagnostic) and model.fast.is_linear and isinstance(model.coupling, Affine)
            and model.noise_slow.dependence.lipschitz == 0 and model.noise_fast.dependence.lipschitz == 0):
        raise ValueError("the tail kernel needs linear drifts, affine coupling and additive noise")
    st = CoupledStepper(model, scales, dt)

    def step(x, y, z1, z2):
        a = np.array([[x]])
        b = np.array([[y]])
        xn, yn = st.step(a, b, np.array([[z1]]), np.array([[z2]]))
        return np.array([xn[0, 0], yn[0, 0]])

    c = step(0.0, 0.0, 0.0, 0.0)
    cols = [step(*e) - c for e in np.eye(4)]
    coef = np.column_stack(cols)
    probe = np.array([0.3, -1.7, 0.9, -0.4])
    if not np.allclose(step(*probe), coef @ probe + c, rtol=1e-12, atol=1e-12):
        raise ValueError("coupled step is not affine for this model")
    return coef, c


@nb.njit(parallel=True, cache=True)
def _affine_terminals(coef, c, x0, y0, n_steps, paths, k0, k1, out):
    axx, axy, axz = coef[0, 0], coef[0, 1], coef[0, 2]
    ayx, ayy, ayz = coef[1, 0], coef[1, 1], coef[1, 3]
    cx, cy = c[0], c[1]
    for i in nb.prange(paths.size):
        path = np.uint64(paths[i])
        x = x0
        y = y0
        for k in range(n_steps):
            step = np.uint64(k)
            z1 = _normal(np.uint64(0), step, np.uint64(SLOW), path, k0, k1)
            z2 = _normal(np.uint64(0), step, np.uint64(FAST), path, k0, k1)
            x, y = axx * x + axy * y + axz * z1 + cx, ayx * x + ayy * y + ayz * z2 + cy
        out[i] = x


def scalar_terminals(model: ModelSpec, scales: ScaleParams, grid: TimeGrid, master_seed, n_paths, x0=0.0, y0=0.0,
                     first_path=0):
    """Terminal slow states of ``n_paths`` uncontrolled one-node paths (same normals as the generic stepper)."""
    coef, c = _affine_step_coefficients(model, scales, grid.dt)
    k0, k1 = _split_seed(master_seed)
    paths = np.arange(first_path, first_path + n_paths, dtype=np.int64)
    out = np.empty(n_paths)
    _affine_terminals(coef, c, float(x0), float(y0), grid.n_steps, paths, k0, k1, out)
    return out


@dataclass
class TailResult:
    """Tail table plus the rate-function reference.

    ``table`` rows are ``(epsilon, eps log P_hat, stderr)`` with extras for the
    hit count, the Clopper-Pearson band on the same scale, ``-I`` and the
    relative discrepancy ``|eps log P_hat + I| / I``.
    """

    table: ScalingTable
    rate: float
    rate_optimized: Optional[float]

    @property
    def discrepancy(self):
        return self.table.extra["rel_discrepancy"]

    def discrepancy_decreasing(self):
        d = self.discrepancy
        return bool(np.all(np.isfinite(d)) and np.all(np.diff(d) < 0))

    def final_within(self, tol):
        d = float(self.discrepancy[-1])
        return bool(math.isfinite(d) and d < tol)


def estimate_tail(model: ModelSpec, event: TailEvent, epsilons: Sequence[float], n_paths,
                  delta_rule=DeltaRule(), T=1.0, x0=0.0, y0=0.0, seed=0, backend=None, min_hits=10,
                  optimize=True, weights=(1e2, 1e4)) -> TailResult:
    """Plain Monte Carlo ``eps log P(<w, X_T> >= r)`` along the schedule against ``-I``.

    ``I`` comes from the closed-form scalar Gramian; with ``optimize`` it is
    also computed by penalty continuation of :func:`mfw.action.minimize`.
    Raises :class:`InfeasibleEvent` when the largest ``epsilon`` sees fewer
    than ``min_hits`` hits.
    """
    eps_list = _epsilon_schedule(epsilons)
    G, B, b = linear_system(model, backend)
    w = float(model.slow_grid.spacing * np.asarray(event.weights, dtype=float)[0])
    if w <= 0 or abs(b[0]) > 0:
        raise ValueError("the closed-form tail rate needs a positive weight and an unforced skeleton")
    rate = scalar_tail_action(float(G[0, 0]), float(B[0, 0]), float(x0), event.threshold / w, T)
    rate_opt = None
    if optimize:
        grid = TimeGrid(T, T / 1000)
        runs = penalty_continuation(ActionProblem([float(x0)], grid, event.functional()), model, backend, weights)
        rate_opt = runs[-1].action_value
    cols = {k: [] for k in ("delta", "hits", "p_hat", "cp_low", "cp_high", "minus_rate", "rel_discrepancy")}
    est, se = [], []
    for i, eps in enumerate(eps_list):
        delta = delta_rule(eps)
        grid = TimeGrid(T, mesh_dt(T, delta))
        xt = scalar_terminals(model, ScaleParams(eps, delta), grid, seed, n_paths, x0, y0)
        hits = int(np.count_nonzero(event.values(model, xt[:, None]) >= event.threshold))
        if i == 0 and hits < min_hits:
            raise InfeasibleEvent(f"{hits} hits in {n_paths} paths at epsilon={eps}; need >= {min_hits}", hits)
        p = hits / n_paths
        lo = stats.beta.ppf(0.025, hits, n_paths - hits + 1) if hits > 0 else 0.0
        hi = stats.beta.ppf(0.975, hits + 1, n_paths - hits) if hits < n_paths else 1.0
        with np.errstate(divide="ignore"):
            val = eps * math.log(p) if p > 0 else -math.inf
            err = eps * math.sqrt((1 - p) / (n_paths * p)) if p > 0 else math.inf
            disc = abs(val + rate) / rate if rate > 0 else abs(val)
        est.append(val)
        se.append(err)
        for k, v in (("delta", delta), ("hits", hits), ("p_hat", p), ("cp_low", eps * math.log(lo) if lo > 0 else -math.inf),
                     ("cp_high", eps * math.log(hi)), ("minus_rate", -rate), ("rel_discrepancy", disc)):
            cols[k].append(v)
    table = ScalingTable("ldp_tail", "epsilon", eps_list, est, se, cols)
    return TailResult(table, rate, rate_opt)
