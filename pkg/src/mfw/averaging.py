"""Averaged slow coefficient, invariant measure of the frozen fast process, and its mixing rate.

For a fixed slow state ``x`` the frozen equation
``dY = [Lap Y + c1 Y - c2 Y^3 + g(x, Y)] dt + B2(Y) dW`` has a unique
invariant law ``mu^x`` whenever the dissipativity gap is positive.  The
averaged coupling is ``fbar(x) = E_{mu^x} f(x, Y)``.

Two backends compute ``fbar``:

* :class:`LinearOracle` solves the stationary mean (and, for Gaussian laws,
  the stationary covariance) exactly when the fast drift is affine;
* :class:`ErgodicAverage` time-averages ``f(x, Y_t)`` along simulated frozen
  paths, with common random numbers across ``x`` so that ``fbar`` is smooth
  in ``x``, and a quantized cache for repeated evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import linalg, stats

from .errors import DissipativityViolated, JacobianUnavailable, NonConvergence
from .field import Field, rowmat
from .hypotheses import embedding_constant
from .models import Affine, BoundedLip, ModelSpec
from .paths import FastStepper, guard, iter_normals
from .rng import FAST, WienerDriver

__all__ = [
    "LinearOracle",
    "ErgodicAverage",
    "FbarEstimate",
    "InvariantSample",
    "ErgodicityFit",
    "require_dissipative",
    "stationary_mean",
    "stationary_covariance",
    "fbar",
    "fbar_values",
    "fbar_jacobian",
    "fbar_lipschitz_bound",
    "sample_invariant",
    "ergodicity_decay",
]


def require_dissipative(model: ModelSpec):
    gap = min(model.dissipativity_gap(), model.effective_gap())
    if not gap > 0:
        raise DissipativityViolated(
            f"fast drift is not dissipative: gap={model.dissipativity_gap():.6g}, "
            f"with reaction c1: {model.effective_gap():.6g}")
    return gap


def _linear_fast_operator(model: ModelSpec):
    if not model.fast.is_linear:
        raise ValueError("closed-form stationary law needs c2 = 0 and an affine g")
    g = model.fast.g
    n = model.n_interior
    return np.asarray(model.fast_grid.laplacian_matrix()) + (model.fast.c1 + g.F) * np.eye(n)


@lru_cache(maxsize=64)
def _stationary_map(model: ModelSpec):
    # transpose of -A^{-1}, for row-vector application
    A = _linear_fast_operator(model)
    return np.ascontiguousarray(-np.linalg.inv(A).T)


def stationary_mean(model: ModelSpec, x):
    """``m(x) = -A^{-1}(G x + g0)`` with ``A = Lap + (c1 + F_g) I`` (batched over leading axes of ``x``)."""
    g = model.fast.g
    rhs = g.x_gain * np.asarray(x, dtype=float) + g.offset
    return rowmat(rhs, _stationary_map(model))


def stationary_covariance(model: ModelSpec):
    """Nodal covariance ``S`` with ``A S + S A^T + Q = 0`` for additive fast noise."""
    if model.noise_fast.dependence.lipschitz != 0:
        raise ValueError("stationary covariance is closed-form only for additive fast noise")
    A = _linear_fast_operator(model)
    B = np.asarray(model.noise_fast.basis(model.fast_grid)).T
    mult = float(model.noise_fast.dependence.multiplier(0.0))
    Q = mult**2 * B @ B.T
    S = linalg.solve_continuous_lyapunov(A, -Q)
    return 0.5 * (S + S.T)


@dataclass
class FbarEstimate:
    value: np.ndarray
    stderr: np.ndarray

    def field(self, model: ModelSpec):
        return Field(self.value, model.slow_grid)


class LinearOracle:
    """Exact ``fbar`` for affine fast drifts.

    Affine ``f`` only needs the stationary mean (valid for any noise
    dependence, since the mean equation is closed).  A bounded ``sin``
    coupling additionally needs the stationary variance, so it requires
    additive fast noise (Gaussian invariant law).
    """

    def __init__(self, model: ModelSpec):
        require_dissipative(model)
        if not model.fast.is_linear:
            raise ValueError("LinearOracle needs c2 = 0 and an affine g")
        self.model = model
        self._A = _linear_fast_operator(model)
        self._map = _stationary_map(model)
        self._g = model.fast.g
        self._var = None
        if isinstance(model.coupling, BoundedLip) and model.coupling.gain != 0:
            self._var = np.diag(stationary_covariance(model)).copy()

    def mean(self, x):
        g = self._g
        return rowmat(g.x_gain * np.asarray(x, dtype=float) + g.offset, self._map)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        m = self.mean(x)
        c = self.model.coupling
        if isinstance(c, Affine):
            return c(x, m)
        damp = np.exp(-0.5 * self._var) if self._var is not None else 1.0
        return c.x_gain * x + c.gain * np.sin(m) * damp

    def estimate(self, x):
        v = self(x)
        return FbarEstimate(v, np.zeros_like(v))

    def jacobian(self, x):
        """``d fbar / dx`` at a single state ``x`` (n x n)."""
        x = np.asarray(x, dtype=float)
        n = x.size
        g = self.model.fast.g
        dm = -np.linalg.solve(self._A, g.x_gain * np.eye(n))
        c = self.model.coupling
        if isinstance(c, Affine):
            return c.x_gain * np.eye(n) + c.F * dm
        damp = np.exp(-0.5 * self._var) if self._var is not None else np.ones(n)
        m = self.mean(x)
        return c.x_gain * np.eye(n) + (c.gain * np.cos(m) * damp)[:, None] * dm


class ErgodicAverage:
    """Time average of ``f(x, Y_t)`` over ``[burn_in, horizon]`` on ``n_replicas`` frozen paths.

    Every evaluation reuses the same Wiener paths (``seed``), so ``fbar`` is a
    smooth function of ``x`` up to discretization.  Results are cached on a
    grid of step ``q`` in the slow H-norm coordinates of each eigenmode and are
    evaluated at the cell centre, so quantized-equal inputs return identical
    values.  ``q = None`` disables quantization and caching.
    """

    def __init__(self, model: ModelSpec, burn_in=None, horizon=None, n_replicas=16, dt=None, seed=0,
                 q=1e-3, se_tol=None, y0=None):
        gap = require_dissipative(model)
        rate = gap  # contraction rate of the synchronous coupling in |.|^2
        self.model = model
        self.burn_in = 10.0 / rate if burn_in is None else float(burn_in)
        self.horizon = self.burn_in + 40.0 / rate if horizon is None else float(horizon)
        if not self.burn_in < self.horizon:
            raise ValueError("burn_in must be smaller than horizon")
        lam_max = float(-model.fast_grid.eigenvalues().min())
        self.dt = (min(0.05 / rate, 2.0 / (lam_max + 1.0))) if dt is None else float(dt)
        self.n_replicas = int(n_replicas)
        self.seed = int(seed)
        self.q = q
        self.se_tol = se_tol
        self.y0 = np.zeros(model.n_interior) if y0 is None else np.asarray(y0, dtype=float)
        self._cache = {}
        self._stepper = FastStepper(model, self.dt)
        self._driver = WienerDriver.ensemble(self.seed, self.n_replicas, model.noise_slow.n_modes,
                                             model.noise_fast.n_modes)
        sg = model.slow_grid
        self._mode_scale = np.sqrt(np.maximum(
            model.slow_h_norm(np.asarray(sg.eigenmodes())) ** 2, 0.0))

    # quantization ------------------------------------------------------
    def quantize(self, x):
        """Cell key and centre for ``x``."""
        sg = self.model.slow_grid
        c = sg.to_modes(np.asarray(x, dtype=float)) * self._mode_scale
        key = np.floor(c / self.q).astype(np.int64)
        centre = sg.from_modes((key + 0.5) * self.q / self._mode_scale).values
        return tuple(key.tolist()), centre

    def _simulate(self, x):
        m = self.model
        n_burn = round(self.burn_in / self.dt)
        n_total = round(self.horizon / self.dt)
        xs = np.broadcast_to(x, (self.n_replicas, m.n_interior))
        y = np.array(np.broadcast_to(self.y0, (self.n_replicas, m.n_interior)))
        acc = np.zeros((self.n_replicas, m.n_interior))
        for k, z in iter_normals(self._driver, n_total, lines=(FAST,)):
            y = self._stepper.step(xs, y, z)
            if (k + 1) % 256 == 0:
                guard(k + 1, m.fast_h_norm(y))
            if k + 1 > n_burn:
                acc += m.f_values(xs, y)
        guard(n_total, m.fast_h_norm(y))
        per_rep = acc / (n_total - n_burn)
        value = per_rep.mean(axis=0)
        stderr = per_rep.std(axis=0, ddof=1) / math.sqrt(self.n_replicas) if self.n_replicas > 1 \
            else np.full(m.n_interior, np.inf)
        return FbarEstimate(value, stderr)

    def estimate(self, x, use_cache=True):
        x = np.asarray(x, dtype=float)
        if not use_cache or self.q is None:
            est = self._simulate(x)
        else:
            key, centre = self.quantize(x)
            est = self._cache.get(key)
            if est is None:
                est = self._simulate(centre)
                self._cache[key] = est
        if self.se_tol is not None and np.max(est.stderr) > self.se_tol:
            raise NonConvergence(f"replica spread {np.max(est.stderr):.3g} exceeds tolerance {self.se_tol:.3g}",
                                 est.value, est.stderr)
        return est

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self.estimate(x).value
        return np.stack([self.estimate(row).value for row in x.reshape(-1, x.shape[-1])]).reshape(x.shape)

    @property
    def cache_size(self):
        return len(self._cache)

    def jacobian(self, x):
        raise JacobianUnavailable("ergodic averages have no analytic Jacobian")


def fbar_values(x, backend, model: ModelSpec):
    """Averaged coupling on raw nodal arrays; ``backend`` may be None when ``f`` ignores ``y``."""
    x = np.asarray(x, dtype=float)
    if not model.coupling.depends_on_y:
        # integrand constant in the fast variable
        return model.f_values(x, np.zeros_like(x))
    if backend is None:
        raise ValueError("an fbar backend is required when the coupling depends on y")
    return backend(x)


def fbar(x, backend, model: Optional[ModelSpec] = None):
    """Averaged coupling at ``x`` (Field or array) as a :class:`Field` on the slow grid."""
    vals = x.values if isinstance(x, Field) else np.asarray(x, dtype=float)
    model = model or backend.model
    return Field(fbar_values(vals, backend, model), model.slow_grid)


def fbar_jacobian(x, backend, model: ModelSpec, rel_step=1e-4):
    """``d fbar / dx`` at a single state.

    Analytic when the coupling ignores ``y`` or the backend provides it;
    otherwise forward differences with step ``rel_step * max(1, |x|)`` on
    uncached evaluations (quantization would flatten the differences).
    """
    x = np.asarray(x, dtype=float)
    if not model.coupling.depends_on_y:
        return np.diag(model.coupling.dx(x, np.zeros_like(x)))
    try:
        return backend.jacobian(x)
    except JacobianUnavailable:
        pass
    if not hasattr(backend, "estimate"):
        raise JacobianUnavailable("backend supports neither jacobian() nor estimate()")
    h = rel_step * max(1.0, float(np.linalg.norm(x)))
    base = backend.estimate(x, use_cache=False).value
    cols = [(backend.estimate(x + h * e, use_cache=False).value - base) / h for e in np.eye(x.size)]
    return np.stack(cols, axis=1)


def fbar_lipschitz_bound(model: ModelSpec):
    """Lipschitz constant of ``fbar`` in the slow H-norm from the declared constants of ``f`` and ``g``.

    A synchronous coupling of two frozen paths contracts at rate ``kappa/2``
    in the fast L2 norm, so stationary laws move by at most
    ``2 L_gx / kappa`` per unit change of ``x``.
    """
    kappa = require_dissipative(model)
    sg, fg = model.slow_grid, model.fast_grid
    W = model.slow_h_gram()
    eye_f = np.eye(fg.n_interior)
    to_fast = embedding_constant(sg, W, fg, eye_f)
    to_slow = embedding_constant(fg, eye_f, sg, W)
    lgx = model.fast.g.lipschitz_x * to_fast
    return model.coupling.lipschitz_x + model.coupling.lipschitz_y * to_slow * 2.0 * lgx / kappa


# --------------------------------------------------------------------------
# invariant measure


@dataclass
class InvariantSample:
    """Draws of shape ``(n_chains, n_per_chain, n)``; chain means give error bars."""

    samples: np.ndarray
    dt: float
    thinning: int

    @property
    def flat(self):
        return self.samples.reshape(-1, self.samples.shape[-1])

    def mean(self):
        return self.flat.mean(axis=0)

    def mean_stderr(self):
        cm = self.samples.mean(axis=1)
        c = cm.shape[0]
        if c < 2:
            return np.full(cm.shape[-1], np.inf)
        return cm.std(axis=0, ddof=1) / math.sqrt(c)

    def covariance(self):
        return np.cov(self.flat, rowvar=False)


def sample_invariant(x, model: ModelSpec, burn_in, n_samples, thinning, driver: WienerDriver, dt, y0=None):
    """Approximately stationary frozen-process draws from ``driver.n_paths`` independent chains."""
    require_dissipative(model)
    xv = x.values if isinstance(x, Field) else np.asarray(x, dtype=float)
    C = driver.n_paths
    per_chain = -(-int(n_samples) // C)
    n_burn = round(burn_in / dt)
    n_total = n_burn + per_chain * int(thinning)
    stepper = FastStepper(model, dt)
    xs = np.broadcast_to(xv, (C, model.n_interior))
    y = np.array(np.broadcast_to(np.zeros(model.n_interior) if y0 is None else y0, (C, model.n_interior)))
    out = np.empty((C, per_chain, model.n_interior))
    j = 0
    for k, z in iter_normals(driver, n_total, lines=(FAST,)):
        y = stepper.step(xs, y, z)
        s = k + 1 - n_burn
        if s > 0 and s % thinning == 0:
            out[:, j] = y
            j += 1
        if (k + 1) % 256 == 0:
            guard(k + 1, model.fast_h_norm(y))
    guard(n_total, model.fast_h_norm(y))
    return InvariantSample(out, float(dt), int(thinning))


# --------------------------------------------------------------------------
# mixing rate


@dataclass
class ErgodicityFit:
    rate_hat: float
    prefactor_hat: float
    r2: float
    rate_stderr: float
    degenerate: bool
    times: np.ndarray = dc_field(repr=False)
    signal: np.ndarray = dc_field(repr=False)
    stderr: np.ndarray = dc_field(repr=False)
    window: tuple = ()

    def rows(self):
        return np.column_stack([self.times, self.signal, self.stderr])


def ergodicity_decay(x, y0, model: ModelSpec, horizon, n_paths=None, driver: Optional[WienerDriver] = None,
                     dt=1e-3, n_times=200, fbar_value=None, floor_factor=5.0, t_min=None, seed=0):
    """Fit the exponential decay of ``|E f(x, Y_t) - fbar(x)|`` in the slow H-norm.

    The fit uses times after ``t_min`` (default: the first tenth of the
    horizon) where the signal exceeds ``floor_factor`` Monte Carlo standard
    errors.  Fewer than three usable points or less than one e-fold of decay
    marks the fit as degenerate instead of failing.
    """
    require_dissipative(model)
    xv = x.values if isinstance(x, Field) else np.asarray(x, dtype=float)
    y0v = y0.values if isinstance(y0, Field) else np.asarray(y0, dtype=float)
    if driver is None:
        driver = WienerDriver.ensemble(seed, n_paths, model.noise_slow.n_modes, model.noise_fast.n_modes)
    P = driver.n_paths
    if fbar_value is None:
        if model.fast.is_linear and not (isinstance(model.coupling, BoundedLip)
                                         and model.noise_fast.dependence.lipschitz != 0):
            fbar_value = LinearOracle(model)(xv)
        else:
            raise ValueError("fbar_value is required unless the linear oracle applies")
    n_steps = round(horizon / dt)
    every = max(1, n_steps // n_times)
    stepper = FastStepper(model, dt)
    xs = np.broadcast_to(xv, (P, model.n_interior))
    y = np.array(np.broadcast_to(y0v, (P, model.n_interior)))
    W = model.slow_h_gram()
    h = model.slow_grid.spacing
    times, sig, ses = [], [], []

    def record(k):
        fv = model.f_values(xs, y)
        d = fv.mean(axis=0) - fbar_value
        var = fv.var(axis=0, ddof=1) if P > 1 else np.zeros_like(d)
        times.append(k * dt)
        sig.append(math.sqrt(max(h * d @ W @ d, 0.0)))
        # standard error of the H-norm of a mean vector (diagonal-variance proxy)
        ses.append(math.sqrt(max(h * np.sum(np.diag(W) * var) / P, 0.0)))

    record(0)
    for k, z in iter_normals(driver, n_steps, lines=(FAST,)):
        y = stepper.step(xs, y, z)
        if (k + 1) % every == 0:
            record(k + 1)
            guard(k + 1, model.fast_h_norm(y))
    times, sig, ses = np.array(times), np.array(sig), np.array(ses)
    t0 = 0.1 * horizon if t_min is None else t_min
    above = sig > floor_factor * ses
    # contiguous window from t0 until the signal first reaches the floor
    ok = np.zeros_like(above)
    started = False
    for i, t in enumerate(times):
        if t < t0:
            continue
        if not above[i]:
            if started:
                break
            continue
        ok[i] = True
        started = True
    idx = np.flatnonzero(ok)
    degenerate = idx.size < 3
    if degenerate:
        return ErgodicityFit(float("nan"), float("nan"), float("nan"), float("nan"), True, times, sig, ses, ())
    res = stats.linregress(times[idx], np.log(sig[idx]))
    efolds = (-res.slope) * (times[idx[-1]] - times[idx[0]])
    return ErgodicityFit(float(-res.slope), float(math.exp(res.intercept)), float(res.rvalue**2),
                         float(res.stderr), bool(efolds < 1.0), times, sig, ses,
                         (float(times[idx[0]]), float(times[idx[-1]])))
