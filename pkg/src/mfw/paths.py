"""Semi-implicit Euler-Maruyama integration of the slow-fast system.

Four processes share one set of stepping kernels:

* the coupled system ``(X, Y)`` with fast time scale ``delta`` and slow noise
  intensity ``epsilon``;
* the controlled system, which adds ``B1(X) P1 phi`` to the slow drift and
  ``B2(Y) P2 phi / sqrt(delta*epsilon)`` to the fast drift;
* the frozen fast equation at time scale one with the slow state held fixed;
* the block-frozen auxiliary fast process, whose slow input is refreshed at
  the start of every block of length ``zeta``.

Stiff linear parts are implicit (a dense precomputed inverse; grids are
small), everything else is explicit.  Ensembles are batched along a leading
path axis and driven by :class:`~mfw.rng.WienerDriver`, so a trajectory is a
pure function of ``(model, scales, grid, master_seed, path_index)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import BlowUp, ConfigurationError
from .field import Field, rowmat
from .models import CahnHilliard, ModelSpec, PorousMedium
from .rng import FAST, SLOW, WienerDriver

__all__ = [
    "ScaleParams",
    "TimeGrid",
    "SlowFastState",
    "WienerDriver",
    "CoupledStepper",
    "FastStepper",
    "Trajectory",
    "GUARD_RADIUS",
    "iter_normals",
    "stable_dt",
    "step_coupled",
    "step_controlled",
    "simulate_coupled",
    "simulate_frozen",
    "simulate_auxiliary",
]

GUARD_RADIUS = 1e6
STEPS_PER_DELTA = 20
_CHUNK_NUMBERS = 1 << 21


@dataclass(frozen=True)
class ScaleParams:
    epsilon: float
    delta: float

    def __post_init__(self):
        for name in ("epsilon", "delta"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ConfigurationError(f"{name} must be positive and finite", field=f"scales.{name}")
        object.__setattr__(self, "epsilon", float(self.epsilon))
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def ratio(self):
        """``delta / epsilon``; small values are the regime of interest."""
        return self.delta / self.epsilon


@dataclass(frozen=True)
class TimeGrid:
    """Uniform mesh on ``[0, T]`` with block length ``zeta`` (a multiple of ``dt``)."""

    T: float
    dt: float
    zeta: Optional[float] = None

    def __post_init__(self):
        T, dt = float(self.T), float(self.dt)
        if not (T > 0 and dt > 0 and math.isfinite(T)):
            raise ConfigurationError("T and dt must be positive", field="time.dt")
        n = round(T / dt)
        if n < 1 or abs(n * dt - T) > 1e-9 * T:
            raise ConfigurationError(f"T={T} is not an integer multiple of dt={dt}", field="time.dt")
        zeta = T if self.zeta is None else float(self.zeta)
        k = round(zeta / dt)
        if k < 1 or abs(k * dt - zeta) > 1e-9 * zeta:
            raise ConfigurationError(f"zeta={zeta} is not an integer multiple of dt={dt}", field="time.zeta")
        if zeta > T * (1 + 1e-12):
            raise ConfigurationError(f"zeta={zeta} exceeds T={T}", field="time.zeta")
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "zeta", k * dt)

    @classmethod
    def for_scales(cls, T, delta, zeta=None, steps_per_delta=STEPS_PER_DELTA, max_dt=None):
        """Mesh with ``dt <= delta/steps_per_delta`` and ``zeta ~ sqrt(delta)`` snapped to the mesh.

        ``max_dt`` adds a further cap, typically :func:`stable_dt` of the slow drift.
        """
        cap = delta / steps_per_delta if max_dt is None else min(delta / steps_per_delta, max_dt)
        n = max(1, math.ceil(T / cap - 1e-9))
        dt = T / n
        target = math.sqrt(delta) if zeta is None else zeta
        k = min(max(1, round(target / dt)), n)
        return cls(T, dt, k * dt)

    @property
    def n_steps(self):
        return round(self.T / self.dt)

    @property
    def steps_per_block(self):
        return round(self.zeta / self.dt)

    @property
    def n_blocks(self):
        return -(-self.n_steps // self.steps_per_block)

    def times(self):
        return np.arange(self.n_steps + 1) * self.dt

    def block_start(self, step):
        """Mesh index of ``t(zeta) = floor(t/zeta) zeta`` for ``t = step*dt``."""
        k = self.steps_per_block
        return (np.asarray(step) // k) * k

    def check_fast_resolution(self, delta, steps_per_delta=STEPS_PER_DELTA):
        if self.dt > delta / steps_per_delta * (1 + 1e-12):
            raise ConfigurationError(
                f"dt={self.dt:.6g} violates dt <= delta/{steps_per_delta} = {delta / steps_per_delta:.6g}",
                field="time.dt")


@dataclass(frozen=True)
class SlowFastState:
    x: Field
    y: Field
    t: float = 0.0

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("time must be non-negative")


def stable_dt(model: ModelSpec, amplitude):
    """Largest ``dt`` for which the explicit slow part stays stable while ``|x| <= amplitude`` pointwise.

    Frozen-coefficient estimate on the stiffest Laplacian mode.  The
    stabilized porous-medium split is unconditionally stable while
    ``Psi'(x) <= 2 s``; the Cahn-Hilliard split while ``3 a x^2 <= mu + b``
    for every mode ``mu``.  Returns ``inf`` when no restriction applies.
    """
    slow = model.slow
    mu = -np.asarray(model.slow_grid.eigenvalues())
    if isinstance(slow, PorousMedium):
        excess = slow.r * amplitude ** (slow.r - 1.0) - 2.0 * slow.stabilization
        return math.inf if excess <= 0 else 2.0 / (float(mu.max()) * excess)
    if isinstance(slow, CahnHilliard):
        excess = 3.0 * slow.a * amplitude**2 * mu - mu**2 - slow.b * mu
        top = float(excess.max())
        return math.inf if top <= 0 else 2.0 / top
    return math.inf


def _implicit_inverse(A, h):
    n = A.shape[0]
    M = np.linalg.inv(np.eye(n) - h * A)
    # Right-multiplication form for batched row vectors.
    return np.ascontiguousarray(M.T)


class FastStepper:
    """One IMEX step of the fast drift with effective step ``h``.

    ``h = dt/delta`` inside the coupled system and ``h = dt`` for the frozen
    equation, so both share identical arithmetic.
    """

    def __init__(self, model: ModelSpec, h):
        self.model = model
        self.h = float(h)
        self.sqrt_h = math.sqrt(self.h)
        self._MT = _implicit_inverse(np.asarray(model.fast_grid.laplacian_matrix()), self.h)
        self._basis = np.asarray(model.noise_fast.basis(model.fast_grid))
        self._dep = model.noise_fast.dependence

    def noise(self, y, coeffs):
        mult = self._dep.multiplier(self.model.fast_h_norm(y))
        return np.asarray(mult)[..., None] * rowmat(coeffs, self._basis)

    def step(self, x, y, z, control_coeffs=None):
        """``z`` are standard normals; ``control_coeffs`` is added to ``sqrt(h) z`` as-is."""
        m = self.model
        coeffs = self.sqrt_h * z
        if control_coeffs is not None:
            coeffs = coeffs + control_coeffs
        rhs = y + self.h * (m.fast_reaction_explicit(y) + m.g_values(x, y)) + self.noise(y, coeffs)
        return rowmat(rhs, self._MT)


class CoupledStepper:
    """IMEX step of the (optionally controlled) coupled system on batched arrays."""

    def __init__(self, model: ModelSpec, scales: ScaleParams, dt):
        self.model = model
        self.scales = scales
        self.dt = float(dt)
        self._MT = _implicit_inverse(np.asarray(model.slow_linear_matrix()), self.dt)
        self._basis = np.asarray(model.noise_slow.basis(model.slow_grid))
        self._dep = model.noise_slow.dependence
        self.fast = FastStepper(model, self.dt / scales.delta)
        self._slow_noise_scale = math.sqrt(scales.epsilon * self.dt)
        self._fast_control_scale = self.dt / math.sqrt(scales.delta * scales.epsilon)

    @property
    def slow_dim(self):
        return self.model.noise_slow.n_modes

    @property
    def fast_dim(self):
        return self.model.noise_fast.n_modes

    def slow_noise(self, x, coeffs):
        mult = self._dep.multiplier(self.model.slow_h_norm(x))
        return np.asarray(mult)[..., None] * rowmat(coeffs, self._basis)

    def slow_step(self, x, y, z1, phi1=None):
        m = self.model
        coeffs = self._slow_noise_scale * z1
        if phi1 is not None:
            coeffs = coeffs + self.dt * phi1
        rhs = x + self.dt * (m.slow_explicit_values(x) + m.f_values(x, y)) + self.slow_noise(x, coeffs)
        return rowmat(rhs, self._MT)

    def step(self, x, y, z1, z2, phi=None):
        """Advance ``(x, y)`` one step; ``phi`` is the full control vector (slow block first)."""
        phi1 = phi2 = None
        if phi is not None:
            phi1 = phi[..., : self.slow_dim]
            phi2 = self._fast_control_scale * phi[..., self.slow_dim:]
        x_new = self.slow_step(x, y, z1, phi1)
        y_new = self.fast.step(x, y, z2, phi2)
        return x_new, y_new


def guard(step, *norms, radius=GUARD_RADIUS):
    """Raise :class:`BlowUp` when any norm is non-finite or exceeds ``radius``."""
    for nrm in norms:
        if np.ndim(nrm) == 0:
            v = float(nrm)
            if v <= radius:  # False for NaN
                continue
            raise BlowUp(int(step), v if math.isfinite(v) else float("inf"), radius)
        top = float(np.max(nrm)) if np.size(nrm) else 0.0
        if not np.all(np.isfinite(nrm)) or top > radius:
            bad = top if np.isfinite(top) else float("inf")
            raise BlowUp(int(step), bad, radius)


def iter_normals(driver: WienerDriver, n_steps, step0=0, lines=(SLOW, FAST)):
    """Yield ``(step, z_line0, z_line1, ...)`` per step, generated in chunks."""
    modes = sum(driver.n_modes_slow if ln == SLOW else driver.n_modes_fast for ln in lines)
    chunk = max(1, min(n_steps, _CHUNK_NUMBERS // max(1, modes * driver.n_paths)))
    s = 0
    while s < n_steps:
        c = min(chunk, n_steps - s)
        blocks = [driver.block(ln, step0 + s, c) for ln in lines]
        for i in range(c):
            yield (step0 + s + i, *(b[i] for b in blocks))
        s += c


def _batch(v, n_paths, n):
    a = v.values if isinstance(v, Field) else np.asarray(v, dtype=float)
    if a.shape[-1] != n:
        raise ValueError(f"expected trailing length {n}, got {a.shape}")
    return np.array(np.broadcast_to(a, (n_paths, n)), dtype=float)


def _control_values(control, n_steps, dim):
    if control is None:
        return None
    vals = np.asarray(getattr(control, "values", control), dtype=float)
    if vals.ndim != 2 or vals.shape[0] < n_steps or vals.shape[1] != dim:
        raise ValueError(f"control must have shape (>= {n_steps}, {dim}), got {vals.shape}")
    return vals


@dataclass
class Trajectory:
    """Recorded states: ``times`` (K,), ``x`` and ``y`` of shape (K, n_paths, n)."""

    times: np.ndarray
    x: Optional[np.ndarray]
    y: np.ndarray


def _check_driver(model, driver):
    if driver.n_modes_slow != model.noise_slow.n_modes or driver.n_modes_fast != model.noise_fast.n_modes:
        raise ConfigurationError("driver mode counts do not match the model's noise specs", field="noise")


def simulate_coupled(model: ModelSpec, scales: ScaleParams, grid: TimeGrid, driver: WienerDriver, x0, y0,
                     control=None, observer: Optional[Callable] = None, record_every: Optional[int] = None,
                     radius=GUARD_RADIUS):
    """Integrate the coupled (or controlled, when ``control`` is given) system over ``grid``.

    ``observer(step, x, y)`` is called for ``step = 0..n_steps`` with the
    batched states after ``step`` steps.  Returns a :class:`Trajectory` when
    ``record_every`` is set, else the terminal ``(x, y)`` arrays.
    """
    _check_driver(model, driver)
    n, P, N = model.n_interior, driver.n_paths, grid.n_steps
    stepper = CoupledStepper(model, scales, grid.dt)
    phi = _control_values(control, N, stepper.slow_dim + stepper.fast_dim)
    x, y = _batch(x0, P, n), _batch(y0, P, n)
    rec_t, rec_x, rec_y = [], [], []

    def emit(k):
        if observer is not None:
            observer(k, x, y)
        if record_every and k % record_every == 0:
            rec_t.append(k * grid.dt)
            rec_x.append(x.copy())
            rec_y.append(y.copy())

    emit(0)
    for k, z1, z2 in iter_normals(driver, N):
        x, y = stepper.step(x, y, z1, z2, None if phi is None else phi[k])
        guard(k + 1, model.slow_h_norm(x), model.fast_h_norm(y), radius=radius)
        emit(k + 1)
    if record_every:
        return Trajectory(np.array(rec_t), np.stack(rec_x), np.stack(rec_y))
    return x, y


def _single_path(driver):
    if driver.n_paths != 1:
        raise ValueError("state-level stepping needs a driver with a single path_index")


def step_controlled(state: SlowFastState, model: ModelSpec, scales: ScaleParams, grid: TimeGrid,
                    driver: WienerDriver, control=None, radius=GUARD_RADIUS) -> SlowFastState:
    """One step of the controlled system from ``state`` (control row ``floor(t/dt)``)."""
    _single_path(driver)
    _check_driver(model, driver)
    k = round(state.t / grid.dt)
    if abs(k * grid.dt - state.t) > 1e-9 * max(1.0, state.t):
        raise ValueError(f"t={state.t} is not on the time mesh")
    stepper = CoupledStepper(model, scales, grid.dt)
    phi = None
    if control is not None:
        phi = _control_values(control, k + 1, stepper.slow_dim + stepper.fast_dim)[k]
    z1 = driver.block(SLOW, k, 1)[0]
    z2 = driver.block(FAST, k, 1)[0]
    x, y = stepper.step(state.x.values[None], state.y.values[None], z1, z2, phi)
    guard(k + 1, model.slow_h_norm(x), model.fast_h_norm(y), radius=radius)
    return SlowFastState(Field(x[0], model.slow_grid), Field(y[0], model.fast_grid), (k + 1) * grid.dt)


def step_coupled(state: SlowFastState, model: ModelSpec, scales: ScaleParams, grid: TimeGrid,
                 driver: WienerDriver, radius=GUARD_RADIUS) -> SlowFastState:
    return step_controlled(state, model, scales, grid, driver, None, radius)


def simulate_frozen(x, y0, model: ModelSpec, horizon, dt, driver: WienerDriver, observer=None,
                    record_every: Optional[int] = 1, radius=GUARD_RADIUS, step0=0):
    """Frozen fast equation ``dY = A2(x, Y) dt + B2(Y) dW`` at time scale one.

    Uses the fast noise line of ``driver`` starting at ``step0``.  Returns a
    :class:`Trajectory` (``x`` is ``None``) or the terminal ``y`` when
    ``record_every`` is ``None``.
    """
    n_steps = round(horizon / dt)
    if n_steps < 1 or abs(n_steps * dt - horizon) > 1e-9 * horizon:
        raise ConfigurationError("horizon must be a positive multiple of dt", field="time.horizon")
    n, P = model.n_interior, driver.n_paths
    xs = _batch(x, P, n)
    y = _batch(y0, P, n)
    stepper = FastStepper(model, dt)
    rec_t, rec_y = [], []

    def emit(k):
        if observer is not None:
            observer(k, y)
        if record_every and k % record_every == 0:
            rec_t.append(k * dt)
            rec_y.append(y.copy())

    emit(0)
    for k, z in iter_normals(driver, n_steps, step0, lines=(FAST,)):
        y = stepper.step(xs, y, z)
        guard(k + 1 - step0, model.fast_h_norm(y), radius=radius)
        emit(k + 1 - step0)
    if record_every:
        return Trajectory(np.array(rec_t), None, np.stack(rec_y))
    return y


def simulate_auxiliary(slow_snapshots, y0, model: ModelSpec, scales: ScaleParams, grid: TimeGrid,
                       driver: WienerDriver, observer=None, record_every: Optional[int] = None,
                       radius=GUARD_RADIUS):
    """Block-frozen fast process: on block ``k`` the slow input is ``slow_snapshots[k]``.

    ``slow_snapshots`` has shape ``(n_blocks, n)`` or ``(n_blocks, n_paths, n)``
    and holds the slow state at block start times ``k*zeta``.  The process runs
    at fast time scale ``delta`` with the fast noise line of ``driver`` and no
    control term.
    """
    n, P, N = model.n_interior, driver.n_paths, grid.n_steps
    snaps = np.asarray(getattr(slow_snapshots, "values", slow_snapshots), dtype=float)
    if snaps.shape[0] < grid.n_blocks:
        raise ValueError(f"need {grid.n_blocks} block snapshots, got {snaps.shape[0]}")
    y = _batch(y0, P, n)
    stepper = FastStepper(model, grid.dt / scales.delta)
    spb = grid.steps_per_block
    rec_t, rec_y = [], []

    def emit(k):
        if observer is not None:
            observer(k, y)
        if record_every and k % record_every == 0:
            rec_t.append(k * grid.dt)
            rec_y.append(y.copy())

    emit(0)
    xb = None
    for k, z in iter_normals(driver, N, lines=(FAST,)):
        if k % spb == 0:
            xb = _batch(snaps[k // spb], P, n)
        y = stepper.step(xb, y, z)
        guard(k + 1, model.fast_h_norm(y), radius=radius)
        emit(k + 1)
    if record_every:
        return Trajectory(np.array(rec_t), None, np.stack(rec_y))
    return y
