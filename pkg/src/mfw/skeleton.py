"""Deterministic controlled averaged equation ``dX = [A1(X) + fbar(X) + B1(X) P1 phi] dt``.

The solver uses the same IMEX split as the stochastic slow step with the
noise switched off and ``f`` replaced by ``fbar``, so the skeleton is the
noise-free limit of the discrete controlled system.  :class:`SkeletonStepper`
also exposes the one-step Jacobians used by the adjoint in :mod:`mfw.action`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .averaging import fbar_jacobian, fbar_lipschitz_bound, fbar_values
from .errors import ConfigurationError
from .field import Field, rowmat
from .hypotheses import default_slow_constants
from .models import ModelSpec
from .paths import GUARD_RADIUS, TimeGrid, _implicit_inverse, guard

__all__ = [
    "Control",
    "SkeletonStepper",
    "SkeletonTrajectory",
    "EnergyEnvelope",
    "EnergyReport",
    "solve_skeleton",
    "skeleton_terminals",
    "energy_report",
]


@dataclass
class Control:
    """Piecewise-constant control on the ``dt`` mesh.

    ``values[k]`` holds the slow-block coefficients followed by the fast-block
    coefficients on ``[k dt, (k+1) dt)``.  With ``bound_M`` set, the energy
    ``sum |phi_k|^2 dt`` must not exceed it.
    """

    values: np.ndarray
    dt: float
    slow_dim: int
    fast_dim: int = 0
    bound_M: Optional[float] = None

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float, ndmin=2)
        if self.values.ndim != 2 or self.values.shape[1] != self.slow_dim + self.fast_dim:
            raise ConfigurationError(
                f"control values must have shape (n_steps, {self.slow_dim + self.fast_dim}), "
                f"got {self.values.shape}", field="control")
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("control values must be finite", field="control")
        if not self.dt > 0:
            raise ConfigurationError("control dt must be positive", field="control.dt")
        if self.bound_M is not None:
            if not self.bound_M >= 0:
                raise ConfigurationError("bound_M must be >= 0", field="control.bound_M")
            if self.energy() > self.bound_M * (1 + 1e-12):
                raise ConfigurationError(f"control energy {self.energy():.6g} exceeds bound_M {self.bound_M:.6g}",
                                         field="control.bound_M")

    @classmethod
    def zeros(cls, n_steps, dt, slow_dim, fast_dim=0, bound_M=None):
        return cls(np.zeros((n_steps, slow_dim + fast_dim)), dt, slow_dim, fast_dim, bound_M)

    @classmethod
    def for_model(cls, model: ModelSpec, grid: TimeGrid, values=None, bound_M=None, with_fast=False):
        k1 = model.noise_slow.n_modes
        k2 = model.noise_fast.n_modes if with_fast else 0
        if values is None:
            values = np.zeros((grid.n_steps, k1 + k2))
        return cls(values, grid.dt, k1, k2, bound_M)

    @property
    def n_steps(self):
        return self.values.shape[0]

    @property
    def slow(self):
        return self.values[:, : self.slow_dim]

    @property
    def fast(self):
        return self.values[:, self.slow_dim:]

    def energy(self):
        """``int |phi|^2 dt`` (twice the action)."""
        return float(np.sum(self.values**2) * self.dt)

    def with_values(self, values):
        return Control(values, self.dt, self.slow_dim, self.fast_dim, None)


class SkeletonStepper:
    """``x_{k+1} = M (x_k + dt [E(x_k) + fbar(x_k) + B1(x_k) phi_k])`` with ``M = (I - dt A)^{-1}``.

    ``A`` is the stiff linear part of the slow drift and ``E`` the explicit
    remainder, exactly as in the stochastic slow step.
    """

    def __init__(self, model: ModelSpec, dt, backend=None):
        self.model = model
        self.dt = float(dt)
        self.backend = backend
        self._MT = _implicit_inverse(np.asarray(model.slow_linear_matrix()), self.dt)
        self._basis = np.asarray(model.noise_slow.basis(model.slow_grid))
        self._dep = model.noise_slow.dependence

    @property
    def M(self):
        return self._MT.T

    def fbar(self, x):
        return fbar_values(x, self.backend, self.model)

    def step(self, x, phi1, x_norm=None):
        """One step for a state (or a batch of states); ``x_norm`` is ``|x|_H`` when already known."""
        # same operation order as the stochastic slow step with zero noise
        m = self.model
        mult = self._dep.multiplier(m.slow_h_norm(x) if x_norm is None else x_norm)
        forcing = np.asarray(mult)[..., None] * rowmat(self.dt * phi1, self._basis)
        rhs = x + self.dt * (m.slow_explicit_values(x) + self.fbar(x)) + forcing.reshape(x.shape)
        return rowmat(rhs, self._MT)

    def jacobian_state(self, x, phi1, fbar_jac=None):
        """``d x_{k+1} / d x_k``."""
        m = self.model
        J = m.slow_explicit_jacobian(x)
        J = J + (fbar_jacobian(x, self.backend, m) if fbar_jac is None else fbar_jac)
        J = J + m.slow_noise_jacobian_action(x, phi1)
        return self.M @ (np.eye(x.size) + self.dt * J)

    def jacobian_control(self, x):
        """``d x_{k+1} / d phi1_k``."""
        mult = float(self._dep.multiplier(self.model.slow_h_norm(x)))
        return self.dt * mult * (self.M @ self._basis.T)


@dataclass
class SkeletonTrajectory:
    """States on the mesh with running energies.

    ``sup_h_sq[k] = max_{j <= k} |x_j|_H^2``; ``v_integral[k]`` is the
    right-endpoint sum of ``|x|_V^alpha dt`` up to ``t_k``.
    """

    times: np.ndarray
    states: np.ndarray
    sup_h_sq: np.ndarray
    v_integral: np.ndarray
    alpha: float
    control: Control
    model: ModelSpec

    @property
    def terminal(self):
        return self.states[-1]

    def field(self, k=-1):
        return Field(self.states[k], self.model.slow_grid)

    def rows(self):
        """``(t, x_1, ..., x_n)`` per mesh point."""
        return np.column_stack([self.times, self.states])


def _as_values(x, model):
    a = x.values if isinstance(x, Field) else np.asarray(x, dtype=float)
    if a.shape != (model.n_interior,):
        raise ValueError(f"expected a state of length {model.n_interior}, got shape {a.shape}")
    return a.copy()


def solve_skeleton(x0, control: Control, model: ModelSpec, fbar_backend, timegrid: TimeGrid,
                   radius=GUARD_RADIUS, alpha=None) -> SkeletonTrajectory:
    """Integrate the skeleton equation over ``timegrid`` under ``control``.

    Only the slow block of ``control`` enters the dynamics.  ``alpha`` is the
    V-norm exponent of the energy integral (default: the model's coercivity
    exponent).
    """
    N = timegrid.n_steps
    if control.n_steps < N:
        raise ValueError(f"control has {control.n_steps} steps, grid needs {N}")
    if not math.isclose(control.dt, timegrid.dt, rel_tol=1e-12):
        raise ValueError("control and time grid use different dt")
    if control.slow_dim != model.noise_slow.n_modes:
        raise ValueError("control slow block does not match the slow noise modes")
    alpha = float(model.slow.alpha if alpha is None else alpha)
    stepper = SkeletonStepper(model, timegrid.dt, fbar_backend)
    x = _as_values(x0, model)
    states = np.empty((N + 1, x.size))
    states[0] = x
    phi1 = control.slow
    nrm = model.slow_h_norm(x)
    for k in range(N):
        x = stepper.step(x, phi1[k], nrm)
        nrm = model.slow_h_norm(x)
        guard(k + 1, nrm, radius=radius)
        states[k + 1] = x
    h_sq = model.slow_h_norm(states) ** 2
    v_pow = model.slow_v_norm(states[1:]) ** alpha
    v_int = np.concatenate([[0.0], np.cumsum(v_pow) * timegrid.dt])
    return SkeletonTrajectory(timegrid.times(), states, np.maximum.accumulate(h_sq), v_int, alpha, control, model)


def skeleton_terminals(x0, phi1, model: ModelSpec, fbar_backend, timegrid: TimeGrid, radius=GUARD_RADIUS):
    """Terminal states for a batch of slow-block controls ``phi1`` of shape ``(P, n_steps, k1)``."""
    phi1 = np.asarray(phi1, dtype=float)
    P, N = phi1.shape[0], timegrid.n_steps
    if phi1.ndim != 3 or phi1.shape[1] < N:
        raise ValueError(f"expected controls of shape (P, >= {N}, k1), got {phi1.shape}")
    stepper = SkeletonStepper(model, timegrid.dt, fbar_backend)
    x = np.array(np.broadcast_to(_as_values(x0, model), (P, model.n_interior)))
    nrm = model.slow_h_norm(x)
    for k in range(N):
        x = stepper.step(x, np.ascontiguousarray(phi1[:, k]), nrm)
        nrm = model.slow_h_norm(x)
        guard(k + 1, nrm, radius=radius)
    return x


@dataclass(frozen=True)
class EnergyEnvelope:
    """Constants of the a-priori bound ``sup|X|_H^2 + eta int |X|_V^alpha <= envelope``.

    From the coercivity bound with constant ``C_A``, ``|fbar(u)| <= |fbar(0)| + L|u|``
    and ``|B1| <= b``, Gronwall gives
    ``|X_t|^2 + eta int_0^t |X|_V^alpha <= (|x0|^2 + c t) exp(K t + int |phi|^2)``
    with ``K = C_A + 1 + 2L`` and ``c = C_A + |fbar(0)|^2 + b^2``.  The envelope
    bounds the sum of the two terms by twice that.
    """

    K: float
    c: float
    eta: float

    @classmethod
    def from_model(cls, model: ModelSpec, backend=None, slow_consts=None):
        consts = slow_consts or default_slow_constants(model)
        L = fbar_lipschitz_bound(model) if model.coupling.depends_on_y else model.coupling.lipschitz_x
        f0 = float(model.slow_h_norm(fbar_values(np.zeros(model.n_interior), backend, model)))
        b = model.noise_slow.sup_hs(model.slow_grid, model.slow_h)
        return cls(K=consts.C + 1.0 + 2.0 * L, c=consts.C + f0**2 + b**2, eta=consts.eta1)

    def constant(self, T):
        """``C_T`` with ``envelope = C_T (1 + |x0|^2) exp(int |phi|^2)``."""
        return 2.0 * max(1.0, self.c * T) * math.exp(self.K * T)

    def value(self, x0_h_sq, control_energy, T):
        return self.constant(T) * (1.0 + x0_h_sq) * math.exp(control_energy)


@dataclass(frozen=True)
class EnergyReport:
    sup_h_sq: float
    v_integral: float
    control_energy: float
    envelope: float
    finite: bool
    within: bool

    def as_dict(self):
        return dict(self.__dict__)


def energy_report(traj: SkeletonTrajectory, consts: EnergyEnvelope) -> EnergyReport:
    """Energies of ``traj`` against the envelope.

    The control budget is ``bound_M`` when the control carries one, else its
    actual energy.
    """
    sup_h = float(traj.sup_h_sq[-1])
    v_int = float(traj.v_integral[-1])
    ctrl = traj.control
    budget = ctrl.bound_M if ctrl.bound_M is not None else ctrl.energy()
    T = float(traj.times[-1])
    env = consts.value(float(traj.sup_h_sq[0]), budget, T)
    finite = bool(np.isfinite(sup_h) and np.isfinite(v_int))
    within = finite and sup_h + consts.eta * v_int <= env
    return EnergyReport(sup_h, v_int, float(budget), env, finite, bool(within))
