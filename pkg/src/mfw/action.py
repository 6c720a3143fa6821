"""Minimum control energy ``I = inf 1/2 int |phi|^2 dt`` subject to the skeleton dynamics.

The terminal constraint is imposed by a quadratic penalty, so the problem is
a smooth unconstrained minimization over the control mesh values.  Gradients
come from the discrete adjoint of :class:`~mfw.skeleton.SkeletonStepper`, i.e.
they are exact for the discrete objective, and :func:`gradient_fd` is the
finite-difference reference.  Closed-form Gramian values for linear systems
serve as oracles.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field as dc_field
from typing import Optional, Union

import numpy as np
from scipy import linalg

from .averaging import LinearOracle, fbar_jacobian, fbar_values
from .errors import ConfigurationError, JacobianUnavailable, MaxIterations
from .field import Field
from .models import Affine, BoundedLip, LinearDiagnostic, ModelSpec
from .paths import TimeGrid
from .skeleton import Control, SkeletonStepper, SkeletonTrajectory, skeleton_terminals, solve_skeleton

__all__ = [
    "TerminalHit",
    "TerminalFunctional",
    "ActionProblem",
    "ActionResult",
    "OptimizerParams",
    "action_value",
    "objective",
    "gradient",
    "gradient_fd",
    "minimize",
    "penalty_continuation",
    "linear_system",
    "controllability_gramian",
    "linear_minimum_action",
    "scalar_minimum_action",
    "scalar_tail_action",
]

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# problem definition


@dataclass(frozen=True)
class TerminalHit:
    """Penalty ``w/2 |X_T - target|_H^2``; the gap is ``|X_T - target|_H``."""

    target: np.ndarray
    penalty_weight: float

    def __post_init__(self):
        t = self.target.values if isinstance(self.target, Field) else self.target
        object.__setattr__(self, "target", np.asarray(t, dtype=float).copy())
        if not self.penalty_weight > 0:
            raise ConfigurationError("penalty_weight must be > 0", field="action.penalty_weight")

    def with_weight(self, w):
        return TerminalHit(self.target, w)

    def gap(self, model, x):
        return float(model.slow_h_norm(x - self.target))

    def cost(self, model, x):
        return 0.5 * self.gap(model, x) ** 2

    def cost_grad(self, model, x):
        return model.slow_grid.spacing * (model.slow_h_gram() @ (x - self.target))


@dataclass(frozen=True)
class TerminalFunctional:
    """Event ``<weights, X_T> >= threshold`` (L2 pairing) with penalty ``w/2 shortfall^2``."""

    weights: np.ndarray
    threshold: float
    penalty_weight: float

    def __post_init__(self):
        w = self.weights.values if isinstance(self.weights, Field) else self.weights
        object.__setattr__(self, "weights", np.asarray(w, dtype=float).copy())
        if not self.penalty_weight > 0:
            raise ConfigurationError("penalty_weight must be > 0", field="action.penalty_weight")

    def with_weight(self, w):
        return TerminalFunctional(self.weights, self.threshold, w)

    def value(self, model, x):
        return float(model.slow_grid.spacing * np.dot(self.weights, x))

    def gap(self, model, x):
        return max(0.0, self.threshold - self.value(model, x))

    def cost(self, model, x):
        return 0.5 * self.gap(model, x) ** 2

    def cost_grad(self, model, x):
        return -self.gap(model, x) * model.slow_grid.spacing * self.weights


Objective = Union[TerminalHit, TerminalFunctional]


@dataclass(frozen=True)
class ActionProblem:
    x0: np.ndarray
    grid: TimeGrid
    objective: Objective
    control_blocks: str = "slow_only"

    def __post_init__(self):
        x0 = self.x0.values if isinstance(self.x0, Field) else self.x0
        object.__setattr__(self, "x0", np.asarray(x0, dtype=float).copy())
        if self.control_blocks not in ("slow_only", "both"):
            raise ConfigurationError("control_blocks must be 'slow_only' or 'both'", field="action.control_blocks")

    @property
    def T(self):
        return self.grid.T

    def with_weight(self, w):
        return ActionProblem(self.x0, self.grid, self.objective.with_weight(w), self.control_blocks)

    def zero_control(self, model: ModelSpec):
        return Control.for_model(model, self.grid, with_fast=self.control_blocks == "both")


@dataclass
class ActionResult:
    control: Control
    action_value: float
    trajectory: SkeletonTrajectory
    terminal_gap: float
    iterations: int
    gradient_norm: float
    converged: bool
    status: str
    history: list = dc_field(default_factory=list)

    def summary(self):
        return {"action_value": self.action_value, "terminal_gap": self.terminal_gap,
                "iterations": self.iterations, "gradient_norm": self.gradient_norm,
                "converged": self.converged, "status": self.status}


@dataclass(frozen=True)
class OptimizerParams:
    gtol: float = 1e-6
    xtol: float = 1e-3
    max_iter: int = 500
    memory: int = 10
    armijo: float = 1e-4


# --------------------------------------------------------------------------
# objective and gradients


def action_value(control: Control, timegrid: Optional[TimeGrid] = None):
    """``1/2 sum_k |phi_k|^2 dt`` over the first ``timegrid.n_steps`` rows (all rows by default)."""
    vals = control.values if timegrid is None else control.values[: timegrid.n_steps]
    return 0.5 * float(np.sum(vals**2)) * control.dt


def objective(control: Control, problem: ActionProblem, model: ModelSpec, backend=None):
    """Penalized objective and the skeleton trajectory it was evaluated on."""
    traj = solve_skeleton(problem.x0, control, model, backend, problem.grid)
    obj = problem.objective
    return action_value(control, problem.grid) + obj.penalty_weight * obj.cost(model, traj.terminal), traj


def _constant_state_jacobian(stepper: SkeletonStepper):
    """The one-step state Jacobian when it does not depend on the state or control, else None."""
    m = stepper.model
    if not isinstance(m.slow, LinearDiagnostic) or m.noise_slow.dependence.lipschitz != 0:
        return None
    c = m.coupling
    if not c.depends_on_y and isinstance(c, (Affine, BoundedLip)):
        jf = c.x_gain * np.eye(m.n_interior)
    elif isinstance(c, Affine) and isinstance(stepper.backend, LinearOracle):
        jf = stepper.backend.jacobian(np.zeros(m.n_interior))
    else:
        return None
    return stepper.M @ (np.eye(m.n_interior) + stepper.dt * jf)


def gradient(control: Control, problem: ActionProblem, model: ModelSpec, backend=None, traj=None):
    """Gradient of the penalized objective with respect to ``control.values`` (discrete adjoint).

    Falls back to :func:`gradient_fd` when ``fbar`` has no usable Jacobian.
    """
    N = problem.grid.n_steps
    obj = problem.objective
    g = np.zeros_like(control.values)
    g[:N] = control.values[:N] * control.dt
    try:
        if traj is None:
            traj = solve_skeleton(problem.x0, control, model, backend, problem.grid)
        stepper = SkeletonStepper(model, problem.grid.dt, backend)
        lam = obj.penalty_weight * obj.cost_grad(model, traj.terminal)
        if not np.any(lam):
            return g
        k1 = control.slow_dim
        phi1 = control.slow
        Jc = _constant_state_jacobian(stepper)
        constant_ctrl = model.noise_slow.dependence.lipschitz == 0
        Ju = stepper.jacobian_control(traj.states[0]) if constant_ctrl else None
        for k in range(N - 1, -1, -1):
            x = traj.states[k]
            Bu = Ju if constant_ctrl else stepper.jacobian_control(x)
            g[k, :k1] += Bu.T @ lam
            if k:
                Jx = Jc if Jc is not None else stepper.jacobian_state(x, phi1[k])
                lam = Jx.T @ lam
    except JacobianUnavailable as exc:
        log.warning("adjoint gradient unavailable (%s); using finite differences", exc)
        return gradient_fd(control, problem, model, backend)
    return g


def gradient_fd(control: Control, problem: ActionProblem, model: ModelSpec, backend=None, step=1e-5):
    """Central differences of the penalized objective, one control coordinate at a time.

    All ``2 * n_coords`` perturbed skeletons are integrated as one batch.
    """
    N = problem.grid.n_steps
    base = control.values[:N]
    coords = list(np.ndindex(*base.shape))
    batch = np.repeat(base[None], 2 * len(coords), axis=0)
    for i, idx in enumerate(coords):
        batch[(2 * i,) + idx] += step
        batch[(2 * i + 1,) + idx] -= step
    ends = skeleton_terminals(problem.x0, batch[:, :, : control.slow_dim], model, backend, problem.grid)
    obj = problem.objective
    vals = np.array([0.5 * np.sum(v**2) * control.dt + obj.penalty_weight * obj.cost(model, e)
                     for v, e in zip(batch, ends)])
    g = np.zeros_like(control.values)
    for i, idx in enumerate(coords):
        g[idx] = (vals[2 * i] - vals[2 * i + 1]) / (2 * step)
    return g


# --------------------------------------------------------------------------
# optimizer


def _two_loop(grad, S, Y):
    q = grad.copy()
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        a = np.dot(s, q) / np.dot(y, s)
        alphas.append(a)
        q -= a * y
    if S:
        q *= np.dot(S[-1], Y[-1]) / np.dot(Y[-1], Y[-1])
    for (s, y), a in zip(zip(S, Y), reversed(alphas)):
        b = np.dot(y, q) / np.dot(y, s)
        q += (a - b) * s
    return q


def minimize(problem: ActionProblem, model: ModelSpec, backend=None, init: Optional[Control] = None,
             params: OptimizerParams = OptimizerParams(), strict=False) -> ActionResult:
    """L-BFGS with backtracking (Armijo) line search on the penalized objective.

    Iterates are the scaled values ``v = phi sqrt(dt)``, so the action is
    ``|v|^2 / 2`` and the gradient norm is the L2(0, T) norm of the
    functional gradient, independent of ``dt``.  With ``control_blocks =
    'slow_only'`` the fast block is held at zero; otherwise it is optimized
    too (it only adds cost, so it decays to zero).  Returns the best iterate;
    ``strict=True`` raises :class:`MaxIterations` at the iteration cap.
    """
    ctrl0 = init if init is not None else problem.zero_control(model)
    N = problem.grid.n_steps
    sq = math.sqrt(problem.grid.dt)
    free = slice(None) if problem.control_blocks == "both" else slice(0, ctrl0.slow_dim)
    full = ctrl0.values[:N].copy()
    if problem.control_blocks == "slow_only":
        full[:, ctrl0.slow_dim:] = 0.0
    shape = full[:, free].shape

    def unpack(v):
        vals = full.copy()
        vals[:, free] = v.reshape(shape) / sq
        return ctrl0.with_values(vals)

    def evaluate(v):
        c = unpack(v)
        f, traj = objective(c, problem, model, backend)
        g = gradient(c, problem, model, backend, traj)[:, free].ravel() / sq
        return f, g, c, traj

    v = full[:, free].ravel() * sq
    f, g, c, traj = evaluate(v)
    S, Y = deque(maxlen=params.memory), deque(maxlen=params.memory)
    history = [(f, problem.objective.gap(model, traj.terminal), action_value(c))]
    status = "max_iterations"
    it = 0
    for it in range(1, params.max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm < params.gtol:
            status = "stationary"
            it -= 1
            break
        d = -_two_loop(g, S, Y)
        slope = float(np.dot(g, d))
        if slope >= 0:
            S.clear(), Y.clear()
            d, slope = -g, -gnorm**2
        if -slope <= 1e-14 * abs(f):
            # predicted decrease below the objective's rounding error
            status = "roundoff"
            it -= 1
            break
        t = 1.0 if S else min(1.0, 1.0 / gnorm)
        while True:
            f_new, g_new, c_new, traj_new = evaluate(v + t * d)
            if f_new <= f + params.armijo * t * slope:
                break
            t *= 0.5
            if t < 1e-12:
                status = "line_search_failed"
                break
        if status == "line_search_failed":
            break
        s, y = t * d, g_new - g
        if np.dot(s, y) > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            S.append(s)
            Y.append(y)
        v, f, g, c, traj = v + s, f_new, g_new, c_new, traj_new
        history.append((f, problem.objective.gap(model, traj.terminal), action_value(c)))
    gnorm = float(np.linalg.norm(g))
    gap = problem.objective.gap(model, traj.terminal)
    # 'roundoff' is stationarity to working precision (gradient floor ~ sqrt(eps |f| cond))
    converged = (gnorm < params.gtol or status == "roundoff") and gap < params.xtol
    res = ActionResult(c, action_value(c), traj, gap, it, gnorm, converged, status, history)
    if strict and status == "max_iterations":
        raise MaxIterations(f"no convergence after {params.max_iter} iterations", res)
    return res


def penalty_continuation(problem: ActionProblem, model: ModelSpec, backend=None, weights=(1e2, 1e3, 1e4),
                         params: OptimizerParams = OptimizerParams()):
    """Minimize along increasing penalty weights, warm-starting each solve."""
    out, init = [], None
    for w in weights:
        res = minimize(problem.with_weight(w), model, backend, init, params)
        out.append(res)
        init = res.control
    return out


# --------------------------------------------------------------------------
# linear oracles


def linear_system(model: ModelSpec, backend=None):
    """``(G, B, b)`` with skeleton drift ``G x + b + B phi`` for linear slow operators.

    Requires ``LinearDiagnostic`` slow dynamics, state-independent slow noise
    and an affine ``fbar`` (y-independent coupling or a :class:`LinearOracle`
    with affine coupling).
    """
    if not isinstance(model.slow, LinearDiagnostic) or model.noise_slow.dependence.lipschitz != 0:
        raise ValueError("linear_system needs a LinearDiagnostic slow drift and state-independent noise")
    n = model.n_interior
    zero = np.zeros(n)
    if model.coupling.depends_on_y and not (isinstance(model.coupling, Affine)
                                            and isinstance(backend, LinearOracle)):
        raise ValueError("fbar is not affine for this coupling/backend")
    b = fbar_values(zero, backend, model)
    Jf = fbar_jacobian(zero, backend, model)
    G = model.slow.a * np.asarray(model.slow_grid.laplacian_matrix()) + Jf
    mult = float(model.noise_slow.dependence.multiplier(0.0))
    B = mult * np.asarray(model.noise_slow.basis(model.slow_grid)).T
    return G, B, b


def controllability_gramian(G, B, T):
    """``Q = int_0^T e^{G s} B B^T e^{G^T s} ds`` by the Van Loan block exponential."""
    n = G.shape[0]
    blk = np.zeros((2 * n, 2 * n))
    blk[:n, :n] = -G
    blk[:n, n:] = B @ B.T
    blk[n:, n:] = G.T
    E = linalg.expm(blk * T)
    Phi_T = E[n:, n:].T
    return Phi_T @ E[:n, n:]


def _free_terminal(G, b, x0, T):
    n = G.shape[0]
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = G
    aug[:n, n] = b
    return (linalg.expm(aug * T) @ np.append(x0, 1.0))[:n]


def linear_minimum_action(G, B, b, x0, target, T):
    """Exact ``I`` for hitting ``target`` at ``T``: ``1/2 d^T Q^{-1} d`` with ``d = target - m_T``."""
    d = np.asarray(target, dtype=float) - _free_terminal(G, b, x0, T)
    Q = controllability_gramian(G, B, T)
    return 0.5 * float(d @ np.linalg.solve(Q, d))


def scalar_minimum_action(a, sigma, x0, z, T):
    """``(z - e^{aT} x0)^2 / (2 Q_T)`` with ``Q_T = sigma^2 (e^{2aT} - 1) / (2a)``."""
    Q = sigma**2 * T if a == 0 else sigma**2 * math.expm1(2 * a * T) / (2 * a)
    return (z - math.exp(a * T) * x0) ** 2 / (2 * Q)


def scalar_tail_action(a, sigma, x0, r, T):
    """Rate of the event ``X_T >= r`` for the scalar linear case (zero when not rare)."""
    m = math.exp(a * T) * x0
    return 0.0 if r <= m else scalar_minimum_action(a, sigma, x0, r, T)
