"""Sampling-based verification of the structural conditions on the coefficients.

Each check evaluates an inequality ``lhs <= rhs`` on many sampled fields and
records the relative slack ``(rhs - lhs) / (|lhs| + |rhs|)``.  A check passes
when the worst relative slack is above ``-tol``; otherwise the sample pair with
the worst slack is kept as a witness.  Passing means "no counterexample among
the samples", nothing more.

Slow conditions (on the slow drift ``A1``, coupling ``f`` and noise ``B1``):

* ``A1`` hemicontinuity of ``lam -> <A1(u + lam v), w>``
* ``A2`` local monotonicity ``<A1(u)-A1(v), u-v> <= (C + rho(u) + eta(v)) |u-v|_H^2``
* ``A3`` coercivity ``2<A1(u),u> + |B1(u)|_HS^2 <= -eta1 |u|_V^alpha1 + C(1+|u|_H^2)``
* ``A4`` growth ``|A1(u)|_{V*}^{alpha1/(alpha1-1)} <= C(1+|u|_V^alpha1)(1+|u|_H^beta1)``
* ``A5`` Lipschitz bounds for ``f`` and ``B1``

Fast conditions (on ``A2(x, y) = Lap y + c1 y - c2 y^3 + g(x, y)`` and ``B2``):
``H1`` hemicontinuity, ``H2`` strict monotonicity (rate ``kappa``), ``H3``
coercivity, ``H4`` growth, plus the Lipschitz bounds of ``g`` and ``B2`` and the
dissipativity gap ``2 lambda_1 - 2 L_g - L_B2^2``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field as dc_field
from typing import Optional

import numpy as np
from scipy import linalg

from .field import L2, Grid, norm_values
from .models import Affine, CahnHilliard, ModelSpec, PorousMedium

__all__ = [
    "SlowHypothesisConstants",
    "FastHypothesisConstants",
    "CheckReport",
    "FieldSampler",
    "embedding_constant",
    "ch_rho",
    "check_hemicontinuity",
    "check_local_monotonicity",
    "check_coercivity",
    "check_fast_strict_monotonicity",
    "check_growth",
    "check_lipschitz",
    "check_gap",
    "fit_slow_constants",
    "default_slow_constants",
    "default_fast_constants",
    "run_all",
]

DEFAULT_TOL = 1e-8


@dataclass(frozen=True)
class SlowHypothesisConstants:
    alpha1: float
    beta1: float
    eta1: float
    C: float
    rho_form: str = "none"
    rho_scale: float = 0.0

    def __post_init__(self):
        if not self.alpha1 > 1:
            raise ValueError("alpha1 must be > 1")
        if not self.eta1 > 0:
            raise ValueError("eta1 must be > 0")
        if self.beta1 < 0 or self.C < 0 or self.rho_scale < 0:
            raise ValueError("beta1, C and rho_scale must be >= 0")
        if self.rho_form not in ("none", "cahn_hilliard"):
            raise ValueError(f"unknown rho_form {self.rho_form!r}")

    @property
    def eta_form(self):
        # The weight on the second argument uses the same formula.
        return self.rho_form


@dataclass(frozen=True)
class FastHypothesisConstants:
    alpha2: float
    beta2: float
    eta2: float
    kappa: float
    lam: float
    C: float
    gap: Optional[float] = None

    def __post_init__(self):
        if not self.alpha2 > 1:
            raise ValueError("alpha2 must be > 1")
        if not (self.eta2 > 0 and self.kappa > 0):
            raise ValueError("eta2 and kappa must be > 0")
        if not 0 < self.lam < self.kappa:
            raise ValueError("lam must lie in (0, kappa)")


@dataclass
class CheckReport:
    condition_id: str
    n_samples: int
    worst_margin: float
    verdict: str
    witness: Optional[dict] = None
    details: dict = dc_field(default_factory=dict)

    @property
    def passed(self):
        return self.verdict == "pass"

    def to_dict(self):
        d = asdict(self)
        d["worst_margin"] = float(self.worst_margin)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def _report(cid, slack, scale, witness_arrays, tol=DEFAULT_TOL, details=None):
    slack = np.atleast_1d(np.asarray(slack, dtype=float))
    scale = np.atleast_1d(np.asarray(scale, dtype=float))
    margin = slack / np.maximum(scale, 1e-300)
    margin = np.where(np.isnan(margin), -np.inf, margin)
    i = int(np.argmin(margin))
    worst = float(margin[i])
    verdict = "pass" if worst >= -tol else "fail"
    witness = None
    if verdict == "fail" or witness_arrays:
        witness = {k: np.asarray(v)[i].tolist() for k, v in (witness_arrays or {}).items()}
        witness["slack"] = float(slack[i])
    return CheckReport(cid, int(slack.size), worst, verdict, witness if verdict == "fail" else None,
                       details or {})


# --------------------------------------------------------------------------
# sampling


class FieldSampler:
    """Random grid functions for necessary-condition testing.

    Mixes smooth fields (Gaussian eigenmode coefficients with ``1/k`` decay),
    pure eigenmodes and rough nodal noise, each scaled by an amplitude drawn
    from ``amplitudes``.
    """

    def __init__(self, grid: Grid, seed=0, amplitudes=(0.1, 1.0, 10.0), n_modes=None):
        self.grid = grid
        self.rng = np.random.default_rng(seed)
        self.amplitudes = np.asarray(amplitudes, dtype=float)
        self.K = grid.n_interior if n_modes is None else min(n_modes, grid.n_interior)

    def _amp(self, n):
        return self.rng.choice(self.amplitudes, size=n)

    def smooth(self, n):
        k = np.arange(1, self.K + 1)
        c = self.rng.normal(size=(n, self.K)) / k
        c /= np.maximum(np.linalg.norm(c, axis=1, keepdims=True), 1e-300)
        return self._amp(n)[:, None] * (c @ self.grid.eigenmodes()[: self.K])

    def modes(self, n):
        idx = self.rng.integers(0, self.K, size=n)
        sign = self.rng.choice([-1.0, 1.0], size=n)
        return (self._amp(n) * sign)[:, None] * self.grid.eigenmodes()[idx]

    def rough(self, n):
        v = self.rng.normal(size=(n, self.grid.n_interior))
        v /= np.maximum(norm_values(v, self.grid, L2)[:, None], 1e-300)
        return self._amp(n)[:, None] * v

    def fields(self, n):
        parts = [self.smooth(n - 2 * (n // 3)), self.modes(n // 3), self.rough(n // 3)]
        return np.concatenate(parts, axis=0)

    def pairs(self, n):
        """Pairs ``(u, v)``: independent, nearby, and differing by one eigenmode."""
        n1 = n - 2 * (n // 3)
        u1, v1 = self.fields(n1), self.fields(n1)
        u2 = self.fields(n // 3)
        v2 = u2 + 1e-3 * self.fields(n // 3)
        u3 = self.fields(n // 3)
        v3 = u3 + self.modes(n // 3)
        return np.concatenate([u1, u2, u3]), np.concatenate([v1, v2, v3])

    def with_mode_probes(self, u, v):
        # Append exact eigenmode differences at every amplitude for sharp rate fits.
        base = self.fields(self.K)
        e = self.grid.eigenmodes()
        extra_u, extra_v = [base], [base + e]
        for a in self.amplitudes:
            extra_u.append(np.zeros_like(e))
            extra_v.append(a * e)
        return np.concatenate([u] + extra_u), np.concatenate([v] + extra_v)


def embedding_constant(grid_in: Grid, gram_in, grid_out: Grid, gram_out):
    """Smallest ``c`` with ``|x|_out <= c |x|_in`` for the pointwise identity map.

    Norms are ``|x|^2 = h x^T W x`` with the given Gram matrices ``W``.
    """
    a = grid_out.spacing * np.asarray(gram_out)
    b = grid_in.spacing * np.asarray(gram_in)
    top = linalg.eigh(a, b, eigvals_only=True)[-1]
    return float(np.sqrt(max(top, 0.0)))


def _identity_gram(grid):
    return np.eye(grid.n_interior)


def ch_rho(model: ModelSpec, u):
    """``|u|_V^{d(p-1)/2} |u|_H^{(4-d)(p-1)/2}`` with ``d = 1`` and cubic ``p = 3``."""
    return model.slow_v_norm(u) * model.slow_h_norm(u) ** 3


def _rho_weights(model, consts, u, v):
    if consts.rho_form == "cahn_hilliard":
        return consts.rho_scale * ch_rho(model, u), consts.rho_scale * ch_rho(model, v)
    return np.zeros(u.shape[0]), np.zeros(v.shape[0])


def _slow_sampler(model, seed):
    return FieldSampler(model.slow_grid, seed)


def _fast_sampler(model, seed):
    return FieldSampler(model.fast_grid, seed)


# --------------------------------------------------------------------------
# A1 / H1


def _jump_ratio_slack(values_coarse, values_fine, atol):
    # Max increment on a grid of spacing s versus s/2.  Continuous maps halve
    # (up to curvature); a jump keeps the same size.
    j_coarse = np.max(np.abs(np.diff(values_coarse, axis=-1)), axis=-1)
    j_fine = np.max(np.abs(np.diff(values_fine, axis=-1)), axis=-1)
    return 0.6 * j_coarse - j_fine + atol, j_coarse + j_fine + atol


def check_hemicontinuity(model: ModelSpec, line="slow", n_samples=60, seed=0, n_lambda=129, tol=DEFAULT_TOL):
    """A1 (slow) or H1 (fast) via refinement of ``lam -> <A(u + lam v), w>`` on ``[-1, 1]``."""
    if line == "slow":
        s = _slow_sampler(model, seed)
        pair = model.slow_pair_values

        def curve(u, v, w, lam):
            pts = u[:, None, :] + lam[None, :, None] * v[:, None, :]
            return pair(pts, w[:, None, :])

        def magnitude(u, v, w, lam):
            pts = u[:, None, :] + lam[None, :, None] * v[:, None, :]
            a = model.slow_h_norm(model.slow_drift_values(pts))
            return np.max(a, axis=-1) * model.slow_h_norm(w)
    else:
        s = _fast_sampler(model, seed)
        h = model.fast_grid.spacing

        def curve(u, v, w, lam):
            pts = u[:, None, :] + lam[None, :, None] * v[:, None, :]
            xs = xu[:, None, :] + lam[None, :, None] * xv[:, None, :]
            return h * np.sum(model.fast_drift_values(xs, pts) * w[:, None, :], axis=-1)

        def magnitude(u, v, w, lam):
            pts = u[:, None, :] + lam[None, :, None] * v[:, None, :]
            xs = xu[:, None, :] + lam[None, :, None] * xv[:, None, :]
            a = model.fast_h_norm(model.fast_drift_values(xs, pts))
            return np.max(a, axis=-1) * model.fast_h_norm(w)

        xs_sampler = _slow_sampler(model, seed + 1)
        xu, xv = xs_sampler.fields(n_samples), xs_sampler.fields(n_samples)
    u, v, w = s.fields(n_samples), s.fields(n_samples), s.fields(n_samples)
    lam_c = np.linspace(-1.0, 1.0, n_lambda)
    lam_f = np.linspace(-1.0, 1.0, 2 * n_lambda - 1)
    vc, vf = curve(u, v, w, lam_c), curve(u, v, w, lam_f)
    # Roundoff floor: cancellation in the pairing loses digits relative to |A| |w|.
    atol = 1e-9 * (1.0 + np.max(np.abs(vf), axis=-1)) + 1e-10 * magnitude(u, v, w, lam_f)
    slack, scale = _jump_ratio_slack(vc, vf, atol)
    cid = "A1" if line == "slow" else "H1"
    return _report(cid, slack, scale, {"u": u, "v": v, "w": w}, tol)


# --------------------------------------------------------------------------
# A2


def check_local_monotonicity(model: ModelSpec, consts: SlowHypothesisConstants, n_samples=300, seed=0,
                             tol=DEFAULT_TOL):
    s = _slow_sampler(model, seed)
    u, v = s.pairs(n_samples)
    u, v = s.with_mode_probes(u, v)
    w = u - v
    lhs = model.slow_pair_values(u, w) - model.slow_pair_values(v, w)
    rho_u, eta_v = _rho_weights(model, consts, u, v)
    hw2 = model.slow_h_norm(w) ** 2
    rhs = (consts.C + rho_u + eta_v) * hw2
    slack = rhs - lhs
    scale = np.abs(lhs) + np.abs(rhs)
    # Integrability of the weights: rho(u) + eta(u) <= C(1+|u|_V^a)(1+|u|_H^b).
    ru, eu = _rho_weights(model, consts, u, u)
    bound = consts.C * (1 + model.slow_v_norm(u) ** consts.alpha1) * (1 + model.slow_h_norm(u) ** consts.beta1)
    slack2 = bound - ru - eu
    scale2 = np.abs(bound) + ru + eu
    slack_all = np.concatenate([slack, slack2])
    scale_all = np.concatenate([scale, scale2])
    uu = np.concatenate([u, u])
    vv = np.concatenate([v, u])
    return _report("A2", slack_all, scale_all, {"u": uu, "v": vv}, tol)


# --------------------------------------------------------------------------
# A3 / H3


def _g_offset_norm(model):
    g0 = model.g_values(np.zeros(model.n_interior), np.zeros(model.n_interior))
    return float(norm_values(np.atleast_1d(g0) * np.ones(model.n_interior), model.fast_grid, L2))


def _g_x_embedding(model):
    return abs(model.fast.g.x_gain) * embedding_constant(model.slow_grid, model.slow_h_gram(), model.fast_grid,
                                                         _identity_gram(model.fast_grid))


def check_coercivity(model: ModelSpec, consts, line="slow", n_samples=300, seed=0, tol=DEFAULT_TOL):
    if line == "slow":
        s = _slow_sampler(model, seed)
        u = np.concatenate([s.fields(n_samples), np.zeros((1, model.n_interior))])
        pair = model.slow_pair_values(u, u)
        hs = model.slow_noise_hs_sq(u)
        vn = model.slow_v_norm(u)
        hn = model.slow_h_norm(u)
        lhs = 2 * pair + hs
        rhs = -consts.eta1 * vn**consts.alpha1 + consts.C * (1 + hn**2)
        slack = rhs - lhs
        scale = np.abs(2 * pair) + hs + consts.eta1 * vn**consts.alpha1 + consts.C * (1 + hn**2)
        return _report("A3", slack, scale, {"u": u}, tol)
    sy = _fast_sampler(model, seed)
    sx = _slow_sampler(model, seed + 1)
    y = np.concatenate([sy.fields(n_samples), np.zeros((1, model.n_interior))])
    x = np.concatenate([sx.fields(n_samples), np.zeros((1, model.n_interior))])
    h = model.fast_grid.spacing
    pair = h * np.sum(model.fast_drift_values(x, y) * y, axis=-1)
    yh = model.fast_h_norm(y)
    yv = model.fast_v_norm(y)
    xh = model.slow_h_norm(x)
    lhs = 2 * pair
    rhs = consts.C * yh**2 - consts.eta2 * yv**consts.alpha2 + consts.C * (1 + xh**2)
    slack = rhs - lhs
    scale = np.abs(lhs) + consts.C * yh**2 + consts.eta2 * yv**consts.alpha2 + consts.C * (1 + xh**2)
    return _report("H3", slack, scale, {"x": x, "y": y}, tol)


# --------------------------------------------------------------------------
# H2


def check_fast_strict_monotonicity(model: ModelSpec, consts: FastHypothesisConstants, n_samples=300, seed=0,
                                   tol=DEFAULT_TOL):
    """Fit ``kappa_hat = -max [2<A2(x,v1)-A2(x,v2), w> + |B2(v1)-B2(v2)|^2] / |w|^2``."""
    sy = _fast_sampler(model, seed)
    v1, v2 = sy.pairs(n_samples)
    v1, v2 = sy.with_mode_probes(v1, v2)
    sx = _slow_sampler(model, seed + 1)
    x = sx.fields(v1.shape[0])
    w = v1 - v2
    h = model.fast_grid.spacing
    keep = np.sum(w * w, axis=-1) > 0
    x, v1, v2, w = x[keep], v1[keep], v2[keep], w[keep]
    dA = model.fast_drift_values(x, v1) - model.fast_drift_values(x, v2)
    m = model.noise_fast.dependence
    dm = m.multiplier(model.fast_h_norm(v1)) - m.multiplier(model.fast_h_norm(v2))
    db2 = dm**2 * model.noise_fast.hs_sq_unit(model.fast_grid, L2)
    w2 = h * np.sum(w * w, axis=-1)
    ratio = (2 * h * np.sum(dA * w, axis=-1) + db2) / w2
    kappa_hat = float(-np.max(ratio))
    # Per-sample slack: -kappa|w|^2 - lhs >= 0.
    lhs = ratio * w2
    rhs = -consts.kappa * w2
    slack = rhs - lhs
    scale = np.abs(lhs) + np.abs(rhs)
    details = {
        "kappa_hat": kappa_hat,
        "kappa_declared": consts.kappa,
        "lambda": consts.lam,
        "gap": model.dissipativity_gap(),
        "effective_gap": model.effective_gap(),
    }
    return _report("H2", slack, scale, {"x": x, "v1": v1, "v2": v2}, tol, details)


# --------------------------------------------------------------------------
# A4 / H4


def check_growth(model: ModelSpec, consts, line="slow", n_samples=300, seed=0, tol=DEFAULT_TOL):
    if line == "slow":
        s = _slow_sampler(model, seed)
        u = np.concatenate([s.fields(n_samples), np.zeros((1, model.n_interior))])
        a = consts.alpha1
        drift = model.slow_drift_values(u)
        lhs = model.slow_vstar_norm(drift, u) ** (a / (a - 1))
        rhs = consts.C * (1 + model.slow_v_norm(u) ** a) * (1 + model.slow_h_norm(u) ** consts.beta1)
        return _report("A4", rhs - lhs, np.abs(lhs) + np.abs(rhs), {"u": u}, tol,
                       {"fitted_C": float(np.max(lhs / (rhs / consts.C))) if consts.C > 0 else None})
    sy = _fast_sampler(model, seed)
    sx = _slow_sampler(model, seed + 1)
    y = np.concatenate([sy.fields(n_samples), np.zeros((1, model.n_interior))])
    x = np.concatenate([sx.fields(n_samples), np.zeros((1, model.n_interior))])
    a = consts.alpha2
    lhs = model.fast_vstar_norm(model.fast_drift_values(x, y)) ** (a / (a - 1))
    xh = model.slow_h_norm(x)
    rhs = (consts.C * (1 + model.fast_v_norm(y) ** a) * (1 + model.fast_h_norm(y) ** consts.beta2)
           + consts.C * xh**2)
    slack1, scale1 = rhs - lhs, np.abs(lhs) + np.abs(rhs)
    # Uniform bound on B2 in the fast state.
    hs = np.sqrt(model.fast_noise_hs_sq(y))
    bound = consts.C * (1 + xh)
    slack2, scale2 = bound - hs, bound + hs
    sup = model.noise_fast.sup_hs(model.fast_grid)
    details = {"sup_B2_hs": sup, "sup_bound_ok": bool(np.isfinite(sup) and sup <= consts.C)}
    slack = np.concatenate([slack1, slack2, [consts.C - sup]])
    scale = np.concatenate([scale1, scale2, [consts.C + sup]])
    xx = np.concatenate([x, x, x[:1]])
    yy = np.concatenate([y, y, y[:1]])
    return _report("H4", slack, scale, {"x": xx, "y": yy}, tol, details)


# --------------------------------------------------------------------------
# Lipschitz maps


def declared_lipschitz(model: ModelSpec, map_id):
    sg, fg = model.slow_grid, model.fast_grid
    W = model.slow_h_gram()
    if map_id == "f":
        ly = model.coupling.lipschitz_y * embedding_constant(fg, _identity_gram(fg), sg, W)
        return max(model.coupling.lipschitz_x, ly)
    if map_id == "g":
        return max(_g_x_embedding(model), model.fast.Lg)
    if map_id == "B1":
        return model.noise_slow.lipschitz(sg, model.slow_h)
    if map_id == "B2":
        return model.L_B2
    raise ValueError(f"unknown map {map_id!r}")


def check_lipschitz(model: ModelSpec, map_id, n_samples=300, seed=0, tol=DEFAULT_TOL):
    sx, sy = _slow_sampler(model, seed), _fast_sampler(model, seed + 1)
    u1, u2 = sx.pairs(n_samples)
    v1, v2 = sy.pairs(n_samples)
    # Include pairs differing only in one argument, and identical pairs.
    u2 = u2.copy()
    v2 = v2.copy()
    k = n_samples // 6
    u2[:k] = u1[:k]
    v2[k:2 * k] = v1[k:2 * k]
    u2[-1], v2[-1] = u1[-1], v1[-1]
    sg, fg = model.slow_grid, model.fast_grid
    du = model.slow_h_norm(u1 - u2)
    dv = model.fast_h_norm(v1 - v2)
    if map_id == "f":
        num = model.slow_h_norm(model.f_values(u1, v1) - model.f_values(u2, v2))
        den = du + dv
    elif map_id == "g":
        num = model.fast_h_norm(model.g_values(u1, v1) - model.g_values(u2, v2))
        den = du + dv
    elif map_id == "B1":
        m = model.noise_slow.dependence
        dm = m.multiplier(model.slow_h_norm(u1)) - m.multiplier(model.slow_h_norm(u2))
        num = np.abs(dm) * np.sqrt(model.noise_slow.hs_sq_unit(sg, model.slow_h))
        den = du
    elif map_id == "B2":
        m = model.noise_fast.dependence
        dm = m.multiplier(model.fast_h_norm(v1)) - m.multiplier(model.fast_h_norm(v2))
        num = np.abs(dm) * np.sqrt(model.noise_fast.hs_sq_unit(fg, L2))
        den = du * 0.0 + dv
    else:
        raise ValueError(f"unknown map {map_id!r}")
    ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    declared = declared_lipschitz(model, map_id)
    bound = declared * (1 + 1e-8)
    slack = bound - ratio
    scale = np.maximum(np.maximum(bound, ratio), 1e-300)
    cid = {"f": "A5-f", "B1": "A5-B1", "g": "H-g", "B2": "H2-B2"}[map_id]
    return _report(cid, slack, scale, {"u1": u1, "u2": u2, "v1": v1, "v2": v2}, tol,
                   {"declared": declared, "max_ratio": float(np.max(ratio))})


def check_gap(model: ModelSpec):
    gap = model.dissipativity_gap()
    eff = model.effective_gap()
    worst = min(gap, eff)
    scale = 2 * model.lambda1_fast
    verdict = "pass" if worst > 0 else "fail"
    details = {"gap": gap, "effective_gap": eff, "lambda1": model.lambda1_fast, "Lg": model.fast.Lg,
               "L_B2": model.L_B2, "c1": model.fast.c1}
    witness = None if verdict == "pass" else {"gap": gap, "effective_gap": eff}
    return CheckReport("gap", 1, worst / scale, verdict, witness, details)


# --------------------------------------------------------------------------
# constants


def fit_slow_constants(model: ModelSpec, n_samples=2000, seed=12345):
    """Smallest constants passing A2-A4 on a large sample (no safety factor)."""
    s = _slow_sampler(model, seed)
    out = {}
    u = s.fields(n_samples)
    if isinstance(model.slow, CahnHilliard):
        u1, v1 = s.pairs(n_samples)
        u1, v1 = s.with_mode_probes(u1, v1)
        w = u1 - v1
        pair = model.slow_pair_values(u1, w) - model.slow_pair_values(v1, w)
        hw2 = model.slow_h_norm(w) ** 2
        C0 = 0.5 * model.slow.b**2
        weight = (ch_rho(model, u1) + ch_rho(model, v1)) * hw2
        excess = pair - C0 * hw2
        ok = weight > 0
        out["rho_scale"] = float(np.max(np.where(ok, excess / np.where(ok, weight, 1.0), 0.0)))
        out["C_A2"] = C0
        lhs = model.slow_vstar_norm(model.slow_drift_values(u), u) ** 2
        base = (1 + model.slow_v_norm(u) ** 2) * (1 + model.slow_h_norm(u) ** 4)
        out["C_A4"] = float(np.max(lhs / base))
    else:
        out["rho_scale"] = 0.0
        out["C_A2"] = 0.0
    return out


def default_slow_constants(model: ModelSpec) -> SlowHypothesisConstants:
    """Constants derived per variant; fitted values carry a factor-2 margin."""
    slow = model.slow
    hs_sup2 = model.noise_slow.sup_hs(model.slow_grid, model.slow_h) ** 2
    if isinstance(slow, PorousMedium):
        return SlowHypothesisConstants(alpha1=slow.m, beta1=0.0, eta1=2.0, C=max(1.0, hs_sup2))
    if isinstance(slow, CahnHilliard):
        fit = fit_slow_constants(model)
        C = max(1.0 + slow.b**2 + hs_sup2, fit["C_A2"], 2.0 * fit["C_A4"])
        return SlowHypothesisConstants(alpha1=2.0, beta1=4.0, eta1=1.0, C=C, rho_form="cahn_hilliard",
                                       rho_scale=2.0 * fit["rho_scale"])
    a = slow.a
    return SlowHypothesisConstants(alpha1=2.0, beta1=0.0, eta1=2.0 * abs(a) if a != 0 else 1.0,
                                   C=max(2.0 * abs(a) + hs_sup2, a * a, 1e-12))


def default_fast_constants(model: ModelSpec) -> FastHypothesisConstants:
    """Theory-based constants for the reaction-diffusion fast drift."""
    c1, c2 = model.fast.c1, model.fast.c2
    ly = model.fast.Lg
    g00 = _g_offset_norm(model)
    lxe = _g_x_embedding(model)
    C3 = max(2.0 + 2.0 * c1 + 2.0 * ly, 2.0 * g00**2, 2.0 * lxe**2)
    C4 = 5.0 * max(1.0 + (c1 + ly) ** 2, g00**2, lxe**2, 4.0 * c2**2)
    sup = model.noise_fast.sup_hs(model.fast_grid)
    C = max(C3, C4, sup)
    gap = model.effective_gap()
    kappa = gap if gap > 0 else 1e-6
    return FastHypothesisConstants(alpha2=2.0, beta2=4.0 if c2 > 0 else 0.0, eta2=1.0, kappa=kappa,
                                   lam=0.5 * kappa, C=C, gap=model.dissipativity_gap())


def run_all(model: ModelSpec, slow_consts=None, fast_consts=None, n_samples=300, seed=0, tol=DEFAULT_TOL):
    """Every slow and fast check; returns a list of :class:`CheckReport`."""
    slow_consts = slow_consts or default_slow_constants(model)
    fast_consts = fast_consts or default_fast_constants(model)
    reports = [
        check_hemicontinuity(model, "slow", max(20, n_samples // 5), seed, tol=tol),
        check_local_monotonicity(model, slow_consts, n_samples, seed + 1, tol),
        check_coercivity(model, slow_consts, "slow", n_samples, seed + 2, tol),
        check_growth(model, slow_consts, "slow", n_samples, seed + 3, tol),
        check_lipschitz(model, "f", n_samples, seed + 4, tol),
        check_lipschitz(model, "B1", n_samples, seed + 5, tol),
        check_hemicontinuity(model, "fast", max(20, n_samples // 5), seed + 6, tol=tol),
        check_fast_strict_monotonicity(model, fast_consts, n_samples, seed + 7, tol),
        check_lipschitz(model, "B2", n_samples, seed + 8, tol),
        check_coercivity(model, fast_consts, "fast", n_samples, seed + 9, tol),
        check_growth(model, fast_consts, "fast", n_samples, seed + 10, tol),
        check_lipschitz(model, "g", n_samples, seed + 11, tol),
        check_gap(model),
    ]
    return reports


def reports_to_json(reports, **extra):
    payload = dict(extra)
    payload["checks"] = [r.to_dict() for r in reports]
    payload["all_pass"] = all(r.passed for r in reports)
    return json.dumps(payload, indent=2, sort_keys=True)


def linear_kappa(model: ModelSpec):
    """``2 (lambda_1 - c1)`` minus the coupling's own contribution (exact for linear fast drifts)."""
    F = model.fast.g.F if isinstance(model.fast.g, Affine) else 0.0
    return 2.0 * (model.lambda1_fast - model.fast.c1 - F)

