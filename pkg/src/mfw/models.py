"""Coefficient catalog for the slow-fast system.

Slow drifts (porous medium, Cahn-Hilliard, linear heat), pointwise couplings,
mode-diagonal noise operators and the reaction-diffusion fast drift.  Every
coefficient has a batched array form (last axis = grid nodes) used by the
integrators, plus a :class:`~mfw.field.Field` form matching the public API.

The stiff linear part of each slow drift is exposed separately
(:meth:`ModelSpec.slow_linear_matrix`) so integrators can treat it implicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import cached_property, lru_cache
from typing import Union

import numpy as np

from .errors import ConfigurationError
from .field import BC, HM1, H1, L2, Field, Grid, Lp, NormKind, norm_values, rowmat

__all__ = [
    "PorousMedium",
    "CahnHilliard",
    "LinearDiagnostic",
    "Affine",
    "BoundedLip",
    "Additive",
    "LinearClipped",
    "NoiseSpec",
    "FastOperatorSpec",
    "ModelSpec",
    "psi",
    "slow_drift",
    "slow_pair",
    "fast_drift",
    "coupling_f",
    "noise_apply",
    "noise_hs_norm_sq",
    "gap_formula",
]


def gap_formula(lambda1, Lg, L_B2):
    """Dissipativity margin ``2 lambda_1 - 2 L_g - L_B2^2`` of the fast drift."""
    return 2.0 * lambda1 - 2.0 * Lg - L_B2**2


# --------------------------------------------------------------------------
# slow operators


@dataclass(frozen=True)
class PorousMedium:
    """Drift ``Lap Psi(u)`` with ``Psi(s) = |s|^(r-1) s``.

    ``stabilization`` is the coefficient ``s`` of the linear part ``s*Lap u``
    that integrators move to the implicit side.
    """

    r: float = 3.0
    stabilization: float = 1.0

    bc = BC.DIRICHLET
    h_kind = HM1

    def __post_init__(self):
        if not self.r >= 1:
            raise ConfigurationError("porous-medium exponent r must be >= 1", field="slow.r")
        if not self.stabilization >= 0:
            raise ConfigurationError("stabilization must be >= 0", field="slow.stabilization")

    @property
    def m(self):
        return self.r + 1.0

    @property
    def alpha(self):
        return self.m


@dataclass(frozen=True)
class CahnHilliard:
    """Drift ``-Lap^2 u + Lap phi(u)`` with ``phi(x) = a x^3 + b x``."""

    a: float = 1.0
    b: float = -1.0

    bc = BC.NEUMANN
    h_kind = L2
    alpha = 2.0

    def __post_init__(self):
        if not self.a > 0:
            raise ConfigurationError("Cahn-Hilliard cubic coefficient a must be > 0", field="slow.a")

    def potential_derivative(self, x):
        return self.a * x**3 + self.b * x

    def potential_second_derivative(self, x):
        return 3.0 * self.a * x**2 + self.b


@dataclass(frozen=True)
class LinearDiagnostic:
    """Drift ``a Lap u`` (heat equation for ``a > 0``)."""

    a: float = 1.0

    bc = BC.DIRICHLET
    h_kind = L2
    alpha = 2.0


SlowVariant = Union[PorousMedium, CahnHilliard, LinearDiagnostic]


def psi(s, r):
    """Porous-medium nonlinearity ``|s|^(r-1) s``."""
    s = np.asarray(s, dtype=float)
    return np.abs(s) ** (r - 1.0) * s


def _dpsi(s, r):
    return r * np.abs(s) ** (r - 1.0)


# --------------------------------------------------------------------------
# couplings


@dataclass(frozen=True)
class Affine:
    """``x_gain * x + offset + F * y`` pointwise."""

    x_gain: float = 0.0
    offset: float = 0.0
    F: float = 0.0

    @property
    def lipschitz_x(self):
        return abs(self.x_gain)

    @property
    def lipschitz_y(self):
        return abs(self.F)

    @property
    def depends_on_y(self):
        return self.F != 0.0

    def __call__(self, x, y):
        return self.x_gain * x + self.offset + self.F * y

    def dx(self, x, y):
        return np.full(np.shape(x), float(self.x_gain))

    def dy(self, x, y):
        return np.full(np.shape(y), float(self.F))


@dataclass(frozen=True)
class BoundedLip:
    """``x_gain * x + gain * sin(y)`` pointwise (bounded in ``y``)."""

    gain: float = 1.0
    x_gain: float = 0.0

    @property
    def lipschitz_x(self):
        return abs(self.x_gain)

    @property
    def lipschitz_y(self):
        return abs(self.gain)

    @property
    def depends_on_y(self):
        return self.gain != 0.0

    def __call__(self, x, y):
        return self.x_gain * x + self.gain * np.sin(y)

    def dx(self, x, y):
        return np.full(np.shape(x), float(self.x_gain))

    def dy(self, x, y):
        return self.gain * np.cos(y)


CouplingSpec = Union[Affine, BoundedLip]


# --------------------------------------------------------------------------
# noise


@dataclass(frozen=True)
class Additive:
    def multiplier(self, state_norm):
        return np.ones_like(np.asarray(state_norm, dtype=float))

    def multiplier_slope(self, state_norm):
        return np.zeros_like(np.asarray(state_norm, dtype=float))

    lipschitz = 0.0


@dataclass(frozen=True)
class LinearClipped:
    """State multiplier ``min(1 + slope*|state|_H, cap)``."""

    slope: float = 0.0
    cap: float = 1.0

    def __post_init__(self):
        if not self.slope >= 0:
            raise ConfigurationError("noise slope must be >= 0", field="noise.slope")
        if not self.cap > 0:
            raise ConfigurationError("noise cap must be > 0", field="noise.cap")

    def multiplier(self, state_norm):
        return np.minimum(1.0 + self.slope * np.asarray(state_norm, dtype=float), self.cap)

    def multiplier_slope(self, state_norm):
        # d multiplier / d |state|; zero on the clipped branch.
        state_norm = np.asarray(state_norm, dtype=float)
        return np.where(1.0 + self.slope * state_norm < self.cap, self.slope, 0.0)

    @property
    def lipschitz(self):
        return self.slope


@dataclass(frozen=True)
class NoiseSpec:
    """Noise ``z -> m(state) * sum_k b_k z_k e_k`` on the first ``n_modes`` eigenmodes."""

    mode_coeffs: tuple = (1.0,)
    dependence: Union[Additive, LinearClipped] = dc_field(default_factory=Additive)

    def __post_init__(self):
        b = tuple(float(c) for c in np.atleast_1d(self.mode_coeffs))
        if len(b) == 0:
            raise ConfigurationError("noise needs at least one mode", field="noise.coeffs")
        if any(not np.isfinite(c) or c < 0 for c in b):
            raise ConfigurationError("noise mode coefficients must be finite and >= 0", field="noise.coeffs")
        object.__setattr__(self, "mode_coeffs", b)

    @property
    def n_modes(self):
        return len(self.mode_coeffs)

    @property
    def coeffs(self):
        return np.asarray(self.mode_coeffs)

    def basis(self, grid: Grid):
        """Rows ``b_k e_k`` (shape ``(n_modes, n)``)."""
        if self.n_modes > grid.n_interior:
            raise ConfigurationError(
                f"noise uses {self.n_modes} modes but the grid has {grid.n_interior}", field="noise.coeffs")
        return _noise_basis(self, grid)

    def hs_sq_unit(self, grid: Grid, kind: NormKind = L2):
        """``sum_k b_k^2 |e_k|_kind^2`` (Hilbert-Schmidt norm squared at multiplier 1)."""
        lam = grid.eigenvalues()[: self.n_modes]
        b2 = self.coeffs**2
        if kind.tag == "L2":
            return float(np.sum(b2))
        if kind.tag == "Hm1dual":
            return float(np.sum(b2 / -lam))
        raise ValueError("Hilbert-Schmidt norm is defined for L2 and Hm1dual targets")

    def lipschitz(self, grid: Grid, kind: NormKind = L2):
        """Lipschitz constant of ``state -> B(state)`` into Hilbert-Schmidt operators."""
        return float(self.dependence.lipschitz * np.sqrt(self.hs_sq_unit(grid, kind)))

    def sup_hs(self, grid: Grid, kind: NormKind = L2):
        """Uniform bound of the Hilbert-Schmidt norm over all states (inf if unbounded)."""
        top = 1.0
        if isinstance(self.dependence, LinearClipped):
            d = self.dependence
            top = d.cap if d.slope > 0 else min(1.0, d.cap)
        return float(top * np.sqrt(self.hs_sq_unit(grid, kind)))

    def apply_values(self, state, z, grid: Grid, kind: NormKind = L2):
        """Batched ``B(state) z``: ``state`` (..., n), ``z`` (..., n_modes)."""
        mult = self.dependence.multiplier(norm_values(state, grid, kind))
        return np.asarray(mult)[..., None] * rowmat(z, self.basis(grid))


@lru_cache(maxsize=None)
def _noise_basis(spec, grid):
    out = np.asarray(spec.mode_coeffs)[:, None] * grid.eigenmodes()[: spec.n_modes]
    out.setflags(write=False)
    return out


# --------------------------------------------------------------------------
# fast operator


@dataclass(frozen=True)
class FastOperatorSpec:
    """Fast drift ``Lap y + c1 y - c2 y^3 + g(x, y)`` (Dirichlet grid)."""

    c1: float = 0.0
    c2: float = 0.0
    g: CouplingSpec = dc_field(default_factory=Affine)
    Lg: float = None

    def __post_init__(self):
        if not (self.c1 >= 0 and self.c2 >= 0):
            raise ConfigurationError("reaction coefficients c1, c2 must be >= 0", field="fast.c1")
        lg = self.g.lipschitz_y if self.Lg is None else float(self.Lg)
        if lg < 0:
            raise ConfigurationError("Lg must be >= 0", field="fast.Lg")
        if lg < self.g.lipschitz_y * (1 - 1e-12):
            raise ConfigurationError(
                f"declared Lg={lg} is below the coupling's Lipschitz constant {self.g.lipschitz_y}",
                field="fast.Lg")
        object.__setattr__(self, "Lg", lg)

    @property
    def is_linear(self):
        return self.c2 == 0.0 and isinstance(self.g, Affine)


# --------------------------------------------------------------------------
# full model


@dataclass(frozen=True)
class ModelSpec:
    slow: SlowVariant = dc_field(default_factory=LinearDiagnostic)
    fast: FastOperatorSpec = dc_field(default_factory=FastOperatorSpec)
    coupling: CouplingSpec = dc_field(default_factory=Affine)
    noise_slow: NoiseSpec = dc_field(default_factory=NoiseSpec)
    noise_fast: NoiseSpec = dc_field(default_factory=NoiseSpec)
    n_interior: int = 8
    length: float = 1.0

    def __post_init__(self):
        for name, spec in (("noise_slow", self.noise_slow), ("noise_fast", self.noise_fast)):
            if spec.n_modes > self.n_interior:
                raise ConfigurationError(
                    f"{name} uses {spec.n_modes} modes but n_interior={self.n_interior}", field=f"{name}.coeffs")

    # grids and norms --------------------------------------------------
    @cached_property
    def slow_grid(self):
        return Grid(self.n_interior, self.length, self.slow.bc)

    @cached_property
    def fast_grid(self):
        return Grid(self.n_interior, self.length, BC.DIRICHLET)

    @property
    def slow_h(self) -> NormKind:
        return self.slow.h_kind

    def slow_h_norm(self, x):
        return norm_values(x, self.slow_grid, self.slow_h)

    def fast_h_norm(self, y):
        return norm_values(y, self.fast_grid, L2)

    def slow_h_gram(self):
        """Matrix ``W`` with ``|x|_H^2 = h x^T W x``."""
        g = self.slow_grid
        if self.slow_h.tag == "Hm1dual":
            return g.inverse_neg_laplacian()
        return np.eye(g.n_interior)

    def slow_v_norm(self, x):
        g = self.slow_grid
        if isinstance(self.slow, PorousMedium):
            return norm_values(x, g, Lp(self.slow.m))
        if isinstance(self.slow, CahnHilliard):
            lap_x = rowmat(x, g.laplacian_matrix().T)
            return np.sqrt(g.spacing * (np.sum(x * x, axis=-1) + np.sum(lap_x * lap_x, axis=-1)))
        return norm_values(x, g, H1)

    def slow_vstar_norm(self, w, x=None):
        """Dual norm of a drift value ``w`` in the slow V*.

        For the porous-medium triple the drift ``Lap Psi(x)`` is identified with
        ``-Psi(x)`` acting on ``L^m``, so ``x`` is required and the dual norm is
        the ``L^{m'}`` norm of ``Psi(x)``.
        """
        g = self.slow_grid
        h = g.spacing
        if isinstance(self.slow, PorousMedium):
            m = self.slow.m
            return norm_values(psi(x, self.slow.r), g, Lp(m / (m - 1.0)))
        return np.sqrt(np.maximum(h * np.sum(w * rowmat(w, _slow_vstar_gram(self.slow_grid, type(self.slow)).T),
                                               axis=-1), 0.0))

    def fast_vstar_norm(self, w):
        g = self.fast_grid
        gram = _slow_vstar_gram(g, LinearDiagnostic)
        return np.sqrt(np.maximum(g.spacing * np.sum(w * rowmat(w, gram.T), axis=-1), 0.0))

    def fast_v_norm(self, y):
        return norm_values(y, self.fast_grid, H1)

    # slow drift -------------------------------------------------------
    def slow_drift_values(self, x):
        L = self.slow_grid.laplacian_matrix()
        s = self.slow
        if isinstance(s, PorousMedium):
            return rowmat(psi(x, s.r), L.T)
        if isinstance(s, CahnHilliard):
            return -rowmat(rowmat(x, L.T), L.T) + rowmat(s.potential_derivative(x), L.T)
        return s.a * rowmat(x, L.T)

    def slow_linear_matrix(self):
        """Linear part of the slow drift treated implicitly."""
        L = np.asarray(self.slow_grid.laplacian_matrix())
        s = self.slow
        if isinstance(s, PorousMedium):
            return s.stabilization * L
        if isinstance(s, CahnHilliard):
            return -L @ L + s.b * L
        return s.a * L

    def slow_explicit_values(self, x):
        """Slow drift minus its implicit linear part."""
        L = self.slow_grid.laplacian_matrix()
        s = self.slow
        if isinstance(s, PorousMedium):
            return rowmat(psi(x, s.r) - s.stabilization * x, L.T)
        if isinstance(s, CahnHilliard):
            return rowmat(s.a * x**3, L.T)
        return np.zeros_like(x)

    def slow_explicit_jacobian(self, x):
        """Jacobian of :meth:`slow_explicit_values` at a single state ``x``."""
        L = np.asarray(self.slow_grid.laplacian_matrix())
        s = self.slow
        if isinstance(s, PorousMedium):
            return L * (_dpsi(x, s.r) - s.stabilization)[None, :]
        if isinstance(s, CahnHilliard):
            return L * (3.0 * s.a * x**2)[None, :]
        return np.zeros((x.size, x.size))

    def slow_pair_values(self, x, v):
        """Duality pairing of the slow drift at ``x`` with ``v`` (batched)."""
        h = self.slow_grid.spacing
        if isinstance(self.slow, PorousMedium):
            return -h * np.sum(psi(x, self.slow.r) * v, axis=-1)
        return h * np.sum(self.slow_drift_values(x) * v, axis=-1)

    # coupling and fast drift -----------------------------------------
    def f_values(self, x, y):
        return self.coupling(x, y)

    def g_values(self, x, y):
        return self.fast.g(x, y)

    def fast_reaction_explicit(self, y):
        return self.fast.c1 * y - self.fast.c2 * y**3

    def fast_drift_values(self, x, y):
        L = self.fast_grid.laplacian_matrix()
        return rowmat(y, L.T) + self.fast_reaction_explicit(y) + self.g_values(x, y)

    # noise ------------------------------------------------------------
    def slow_noise_values(self, x, z):
        return self.noise_slow.apply_values(x, z, self.slow_grid, self.slow_h)

    def fast_noise_values(self, y, z):
        return self.noise_fast.apply_values(y, z, self.fast_grid, L2)

    def slow_noise_hs_sq(self, x):
        mult = self.noise_slow.dependence.multiplier(self.slow_h_norm(x))
        return mult**2 * self.noise_slow.hs_sq_unit(self.slow_grid, self.slow_h)

    def fast_noise_hs_sq(self, y):
        mult = self.noise_fast.dependence.multiplier(self.fast_h_norm(y))
        return mult**2 * self.noise_fast.hs_sq_unit(self.fast_grid, L2)

    def slow_noise_jacobian_action(self, x, u):
        """Jacobian of ``x -> B1(x) u`` at a single state (for adjoints)."""
        g = self.slow_grid
        base = u @ self.noise_slow.basis(g)
        nrm = float(self.slow_h_norm(x))
        dm = float(self.noise_slow.dependence.multiplier_slope(nrm))
        if dm == 0.0 or nrm == 0.0:
            return np.zeros((x.size, x.size))
        grad_norm = g.spacing * (self.slow_h_gram() @ x) / nrm
        return dm * np.outer(base, grad_norm)

    # derived constants -------------------------------------------------
    @property
    def lambda1_fast(self):
        """Smallest eigenvalue of ``-Lap`` on the fast grid."""
        return float(-self.fast_grid.eigenvalues()[0])

    @property
    def L_B2(self):
        return self.noise_fast.lipschitz(self.fast_grid, L2)

    def dissipativity_gap(self):
        """``2 lambda_1 - 2 L_g - L_B2^2`` with the discrete ``lambda_1``."""
        return gap_formula(self.lambda1_fast, self.fast.Lg, self.L_B2)

    def effective_gap(self):
        """Gap including the destabilizing linear reaction ``c1``."""
        return self.dissipativity_gap() - 2.0 * self.fast.c1

    def check_bc(self, grid: Grid):
        if grid.bc is not self.slow.bc:
            raise ConfigurationError(
                f"{type(self.slow).__name__} requires {self.slow.bc.value} boundary conditions, got {grid.bc.value}",
                field="grid.bc")


@lru_cache(maxsize=None)
def _slow_vstar_gram(grid, variant_type):
    # V-norm Gram G (|u|_V^2 = h u^T G u); the dual norm uses G^{-1}.
    L = np.asarray(grid.laplacian_matrix())
    eye = np.eye(grid.n_interior)
    gram = eye + L @ L if variant_type is CahnHilliard else eye - L
    inv = np.linalg.inv(gram)
    inv = 0.5 * (inv + inv.T)
    inv.setflags(write=False)
    return inv


# --------------------------------------------------------------------------
# Field-level operations


def _variant_for(spec):
    return spec.slow if isinstance(spec, ModelSpec) else spec


def _model_for_slow(spec, grid: Grid):
    variant = _variant_for(spec)
    if grid.bc is not variant.bc:
        raise ConfigurationError(
            f"{type(variant).__name__} requires {variant.bc.value} boundary conditions, got {grid.bc.value}",
            field="grid.bc")
    return ModelSpec(slow=variant, n_interior=grid.n_interior, length=grid.length,
                     noise_slow=NoiseSpec((0.0,)), noise_fast=NoiseSpec((0.0,)))


def slow_drift(spec, u: Field) -> Field:
    model = _model_for_slow(spec, u.grid)
    return Field(model.slow_drift_values(u.values), u.grid)


def slow_pair(spec, u: Field, v: Field) -> float:
    if u.grid != v.grid:
        raise ConfigurationError("pairing of fields on different grids")
    model = _model_for_slow(spec, u.grid)
    out = model.slow_pair_values(u.values, v.values)
    return float(out) if np.ndim(out) == 0 else out


def fast_drift(spec: FastOperatorSpec, x: Field, y: Field) -> Field:
    if x.grid.n_interior != y.grid.n_interior:
        raise ConfigurationError("slow and fast grids must share n_interior", field="grid.n_interior")
    if y.grid.bc is not BC.DIRICHLET:
        raise ConfigurationError("fast grid must be Dirichlet", field="grid.bc")
    L = y.grid.laplacian_matrix()
    yv = y.values
    return Field(rowmat(yv, L.T) + spec.c1 * yv - spec.c2 * yv**3 + spec.g(x.values, yv), y.grid)


def coupling_f(spec, x: Field, y: Field) -> Field:
    if x.grid.n_interior != y.grid.n_interior:
        raise ConfigurationError("slow and fast grids must share n_interior", field="grid.n_interior")
    return Field(spec(x.values, y.values), x.grid)


def noise_apply(spec: NoiseSpec, state: Field, z, kind: NormKind = L2) -> Field:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != spec.n_modes:
        raise ValueError(f"expected {spec.n_modes} noise coordinates, got {z.shape[-1]}")
    return Field(spec.apply_values(state.values, z, state.grid, kind), state.grid)


def noise_hs_norm_sq(spec: NoiseSpec, state: Field, kind: NormKind = L2) -> float:
    mult = spec.dependence.multiplier(norm_values(state.values, state.grid, kind))
    out = mult**2 * spec.hs_sq_unit(state.grid, kind)
    return float(out) if np.ndim(out) == 0 else out
