"""Uniform 1D grids, grid functions and the norms of the function-space triples.

Dirichlet grids use vertex-centred nodes ``x_i = i h`` (``i = 1..n``) with
``h = L/(n+1)`` and zero boundary values.  Neumann grids use cell-centred
nodes ``x_i = (i - 1/2) h`` with ``h = L/n`` and mirrored ghost values, which
keeps the second-difference matrix symmetric with closed-form cosine
eigenpairs.

All operators act on the last axis, so a :class:`Field` may carry leading batch
dimensions (an ensemble of grid functions on the same grid).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numba as nb
import numpy as np
from scipy import linalg

__all__ = [
    "BC",
    "Grid",
    "Field",
    "NormKind",
    "L2",
    "H1",
    "HM1",
    "Lp",
    "laplacian",
    "bilaplacian",
    "norm",
    "inner",
    "rowmat",
]


@nb.njit(cache=True)
def _rowmat(a, m, out):
    n, k = a.shape
    p = m.shape[1]
    for r in range(n):
        for j in range(p):
            out[r, j] = 0.0
        for i in range(k):
            ari = a[r, i]
            for j in range(p):
                out[r, j] += ari * m[i, j]


def rowmat(a, m):
    """``a @ m`` over the last axis of ``a`` with arithmetic independent of the batch shape.

    BLAS picks kernels by matrix size, so a row's result can change with the
    number of rows in the batch; this keeps every path bit-reproducible when
    replayed alone or inside any ensemble.
    """
    a = np.asarray(a, dtype=float)
    m = np.ascontiguousarray(m, dtype=float)
    a2 = np.ascontiguousarray(a.reshape(-1, a.shape[-1]))
    out = np.empty((a2.shape[0], m.shape[1]))
    _rowmat(a2, m, out)
    return out.reshape(a.shape[:-1] + (m.shape[1],))


class BC(str, enum.Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"


@dataclass(frozen=True)
class Grid:
    n_interior: int
    length: float = 1.0
    bc: BC = BC.DIRICHLET

    def __post_init__(self):
        # one Dirichlet node is the single-mode reduction; Neumann needs two for a non-trivial mode
        least = 1 if BC(self.bc) is BC.DIRICHLET else 2
        if int(self.n_interior) != self.n_interior or self.n_interior < least:
            raise ValueError(f"n_interior must be an integer >= {least}")
        if not (self.length > 0 and np.isfinite(self.length)):
            raise ValueError("length must be positive and finite")
        object.__setattr__(self, "n_interior", int(self.n_interior))
        object.__setattr__(self, "length", float(self.length))
        object.__setattr__(self, "bc", BC(self.bc))

    @property
    def n(self):
        return self.n_interior

    @property
    def spacing(self):
        if self.bc is BC.DIRICHLET:
            return self.length / (self.n_interior + 1)
        return self.length / self.n_interior

    @property
    def nodes(self):
        h = self.spacing
        i = np.arange(1, self.n_interior + 1)
        return i * h if self.bc is BC.DIRICHLET else (i - 0.5) * h

    def laplacian_matrix(self):
        return _laplacian_matrix(self)

    def eigenvalues(self):
        """Eigenvalues of the discrete Laplacian (non-positive), slowest mode first."""
        return _eigenpairs(self)[0]

    def eigenmodes(self):
        """Rows are eigenmodes normalized so that ``h * sum(e_k**2) = 1``."""
        return _eigenpairs(self)[1]

    def inverse_neg_laplacian(self):
        return _inverse_neg_laplacian(self)

    def field(self, values):
        return Field(values, self)

    def zeros(self):
        return Field(np.zeros(self.n_interior), self)

    def from_modes(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        return Field(rowmat(coeffs, self.eigenmodes()[: coeffs.shape[-1]]), self)

    def to_modes(self, values):
        values = values.values if isinstance(values, Field) else np.asarray(values)
        return self.spacing * rowmat(values, self.eigenmodes().T)


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@lru_cache(maxsize=None)
def _laplacian_matrix(grid):
    n, h = grid.n_interior, grid.spacing
    lap = (np.diag(np.full(n, -2.0)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1))
    if grid.bc is BC.NEUMANN:
        lap[0, 0] = lap[-1, -1] = -1.0
    return _readonly(lap / h**2)


@lru_cache(maxsize=None)
def _eigenpairs(grid):
    n, h, L = grid.n_interior, grid.spacing, grid.length
    if grid.bc is BC.DIRICHLET:
        k = np.arange(1, n + 1)
        modes = np.sin(np.outer(k, grid.nodes) * np.pi / L)
    else:
        k = np.arange(0, n)
        modes = np.cos(np.outer(k, grid.nodes) * np.pi / L)
    lam = -(2.0 / h**2) * (1.0 - np.cos(k * np.pi * h / L))
    modes /= np.sqrt(h * np.sum(modes**2, axis=1))[:, None]
    return _readonly(lam), _readonly(modes)


@lru_cache(maxsize=None)
def _inverse_neg_laplacian(grid):
    if grid.bc is not BC.DIRICHLET:
        raise ValueError("dual norm requires Dirichlet Laplacian")
    inv = linalg.inv(-_laplacian_matrix(grid))
    return _readonly(0.5 * (inv + inv.T))


class Field:
    """Immutable grid function; ``values.shape[-1] == grid.n_interior``."""

    __slots__ = ("_values", "_grid")

    def __init__(self, values, grid: Grid):
        v = np.array(values, dtype=float)
        if v.ndim == 0 or v.shape[-1] != grid.n_interior:
            raise ValueError(f"expected trailing length {grid.n_interior}, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        self._values = v
        self._grid = grid

    @property
    def values(self):
        return self._values

    @property
    def grid(self):
        return self._grid

    def __repr__(self):
        return f"Field(shape={self._values.shape}, grid={self._grid})"

    def _check(self, other):
        if not isinstance(other, Field):
            return other
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")
        return other.values

    def __add__(self, other):
        return Field(self._values + self._check(other), self._grid)

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self._values - self._check(other), self._grid)

    def __rsub__(self, other):
        return Field(self._check(other) - self._values, self._grid)

    def __mul__(self, s):
        return Field(self._values * self._check(s), self._grid)

    __rmul__ = __mul__

    def __neg__(self):
        return Field(-self._values, self._grid)

    def __eq__(self, other):
        return (isinstance(other, Field) and other.grid == self.grid
                and np.array_equal(other.values, self._values))

    __hash__ = None


@dataclass(frozen=True)
class NormKind:
    tag: str
    p: float = 2.0

    def __post_init__(self):
        if self.tag not in ("L2", "H1sobolev", "Hm1dual", "Lp"):
            raise ValueError(f"unknown norm kind {self.tag!r}")
        if self.tag == "Lp" and not self.p >= 1:
            raise ValueError("Lp norm requires p >= 1")


L2 = NormKind("L2")
H1 = NormKind("H1sobolev")
HM1 = NormKind("Hm1dual")


def Lp(p):
    return NormKind("Lp", float(p))


def _vals(u):
    if isinstance(u, Field):
        return u.values, u.grid
    raise TypeError("expected a Field")


def laplacian(u: Field) -> Field:
    v, g = _vals(u)
    return Field(rowmat(v, g.laplacian_matrix().T), g)


def bilaplacian(u: Field) -> Field:
    v, g = _vals(u)
    lap = g.laplacian_matrix()
    return Field(rowmat(rowmat(v, lap.T), lap.T), g)


def _grad_sq(v, g):
    # h * sum of squared one-sided differences, boundary closure per bc.
    h = g.spacing
    d = np.diff(v, axis=-1) / h
    s = np.sum(d**2, axis=-1)
    if g.bc is BC.DIRICHLET:
        s = s + (v[..., 0] ** 2 + v[..., -1] ** 2) / h**2
    return h * s


def norm_values(v, grid: Grid, kind: NormKind = L2):
    """Norm of raw value arrays (last axis on ``grid``)."""
    h = grid.spacing
    if kind.tag == "L2":
        return np.sqrt(h * np.sum(v * v, axis=-1))
    if kind.tag == "Lp":
        return (h * np.sum(np.abs(v) ** kind.p, axis=-1)) ** (1.0 / kind.p)
    if kind.tag == "H1sobolev":
        return np.sqrt(h * np.sum(v * v, axis=-1) + _grad_sq(v, grid))
    w = rowmat(v, grid.inverse_neg_laplacian().T)
    return np.sqrt(np.maximum(h * np.sum(v * w, axis=-1), 0.0))


def inner_values(u, v, grid: Grid, kind: NormKind = L2):
    h = grid.spacing
    if kind.tag == "L2":
        return h * np.sum(u * v, axis=-1)
    if kind.tag == "Hm1dual":
        return h * np.sum(u * rowmat(v, grid.inverse_neg_laplacian().T), axis=-1)
    raise ValueError(f"{kind.tag} is not an inner-product norm here")


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def norm(u: Field, kind: NormKind = L2):
    v, g = _vals(u)
    return _scalar(norm_values(v, g, kind))


def inner(u: Field, v: Field, kind: NormKind = L2):
    a, g = _vals(u)
    b, g2 = _vals(v)
    if g != g2:
        raise ValueError("fields live on different grids")
    return _scalar(inner_values(a, b, g, kind))
