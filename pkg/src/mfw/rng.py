"""Counter-based Gaussian increments.

Every standard normal is a pure function of
``(master_seed, path, step, line, mode)``: a Philox4x32-10 block keyed by the
seed is evaluated at counter ``(mode | attempt << 20, step, line, path)`` and
turned into a normal with a 128-layer ziggurat.  No generator state is carried
between draws, so ensembles can be split over any number of threads (or
replayed one path at a time) and produce identical numbers.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numba as nb
import numpy as np

__all__ = [
    "SLOW",
    "FAST",
    "philox4x32",
    "standard_normal",
    "WienerDriver",
    "set_threads",
]

SLOW = 0
FAST = 1

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S4 = np.uint64(4)
_S5 = np.uint64(5)
_S6 = np.uint64(6)
_S7 = np.uint64(7)
_LOW7 = np.uint64(0x7F)
_ATTEMPT_SHIFT = np.uint64(20)
_INV53 = 1.0 / 9007199254740992.0

# Ziggurat tables for 128 layers (Doornik's ZIGNOR layout).
_ZIG_R = 3.442619855899
_ZIG_V = 9.91256303526217e-3


def _ziggurat_tables(n_layers=128, r=_ZIG_R, v=_ZIG_V):
    x = np.zeros(n_layers + 1)
    f = np.exp(-0.5 * r * r)
    x[0] = v / f
    x[1] = r
    for i in range(2, n_layers):
        x[i] = np.sqrt(-2.0 * np.log(v / x[i - 1] + f))
        f = np.exp(-0.5 * x[i] * x[i])
    ratio = x[1:] / x[:-1]
    return x, ratio


_ZIG_X, _ZIG_RATIO = _ziggurat_tables()


@nb.njit(inline="always", cache=True)
def _philox(c0, c1, c2, c3, k0, k1):
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        n0 = ((p1 >> _S32) ^ c1 ^ k0) & _MASK
        n2 = ((p0 >> _S32) ^ c3 ^ k1) & _MASK
        c1 = p1 & _MASK
        c3 = p0 & _MASK
        c0 = n0
        c2 = n2
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


@nb.njit(cache=True)
def _philox_block(c0, c1, c2, c3, k0, k1):
    return _philox(np.uint64(c0), np.uint64(c1), np.uint64(c2), np.uint64(c3),
                   np.uint64(k0), np.uint64(k1))


def philox4x32(counter, key):
    """Philox4x32-10 block function on a 4-word counter and 2-word key."""
    out = _philox_block(*(int(c) & 0xFFFFFFFF for c in counter), *(int(k) & 0xFFFFFFFF for k in key))
    return tuple(int(v) for v in out)


@nb.njit(inline="always", cache=True)
def _u53(hi, lo):
    # 53-bit uniform on the open interval (0, 1).
    return ((hi >> _S5) * 67108864.0 + (lo >> _S6) + 0.5) * _INV53


@nb.njit(inline="always", cache=True)
def _u53_after_index(c, d):
    # Uses the 25 bits of c above the layer index and 28 bits of d.
    return ((c >> _S7) * 268435456.0 + (d >> _S4) + 0.5) * _INV53


@nb.njit(inline="always", cache=True)
def _normal(mode, step, line, path, k0, k1):
    attempt = np.uint64(0)
    base = np.uint64(mode)
    while True:
        a, b, c, d = _philox(base | (attempt << _ATTEMPT_SHIFT), step, line, path, k0, k1)
        attempt += np.uint64(1)
        u = 2.0 * _u53(a, b) - 1.0
        i = np.int64(c & _LOW7)
        if abs(u) < _ZIG_RATIO[i]:
            return u * _ZIG_X[i]
        if i == 0:
            # Base layer: exact sampling from the tail beyond R.
            while True:
                a, b, c, d = _philox(base | (attempt << _ATTEMPT_SHIFT), step, line, path, k0, k1)
                attempt += np.uint64(1)
                x = np.log(_u53(a, b)) / _ZIG_R
                y = np.log(_u53(c, d))
                if -2.0 * y >= x * x:
                    return x - _ZIG_R if u < 0.0 else _ZIG_R - x
        x = u * _ZIG_X[i]
        f0 = np.exp(-0.5 * (_ZIG_X[i] * _ZIG_X[i] - x * x))
        f1 = np.exp(-0.5 * (_ZIG_X[i + 1] * _ZIG_X[i + 1] - x * x))
        if f1 + _u53_after_index(c, d) * (f0 - f1) < 1.0:
            return x


@nb.njit(cache=True)
def _normal_scalar(mode, step, line, path, k0, k1):
    return _normal(np.uint64(mode), np.uint64(step), np.uint64(line), np.uint64(path),
                   np.uint64(k0), np.uint64(k1))


@nb.njit(parallel=True, cache=True)
def _fill(out, step0, line, paths, k0, k1):
    n_steps, n_paths, n_modes = out.shape
    for p in nb.prange(n_paths):
        path = np.uint64(paths[p])
        for s in range(n_steps):
            step = np.uint64(step0 + s)
            for m in range(n_modes):
                out[s, p, m] = _normal(np.uint64(m), step, np.uint64(line), path, k0, k1)


def _split_seed(seed):
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError("master_seed must be a 64-bit unsigned integer")
    return np.uint64(seed & 0xFFFFFFFF), np.uint64(seed >> 32)


def standard_normal(master_seed, path, step, line, mode):
    """Single normal draw at the given coordinates (reference/replay helper)."""
    k0, k1 = _split_seed(master_seed)
    return float(_normal_scalar(mode, step, line, path, k0, k1))


def set_threads(n=None):
    """Set the numba pool size from ``n`` or ``MFW_THREADS`` (capped at the pool maximum)."""
    if n is None:
        env = os.environ.get("MFW_THREADS")
        if not env:
            return nb.get_num_threads()
        n = int(env)
    n = max(1, min(int(n), nb.config.NUMBA_NUM_THREADS))
    nb.set_num_threads(n)
    return n


@dataclass(frozen=True)
class WienerDriver:
    """Replayable source of mode-wise standard normals for both noise lines.

    ``path_index`` may be a single integer or an array of path ids; arrays
    produce a leading path axis in every draw.
    """

    master_seed: int
    path_index: object
    n_modes_slow: int
    n_modes_fast: int

    def __post_init__(self):
        _split_seed(self.master_seed)
        if self.n_modes_slow < 0 or self.n_modes_fast < 0:
            raise ValueError("mode counts must be non-negative")
        paths = np.atleast_1d(np.asarray(self.path_index, dtype=np.int64))
        if paths.ndim != 1 or np.any(paths < 0):
            raise ValueError("path_index must be a non-negative integer or 1D array")
        object.__setattr__(self, "_paths", paths)
        object.__setattr__(self, "_scalar", np.ndim(self.path_index) == 0)

    @classmethod
    def ensemble(cls, master_seed, n_paths, n_modes_slow, n_modes_fast, first_path=0):
        return cls(master_seed, np.arange(first_path, first_path + n_paths, dtype=np.int64),
                   n_modes_slow, n_modes_fast)

    @property
    def n_paths(self):
        return self._paths.size

    @property
    def paths(self):
        return self._paths

    def subset(self, paths):
        return WienerDriver(self.master_seed, np.asarray(paths, dtype=np.int64),
                            self.n_modes_slow, self.n_modes_fast)

    def block(self, line, step0, n_steps):
        """Normals of shape ``(n_steps, n_paths, n_modes)`` for ``line``."""
        n_modes = self.n_modes_slow if line == SLOW else self.n_modes_fast
        out = np.empty((n_steps, self._paths.size, n_modes))
        if n_modes and n_steps:
            k0, k1 = _split_seed(self.master_seed)
            _fill(out, np.int64(step0), np.int64(line), self._paths, k0, k1)
        return out

    def normals(self, line, step):
        """Normals for one step: ``(n_paths, n_modes)`` or ``(n_modes,)`` for a scalar path."""
        out = self.block(line, step, 1)[0]
        return out[0] if self._scalar else out

    def increments(self, step, dt):
        """Wiener increments ``(dW1, dW2)`` over ``[step*dt, (step+1)*dt)``."""
        s = np.sqrt(dt)
        return s * self.normals(SLOW, step), s * self.normals(FAST, step)
