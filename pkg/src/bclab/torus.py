"""Arithmetic on the 2- and 4-torus and integer hyperbolic matrices.

Angles live in [0, 2pi).  Points that are acted on by integer matrices are
stored on a dyadic grid of 2**50 cells per turn, which makes the toral
action of SL(2, Z) exact: the matrix acts on integer cell indices with
wrap-around arithmetic, so A^k is bit-identical to k single applications
and A^-k undoes A^k exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np

TWO_PI = 2.0 * math.pi
HALF_PI = 0.5 * math.pi

GRID_BITS = 50
GRID_SIZE = 1 << GRID_BITS
GRID_MASK = GRID_SIZE - 1
# power of two times 2pi, so k * CELL and z / CELL are exact scalings
CELL = TWO_PI / GRID_SIZE

DEFAULT_MAX_POWER = 10_000


def reduce_mod_2pi(v):
    """Canonical representative of ``v`` in [0, 2pi).

    Works on scalars and arrays.  Raises ``ValueError`` for non-finite input.
    """
    arr = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot reduce a non-finite angle")
    r = np.mod(arr, TWO_PI)
    # np.mod can round up to exactly 2pi for tiny negative inputs
    r = np.where(r >= TWO_PI, 0.0, r)
    if np.ndim(v) == 0:
        return float(r)
    return r


def sincos(x):
    """sin and cos with exact values at integer multiples of pi/2.

    The argument is split into a quadrant and a remainder so that the float
    nearest to pi gives sin = 0 and cos = -1 exactly.
    """
    x = np.asarray(x, dtype=float)
    t = x / HALF_PI
    q = np.rint(t)
    r = (t - q) * HALF_PI
    s, c = np.sin(r), np.cos(r)
    quad = np.mod(q, 4.0)
    sin_out = np.select([quad == 0, quad == 1, quad == 2], [s, c, -s], -c)
    cos_out = np.select([quad == 0, quad == 1, quad == 2], [c, -s, -c], s)
    return sin_out, cos_out


def circle_distance(a, b):
    d = np.abs(np.mod(np.asarray(a, float) - np.asarray(b, float), TWO_PI))
    return np.minimum(d, TWO_PI - d)


def torus_distance(p, q):
    """Max over components of the circle distance; reduces over the last axis."""
    return np.max(circle_distance(p, q), axis=-1)


def to_grid(v):
    """Encode angles as integer cell indices (uint64, < 2**50)."""
    arr = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot encode a non-finite angle")
    k = np.rint(arr / CELL)
    # take the remainder in floating point first so huge lifts stay representable
    k = np.mod(k, float(GRID_SIZE))
    return k.astype(np.int64).astype(np.uint64) & np.uint64(GRID_MASK)


def from_grid(k):
    return np.asarray(k, dtype=np.uint64).astype(np.float64) * CELL


def snap(v):
    """Round angles to the nearest grid point, in [0, 2pi)."""
    return from_grid(to_grid(v))


@dataclass(frozen=True)
class IntMat2:
    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        for e in (self.a, self.b, self.c, self.d):
            if int(e) != e:
                raise ValueError("matrix entries must be integers")
        if self.det != 1:
            raise ValueError(f"determinant must be 1, got {self.det}")

    @classmethod
    def from_rows(cls, rows):
        (a, b), (c, d) = rows
        return cls(int(a), int(b), int(c), int(d))

    @property
    def det(self) -> int:
        return self.a * self.d - self.b * self.c

    @property
    def trace(self) -> int:
        return self.a + self.d

    @property
    def is_hyperbolic(self) -> bool:
        return abs(self.trace) > 2

    def inverse(self) -> "IntMat2":
        return IntMat2(self.d, -self.b, -self.c, self.a)

    def rows(self):
        return ((self.a, self.b), (self.c, self.d))

    def to_array(self) -> np.ndarray:
        return np.array(self.rows(), dtype=float)

    def __matmul__(self, other: "IntMat2") -> "IntMat2":
        return IntMat2(
            self.a * other.a + self.b * other.c,
            self.a * other.b + self.b * other.d,
            self.c * other.a + self.d * other.c,
            self.c * other.b + self.d * other.d,
        )

    def power(self, k: int) -> "IntMat2":
        """Exact integer power (big ints); negative k uses the inverse."""
        base = self if k >= 0 else self.inverse()
        return _int_power(base, abs(k))


@lru_cache(maxsize=256)
def _int_power(base: IntMat2, k: int) -> IntMat2:
    result = IntMat2(1, 0, 0, 1)
    sq = base
    while k:
        if k & 1:
            result = result @ sq
        sq = sq @ sq
        k >>= 1
    return result


DEFAULT_A = IntMat2(2, 1, 1, 1)


@dataclass(frozen=True)
class GridMatrix:
    """Integer matrix reduced mod 2**50, acting on grid indices."""

    a: int
    b: int
    c: int
    d: int

    @classmethod
    def from_int(cls, m: IntMat2) -> "GridMatrix":
        return cls(m.a & GRID_MASK, m.b & GRID_MASK, m.c & GRID_MASK, m.d & GRID_MASK)

    def as_uint64(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]], dtype=np.uint64)

    def act(self, kz, kw):
        kz = np.asarray(kz, dtype=np.uint64)
        kw = np.asarray(kw, dtype=np.uint64)
        mask = np.uint64(GRID_MASK)
        a, b, c, d = (np.uint64(e) for e in (self.a, self.b, self.c, self.d))
        with np.errstate(over="ignore"):
            nz = (a * kz + b * kw) & mask
            nw = (c * kz + d * kw) & mask
        return nz, nw


def apply_int_mat(A: IntMat2, p):
    """Toral action of ``A`` on points ``p`` with shape (..., 2)."""
    return apply_mat_power(A, 1, p)


def apply_mat_power(A: IntMat2, k: int, p, max_power: int = DEFAULT_MAX_POWER):
    """Toral action of A^k on points of shape (..., 2), exact on the grid."""
    if abs(k) > max_power:
        raise ValueError(f"|k| = {abs(k)} exceeds max power {max_power}")
    p = np.asarray(p, dtype=float)
    kz, kw = to_grid(p[..., 0]), to_grid(p[..., 1])
    gz, gw = GridMatrix.from_int(A.power(k)).act(kz, kw)
    return np.stack([from_grid(gz), from_grid(gw)], axis=-1)


@dataclass(frozen=True)
class HyperbolicData:
    mu: float
    lam: float
    e_u: tuple
    e_s: tuple

    @property
    def unstable(self) -> np.ndarray:
        return np.array(self.e_u)

    @property
    def stable(self) -> np.ndarray:
        return np.array(self.e_s)


def _unit_eigvec(A: IntMat2, ev: float) -> np.ndarray:
    # pick the better conditioned row of (A - ev I) v = 0
    r1 = np.array([A.b, ev - A.a], dtype=float)
    r2 = np.array([ev - A.d, A.c], dtype=float)
    v = r1 if np.linalg.norm(r1) >= np.linalg.norm(r2) else r2
    v = v / np.linalg.norm(v)
    # sign convention: largest component positive
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return v


def eigendata(A: IntMat2) -> HyperbolicData:
    if not A.is_hyperbolic:
        raise ValueError("matrix is not hyperbolic (|trace| <= 2)")
    tr = A.trace
    mag = (abs(tr) + math.sqrt(tr * tr - 4)) / 2.0
    ev_u = math.copysign(mag, tr)
    ev_s = 1.0 / ev_u
    return HyperbolicData(
        mu=mag,
        lam=1.0 / mag,
        e_u=tuple(float(c) for c in _unit_eigvec(A, ev_u)),
        e_s=tuple(float(c) for c in _unit_eigvec(A, ev_s)),
    )
