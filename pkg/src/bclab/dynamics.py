"""The skew-product map on T^4, its inverse, derivatives and shear perturbations.

The unperturbed map is

    (x, y, z, w) -> (2x - y + N sin x + (A^N (z, w))_x,  x,  A^{2N} (z, w))

i.e. a standard map on the center torus driven by a hyperbolic automorphism
on the fiber torus.  Fiber coordinates are kept on the exact grid of
:mod:`bclab.torus`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .torus import (
    DEFAULT_A,
    GridMatrix,
    IntMat2,
    eigendata,
    from_grid,
    reduce_mod_2pi,
    sincos,
    to_grid,
    torus_distance,
)


@dataclass(frozen=True)
class ShearPerturbation:
    """Volume-preserving shear ``m[target] += eps * sin(k . m)`` with k[target] = 0."""

    target: int
    k: tuple
    eps: float

    def __post_init__(self):
        if self.target not in (0, 1, 2, 3):
            raise ValueError("shear target must be a coordinate index 0..3")
        k = tuple(int(c) for c in self.k)
        if len(k) != 4:
            raise ValueError("shear frequency must have four integer components")
        if k[self.target] != 0:
            raise ValueError("shear frequency must vanish on the target coordinate")
        if not self.eps >= 0:
            raise ValueError("shear amplitude must be >= 0")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "eps", float(self.eps))

    @property
    def touches_fiber_from_center(self) -> bool:
        return self.target >= 2 and (self.k[0] != 0 or self.k[1] != 0)

    @property
    def c2_size(self) -> float:
        kn = float(np.linalg.norm(self.k))
        return abs(self.eps) * (1.0 + kn + kn * kn)

    def _phase(self, m):
        return m @ np.asarray(self.k, dtype=float)

    def apply(self, m, sign=1.0):
        out = np.array(m, dtype=float, copy=True)
        v = out[..., self.target] + sign * self.eps * np.sin(self._phase(out))
        v = reduce_mod_2pi(v)
        out[..., self.target] = from_grid(to_grid(v)) if self.target >= 2 else v
        return out

    def invert(self, m):
        # k[target] = 0, so the phase is unchanged by the update
        return self.apply(m, sign=-1.0)

    def jacobian(self, m):
        m = np.asarray(m, dtype=float)
        jac = np.broadcast_to(np.eye(4), m.shape[:-1] + (4, 4)).copy()
        coef = self.eps * np.cos(self._phase(m))
        jac[..., self.target, :] += coef[..., None] * np.asarray(self.k, dtype=float)
        return jac


@dataclass(frozen=True)
class MapParams:
    N: int
    A: IntMat2 = DEFAULT_A
    pre_shears: tuple = field(default_factory=tuple)
    post_shears: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "pre_shears", tuple(self.pre_shears))
        object.__setattr__(self, "post_shears", tuple(self.post_shears))
        eigendata(self.A)  # validates hyperbolicity

    @cached_property
    def hyperbolic(self):
        return eigendata(self.A)

    @property
    def shears(self):
        return self.pre_shears + self.post_shears

    @property
    def perturbed(self) -> bool:
        return any(s.eps != 0.0 for s in self.shears)

    @property
    def center_invariant(self) -> bool:
        return not any(s.touches_fiber_from_center and s.eps != 0.0 for s in self.shears)

    @property
    def c2_size(self) -> float:
        return sum(s.c2_size for s in self.shears)

    def unperturbed(self) -> "MapParams":
        return MapParams(self.N, self.A)

    def conjugate(self) -> "MapParams":
        """Parameters of the map built from A^-1 (unperturbed)."""
        return MapParams(self.N, self.A.inverse())

    @cached_property
    def grid_couple(self) -> GridMatrix:
        return GridMatrix.from_int(self.A.power(self.N))

    @cached_property
    def grid_fiber(self) -> GridMatrix:
        return GridMatrix.from_int(self.A.power(2 * self.N))

    @cached_property
    def grid_fiber_inv(self) -> GridMatrix:
        return GridMatrix.from_int(self.A.power(-2 * self.N))

    @cached_property
    def couple_matrix(self) -> np.ndarray:
        return _float_matrix(self.A.power(self.N))

    @cached_property
    def fiber_matrix(self) -> np.ndarray:
        return _float_matrix(self.A.power(2 * self.N))

    @cached_property
    def fiber_matrix_inv(self) -> np.ndarray:
        return _float_matrix(self.A.power(-2 * self.N))


def _float_matrix(m: IntMat2) -> np.ndarray:
    return np.array([[float(m.a), float(m.b)], [float(m.c), float(m.d)]])


def standard_map(N, p):
    p = np.asarray(p, dtype=float)
    x, y = p[..., 0], p[..., 1]
    s, _ = sincos(x)
    return np.stack([reduce_mod_2pi(2.0 * x - y + N * s), reduce_mod_2pi(x)], axis=-1)


def involution(m):
    m = np.asarray(m, dtype=float)
    return m[..., [1, 0, 2, 3]]


def _core_forward(params: MapParams, m):
    x, y = m[..., 0], m[..., 1]
    kz, kw = to_grid(m[..., 2]), to_grid(m[..., 3])
    cz, _ = params.grid_couple.act(kz, kw)
    fz, fw = params.grid_fiber.act(kz, kw)
    s, _ = sincos(x)
    xn = (2.0 * x - y + params.N * s) + from_grid(cz)
    return np.stack(
        [reduce_mod_2pi(xn), reduce_mod_2pi(x), from_grid(fz), from_grid(fw)], axis=-1
    )


def _core_inverse(params: MapParams, m):
    xp, yp = m[..., 0], m[..., 1]
    kz, kw = to_grid(m[..., 2]), to_grid(m[..., 3])
    fz, fw = params.grid_fiber_inv.act(kz, kw)
    cz, _ = params.grid_couple.act(fz, fw)
    s, _ = sincos(yp)
    y = (2.0 * yp - xp + params.N * s) + from_grid(cz)
    return np.stack(
        [reduce_mod_2pi(yp), reduce_mod_2pi(y), from_grid(fz), from_grid(fw)], axis=-1
    )


def f_apply(params: MapParams, m):
    m = np.asarray(m, dtype=float)
    for sh in params.pre_shears:
        m = sh.apply(m)
    m = _core_forward(params, m)
    for sh in params.post_shears:
        m = sh.apply(m)
    return m


def f_inverse(params: MapParams, m):
    m = np.asarray(m, dtype=float)
    for sh in reversed(params.post_shears):
        m = sh.invert(m)
    m = _core_inverse(params, m)
    for sh in reversed(params.pre_shears):
        m = sh.invert(m)
    return m


def iterate(params: MapParams, m, n: int):
    """f^n(m) for signed n."""
    step = f_apply if n >= 0 else f_inverse
    for _ in range(abs(n)):
        m = step(params, m)
    return np.asarray(m, dtype=float)


def orbit(params: MapParams, m, n: int):
    """Array of shape (|n|+1, ..., 4) holding m, f^{+-1}(m), ..., f^n(m)."""
    step = f_apply if n >= 0 else f_inverse
    pts = [np.asarray(m, dtype=float)]
    for _ in range(abs(n)):
        pts.append(step(params, pts[-1]))
    return np.stack(pts)


def omega(params: MapParams, x):
    _, c = sincos(x)
    return params.N * c + 2.0


def _core_center_block(params: MapParams, m):
    om = omega(params, np.asarray(m, dtype=float)[..., 0])
    out = np.zeros(om.shape + (2, 2))
    out[..., 0, 0] = om
    out[..., 0, 1] = -1.0
    out[..., 1, 0] = 1.0
    return out


def _core_full(params: MapParams, m):
    m = np.asarray(m, dtype=float)
    out = np.zeros(m.shape[:-1] + (4, 4))
    out[..., :2, :2] = _core_center_block(params, m)
    out[..., 0, 2:] = params.couple_matrix[0]
    out[..., 2:, 2:] = params.fiber_matrix
    return out


def df_full(params: MapParams, m):
    """Analytic 4x4 derivative of the (possibly perturbed) map at m."""
    m = np.asarray(m, dtype=float)
    jac = np.broadcast_to(np.eye(4), m.shape[:-1] + (4, 4))
    p = m
    for sh in params.pre_shears:
        jac = sh.jacobian(p) @ jac
        p = sh.apply(p)
    jac = _core_full(params, p) @ jac
    p = _core_forward(params, p)
    for sh in params.post_shears:
        jac = sh.jacobian(p) @ jac
        p = sh.apply(p)
    return jac


def df_center(params: MapParams, m):
    """2x2 derivative restricted to the invariant center plane."""
    if not params.center_invariant:
        raise ValueError(
            "a shear couples the center into the fiber; the center plane is not "
            "invariant, use df_full"
        )
    if not params.shears:
        return _core_center_block(params, m)
    return df_full(params, m)[..., :2, :2]


def semiconjugacy_check(params: MapParams, m):
    """Torus distance between the fiber part of f(m) and A^{2N} applied to it."""
    m = np.asarray(m, dtype=float)
    lhs = f_apply(params, m)[..., 2:]
    fz, fw = params.grid_fiber.act(to_grid(m[..., 2]), to_grid(m[..., 3]))
    rhs = np.stack([from_grid(fz), from_grid(fw)], axis=-1)
    return torus_distance(lhs, rhs)


def involution_residual(params: MapParams, m):
    """Distance between f^-1(m) and I(g(I(m))), g built from A^-1."""
    m = np.asarray(m, dtype=float)
    other = involution(f_apply(params.conjugate(), involution(m)))
    return torus_distance(f_inverse(params.unperturbed(), m), other)


def random_points(rng, count: int):
    """Uniform points on T^4 with fiber coordinates on the grid."""
    pts = rng.uniform(0.0, 2.0 * np.pi, size=(count, 4))
    pts[:, 2:] = from_grid(to_grid(pts[:, 2:]))
    return pts
