"""Unstable curves, adapted center fields, log-growth integrals and piece censuses.

A u-curve is integrated in lifted coordinates (no reduction mod 2pi) along
the strong unstable line field.  Two parametrizations are supported:

``fibered``
    tangent (alpha, e^u) / (lambda^N |e^u_x|); the fiber part moves
    linearly, images under f^k are cut at parameters 2 pi j / mu^{2Nk}.
``general``
    tangent normalized to unit x-speed; images are cut where the
    accumulated x-length reaches multiples of 2 pi.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import math
import warnings

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .cones import CriticalRegion, in_critical, in_good_cone
from .dynamics import MapParams, df_center, df_full, f_apply, f_inverse
from .lyapunov import ALPHA_N_CAP, unstable_direction
from .torus import TWO_PI, from_grid, reduce_mod_2pi, to_grid

MODES = ("fibered", "general")
DEFAULT_PIECE_CAP = 10**6
DIRECT_START_CAP = 2**22
FIBER_RESOLUTION_LIMIT = 1e6


def _wrap(lifted):
    p = reduce_mod_2pi(np.asarray(lifted, dtype=float))
    p[..., 2:] = from_grid(to_grid(p[..., 2:]))
    return p


def _matvec(M, v):
    return np.einsum("...ij,...j->...i", M, v)


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def unstable_tangent(params: MapParams, p, mode: str):
    """Curve velocity at reduced points p for the given parametrization."""
    u = unstable_direction(params, p)
    hyp = params.hyperbolic
    e_u = hyp.unstable
    if mode == "fibered":
        scale = (u[..., 2:] @ e_u)[..., None]
        return u / scale / (hyp.lam ** params.N * abs(e_u[0]))
    if np.any(u[..., 0] * math.copysign(1.0, e_u[0]) <= 0):
        raise ValueError("the unstable direction is not a graph over x here; "
                         "use the fibered parametrization")
    return u / u[..., :1]


@dataclass
class UCurve:
    """Sampled u-curve: parameter nodes, lifted points and tangents.

    Arrays carry an optional batch axis after the node axis, so one object
    can hold many curves integrated on a shared parameter grid.
    """

    params: MapParams
    mode: str
    t: np.ndarray
    lifted: np.ndarray
    tangents: np.ndarray
    fiber_resolved: bool = True
    frozen_fiber_velocity: np.ndarray | None = None

    @cached_property
    def _spline(self):
        return CubicHermiteSpline(self.t, self.lifted, self.tangents, axis=0)

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    def lifted_at(self, s):
        return self._spline(np.asarray(s, dtype=float))

    def point(self, s):
        return _wrap(self.lifted_at(s))

    def tangent(self, s):
        return self._spline(np.asarray(s, dtype=float), 1)

    def speed(self, s):
        v = self.tangent(s)
        if self.frozen_fiber_velocity is not None:
            v = v.copy()
            v[..., 2:] = self.frozen_fiber_velocity
        return np.linalg.norm(v, axis=-1)

    @property
    def x_length(self):
        """Total variation of the lifted x coordinate."""
        s = np.linspace(self.t[0], self.t[-1], 4097)
        return _simpson(np.abs(self.tangent(s)[..., 0]), s)

    @property
    def length(self):
        s = np.linspace(self.t[0], self.t[-1], 4097)
        return _simpson(self.speed(s), s)


def _simpson(y, s):
    h = (s[-1] - s[0]) / (len(s) - 1)
    w = np.ones(len(s))
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return np.tensordot(w, y, axes=(0, 0)) * h / 3.0


def make_ucurve(params: MapParams, seed, mode: str = "fibered", t_end: float = TWO_PI,
                tol: float = 1e-10, h_max: float = TWO_PI / 64, max_steps: int = 100_000) -> UCurve:
    """Integrate the unstable line field from ``seed`` (shape (4,) or (S, 4)).

    Adaptive RK4 with step doubling; the error is measured on the center
    coordinates and, relative to the fiber speed, on the fiber coordinates.

    When the fiber speed is too large to resolve in double precision the
    fiber coordinates are frozen at the seed; the center track then sees the
    fiber only through terms of relative size lambda^N, and ``speed`` uses
    the fiber velocity recorded at the seed.
    """
    _check_mode(mode)
    if mode == "fibered" and params.N > ALPHA_N_CAP:
        warnings.warn(
            f"N = {params.N} is above the alpha cap; using the pushforward direction",
            RuntimeWarning,
            stacklevel=2,
        )
    y = np.array(seed, dtype=float)
    k1 = unstable_tangent(params, _wrap(y), mode)
    fiber_scale = max(1.0, float(np.max(np.abs(k1[..., 2:]))))
    fiber_resolved = fiber_scale * t_end < FIBER_RESOLUTION_LIMIT
    frozen = None
    if fiber_resolved:
        rhs = lambda state: unstable_tangent(params, _wrap(state), mode)
    else:
        frozen = k1[..., 2:].copy()
        fiber_scale = 1.0

        def rhs(state):
            v = unstable_tangent(params, _wrap(state), mode)
            v[..., 2:] = 0.0
            return v

        k1 = rhs(y)
    ts, ys, ks = [0.0], [y.copy()], [k1]
    t, h = 0.0, min(h_max, t_end / 8)

    def rk4(y0, f0, step):
        a = f0
        b = rhs(y0 + 0.5 * step * a)
        c = rhs(y0 + 0.5 * step * b)
        d = rhs(y0 + step * c)
        return y0 + step * (a + 2 * b + 2 * c + d) / 6.0

    for _ in range(max_steps):
        if t >= t_end:
            break
        h = min(h, t_end - t)
        full = rk4(y, k1, h)
        half = rk4(y, k1, 0.5 * h)
        k_half = rhs(half)
        two = rk4(half, k_half, 0.5 * h)
        diff = np.abs(two - full)
        err = max(float(np.max(diff[..., :2])), float(np.max(diff[..., 2:])) / fiber_scale)
        if err <= tol or h < 1e-12:
            y = two + (two - full) / 15.0
            t += h
            k1 = rhs(y)
            ts.append(t)
            ys.append(y.copy())
            ks.append(k1)
        fac = 0.9 * (tol / err) ** 0.2 if err > 0 else 4.0
        h = min(h_max, h * min(4.0, max(0.2, fac)))
    else:
        raise RuntimeError("u-curve integration did not reach the end parameter")
    return UCurve(params, mode, np.array(ts), np.stack(ys), np.stack(ks), fiber_resolved, frozen)


# --- fields -------------------------------------------------------------


def constant_field(vec=(1.0, 0.0)):
    v = np.asarray(vec, dtype=float)
    v = v / np.linalg.norm(v)

    def field_fn(s):
        s = np.asarray(s, dtype=float)
        return np.broadcast_to(v, s.shape + (2,))

    return field_fn


def _field_values(field_fn, s, batch_shape=()):
    vals = np.asarray(field_fn(s), dtype=float)
    if vals.shape[:-1] != np.shape(s) + batch_shape:
        vals = np.broadcast_to(vals.reshape(vals.shape[: np.ndim(s)] + (1,) * len(batch_shape) + (2,)),
                               np.shape(s) + batch_shape + (2,))
    return vals


@dataclass
class AdaptedField:
    """Unit center vectors at curve samples with a 1/2-Hoelder estimate."""

    values: np.ndarray
    arclength: np.ndarray
    holder_constant: float
    bound: float

    @property
    def adapted(self) -> bool:
        return self.holder_constant < self.bound


def holder_estimate(values, arclength) -> float:
    """max ||X_i - X_j|| / d(i, j)^{1/2} over sample pairs (a lower bound)."""
    v = np.asarray(values, dtype=float)
    s = np.asarray(arclength, dtype=float)
    dv = np.linalg.norm(v[:, None, :] - v[None, :, :], axis=-1)
    ds = np.abs(s[:, None] - s[None, :])
    mask = ds > 0
    if not mask.any():
        return 0.0
    return float(np.max(dv[mask] / np.sqrt(ds[mask])))


def holder_bound(params: MapParams) -> float:
    return 20.0 * params.N ** 2 * params.hyperbolic.lam ** params.N


# --- pieces -------------------------------------------------------------


@dataclass
class Piece:
    """Piece of f^k o curve over the base parameter interval [t0, t1]."""

    curve: UCurve
    k: int
    t0: float
    t1: float
    index: int = 0
    full: bool = True
    weight: float = float("nan")

    @property
    def params(self):
        return self.curve.params


def push_curve(curve: UCurve, k: int, s, field_fn=None):
    """Points, tangents and pushed unit field of f^k o curve at base parameters s.

    Returns (points, tangents, field, base_tangents); field is None when
    field_fn is None.
    """
    params = curve.params
    p = curve.point(s)
    v = curve.tangent(s)
    base_v = v
    X = None
    if field_fn is not None:
        batch = p.shape[np.ndim(s):-1]
        X = _field_values(field_fn, s, batch)
        X = X / np.linalg.norm(X, axis=-1, keepdims=True)
    for _ in range(k):
        v = _matvec(df_full(params, p), v)
        if X is not None:
            X = _matvec(df_center(params, p), X)
            X = X / np.linalg.norm(X, axis=-1, keepdims=True)
        p = f_apply(params, p)
    return p, v, X, base_v


def piece_jacobian(curve: UCurve, k: int, tangents, base_tangents):
    """Unstable Jacobian of f^{-k} along the image curve.

    Fibered mode: parameter Jacobian, read off the fiber speeds (= mu^{-2Nk}).
    General mode: Euclidean arc-length ratio.
    """
    if curve.mode == "fibered":
        return np.linalg.norm(base_tangents[..., 2:], axis=-1) / np.linalg.norm(tangents[..., 2:], axis=-1)
    return np.linalg.norm(base_tangents, axis=-1) / np.linalg.norm(tangents, axis=-1)


def piece_count(params: MapParams, k: int) -> int:
    """Integer part of mu^{2Nk}, computed from the exact trace of A^{2Nk}."""
    if k == 0:
        return 1
    # the power is even, so |trace| = |mu|^m + |lambda|^m with |lambda|^m < 1
    return abs(int(params.A.power(2 * params.N * k).trace)) - 1


def _cut_points(curve: UCurve, k: int, cap: int):
    params = curve.params
    if curve.mode == "fibered":
        count = piece_count(params, k)
        if count > cap:
            raise ValueError(f"{count} pieces exceed the exhaustive cap {cap}; use sampled mode")
        growth = params.hyperbolic.mu ** (2 * params.N * k)
        cuts = TWO_PI * np.arange(count + 1) / growth
        return cuts, count
    # general mode: accumulated x-length of the image
    est = (2 * params.N * params.hyperbolic.mu) ** k
    m = int(min(max(256, 64 * est), 4 * cap))
    s = np.linspace(curve.t[0], curve.t_end, m + 1)
    _, v, _, _ = push_curve(curve, k, s)
    speed = np.abs(v[..., 0])
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(s))])
    count = int(math.floor(cum[-1] / TWO_PI + 1e-12))
    if count > cap:
        raise ValueError(f"{count} pieces exceed the exhaustive cap {cap}; use sampled mode")
    targets = TWO_PI * np.arange(count + 1)
    cuts = np.interp(targets, cum, s)
    # one Newton polish against a finer local rule
    for _ in range(2):
        lengths = _x_length_between(curve, k, s[0], cuts)
        _, vc, _, _ = push_curve(curve, k, cuts)
        cuts = cuts - (lengths - targets) / np.maximum(np.abs(vc[..., 0]), 1e-300)
    cuts[0] = curve.t[0]
    return cuts, count


_GL_CACHE = {}


def gauss_legendre(q: int):
    if q not in _GL_CACHE:
        _GL_CACHE[q] = np.polynomial.legendre.leggauss(q)
    return _GL_CACHE[q]


def _x_length_between(curve, k, a, bs, q=16, sub=8):
    """x-length of f^k o curve between parameter a and each b in bs."""
    bs = np.atleast_1d(bs)
    out = np.zeros(bs.shape)
    x, w = gauss_legendre(q)
    edges = np.linspace(0.0, 1.0, sub + 1)
    for lo, hi in zip(edges[:-1], edges[1:]):
        u0 = a + (bs - a) * lo
        u1 = a + (bs - a) * hi
        mid, half = 0.5 * (u0 + u1), 0.5 * (u1 - u0)
        s = mid[:, None] + half[:, None] * x[None, :]
        _, v, _, _ = push_curve(curve, k, s)
        out += np.sum(np.abs(v[..., 0]) * w, axis=-1) * half
    return out


def iterate_subdivide(curve: UCurve, k: int, mode: str = "exhaustive", cap: int = DEFAULT_PIECE_CAP,
                      samples: int = 1000, rng=None):
    """Pieces of f^k o curve.

    exhaustive: full pieces in order, then one remainder.
    sampled: one piece per uniformly drawn base parameter s, collapsed to
    [s, s], carrying the local unstable Jacobian of f^{-k} as its weight.
    """
    _check_mode(curve.mode)
    if k < 0:
        raise ValueError("k must be >= 0")
    if mode == "sampled":
        rng = rng if rng is not None else np.random.default_rng(0)
        s = np.sort(rng.uniform(curve.t[0], curve.t_end, size=samples))
        _, v, _, bv = push_curve(curve, k, s)
        J = piece_jacobian(curve, k, v, bv)
        return [Piece(curve, k, float(a), float(a), i, True, float(w)) for i, (a, w) in enumerate(zip(s, J))]
    if mode != "exhaustive":
        raise ValueError("subdivision mode must be 'exhaustive' or 'sampled'")
    if k == 0:
        return [Piece(curve, 0, float(curve.t[0]), curve.t_end, 0, True)]
    cuts, count = _cut_points(curve, k, cap)
    pieces = [Piece(curve, k, float(cuts[j]), float(cuts[j + 1]), j, True) for j in range(count)]
    if cuts[-1] < curve.t_end:
        pieces.append(Piece(curve, k, float(cuts[-1]), curve.t_end, count, False))
    return pieces


def piece_x_lengths(pieces):
    out = []
    for p in pieces:
        out.append(float(_x_length_between(p.curve, p.k, p.t0, np.array([p.t1]))[0]))
    return np.array(out)


def piece_lengths(pieces, q: int = 32):
    """Euclidean arc lengths of the pieces' images."""
    if not pieces:
        return np.zeros(0)
    curve, k = pieces[0].curve, pieces[0].k
    a = np.array([p.t0 for p in pieces])
    b = np.array([p.t1 for p in pieces])
    x, w = gauss_legendre(q)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    s = mid[:, None] + half[:, None] * x[None, :]
    _, v, _, _ = push_curve(curve, k, s)
    return np.sum(np.linalg.norm(v, axis=-1) * w, axis=1) * half


@dataclass
class JacobianStats:
    """Unstable Jacobian of f^{-k} sampled on each piece."""

    k: int
    values: np.ndarray

    @property
    def ratios(self):
        return self.values.max(axis=1) / self.values.min(axis=1)

    @property
    def worst_ratio(self) -> float:
        return float(self.ratios.max())


def jacobian_stats(pieces, q: int = 8) -> JacobianStats:
    curve, k = pieces[0].curve, pieces[0].k
    a = np.array([p.t0 for p in pieces])
    b = np.array([p.t1 for p in pieces])
    s = a[:, None] + (b - a)[:, None] * np.linspace(0.0, 1.0, q)[None, :]
    _, v, _, bv = push_curve(curve, k, s)
    return JacobianStats(k, piece_jacobian(curve, k, v, bv))


# --- integrals ----------------------------------------------------------


def _log_growth_on(params, points, X):
    return np.log(np.linalg.norm(_matvec(df_center(params, points), X), axis=-1))


def _trapezoid_richardson(fn, a, b, tol=1e-4, start=64, max_level=16):
    """Integral of fn over [a, b] by trapezoid refinement with Richardson steps.

    fn maps a 1-d parameter array to (values, weights); returns the ratio
    integral(values * weights) / integral(weights).
    """
    prev = prev_est = None
    n = start
    for _ in range(max_level):
        s = np.linspace(a, b, n + 1)
        val, wt = fn(s)
        tw = np.ones(n + 1)
        tw[0] = tw[-1] = 0.5
        num = np.tensordot(tw, val * wt, axes=(0, 0))
        den = np.tensordot(tw, wt, axes=(0, 0))
        if prev is not None:
            pnum, pden = prev
            rnum = (4 * num - pnum) / 3.0
            rden = (4 * den - pden) / 3.0
            est = rnum / rden
            if prev_est is not None and np.all(np.abs(est - prev_est) <= tol * np.maximum(1.0, np.abs(est))):
                return est, rden * (b - a) / n
            prev_est = est
        prev = (num, den)
        n *= 2
    raise RuntimeError(f"quadrature did not converge to {tol} after {n // 2} intervals")


def E_integral(piece: Piece, field_fn=None, tol: float = 1e-4):
    """Arc-length average of log ||Df Y|| over the piece, Y the pushed field."""
    field_fn = field_fn or constant_field()
    params = piece.params

    def integrand(s):
        p, v, X, _ = push_curve(piece.curve, piece.k, s, field_fn)
        return _log_growth_on(params, p, X), np.linalg.norm(v, axis=-1)

    est, _ = _trapezoid_richardson(integrand, piece.t0, piece.t1, tol=tol)
    return est


def E_integral_constant(params: MapParams, curves: UCurve, X, tol: float = 1e-4):
    """E for a batch of curves (shared parameter grid) with one constant field per curve."""
    X = np.asarray(X, dtype=float)
    X = X / np.linalg.norm(X, axis=-1, keepdims=True)

    def integrand(s):
        p = curves.point(s)
        v = curves.tangent(s)
        XX = np.broadcast_to(X, p.shape[:-1] + (2,))
        return _log_growth_on(params, p, XX), np.linalg.norm(v, axis=-1)

    est, _ = _trapezoid_richardson(integrand, curves.t[0], curves.t_end, tol=tol)
    return est


def I_n_direct(curve: UCurve, field_fn=None, n: int = 1, tol: float = 1e-4):
    """(1/|curve|) integral of log ||Df^n X|| along the curve."""
    if n < 1:
        raise ValueError("n must be >= 1")
    field_fn = field_fn or constant_field()
    params = curve.params

    def integrand(s):
        p = curve.point(s)
        X = _field_values(field_fn, s, p.shape[np.ndim(s):-1])
        X = X / np.linalg.norm(X, axis=-1, keepdims=True)
        v = X
        for _ in range(n):
            v = _matvec(df_center(params, p), v)
            p = f_apply(params, p)
        return np.log(np.linalg.norm(v, axis=-1)), curve.speed(s)

    # resolve the fastest oscillation: the (n-1)-th image wraps ~mu^{2N(n-1)} times
    start = 64 * max(1, piece_count(params, n - 1)) if curve.mode == "fibered" else 64 * (2 * params.N) ** (n - 1)
    if start > DIRECT_START_CAP:
        raise ValueError(f"the {n}-th image oscillates too fast for direct quadrature; use I_n_sampled")
    est, _ = _trapezoid_richardson(integrand, curve.t[0], curve.t_end, tol=tol, start=int(start))
    return est


def I_n_sampled(curve: UCurve, field_fn=None, n: int = 1, samples: int = 10_000, rng=None):
    """Monte-Carlo I_n: arc-length weighted mean over uniform parameters.

    Unresolved fibers get uniformly drawn phases.  Returns (estimate, stderr).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    field_fn = field_fn or constant_field()
    params = curve.params
    rng = rng if rng is not None else np.random.default_rng(0)
    s = rng.uniform(curve.t[0], curve.t_end, size=samples)
    p = curve.point(s)
    if not curve.fiber_resolved:
        p[:, 2:] = from_grid(to_grid(rng.uniform(0.0, TWO_PI, size=(samples, 2))))
    X = _field_values(field_fn, s)
    v = X / np.linalg.norm(X, axis=-1, keepdims=True)
    logs = np.zeros(samples)
    for _ in range(n):
        v = _matvec(df_center(params, p), v)
        nrm = np.linalg.norm(v, axis=-1)
        logs += np.log(nrm)
        v = v / nrm[:, None]
        p = f_apply(params, p)
    w = curve.speed(s)
    w = w / w.mean()
    vals = logs * w
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples))


@dataclass
class LevelTerms:
    k: int
    pieces: int
    full_pieces: int
    good_term: float
    bad_term: float
    remainder: float
    remainder_bound: float
    beta_effective: float
    jacobian_spread: float

    @property
    def total(self) -> float:
        return self.good_term + self.bad_term + self.remainder


@dataclass
class Decomposition:
    value: float
    mode: str
    levels: list = field(default_factory=list)


def remainder_bound(params: MapParams, k: int, eps1: float = 0.05) -> float:
    hyp = params.hyperbolic
    lam_n = hyp.lam ** params.N
    return ((math.exp(-eps1) * hyp.mu) ** (-2 * params.N * k) * math.log(2 * params.N)
            / (lam_n * (1 - 2 * lam_n) * abs(hyp.e_u[0])))


def _pieces_quadrature(curve, k, a, b, field_fn, q):
    """Gauss-Legendre nodes on every piece interval; returns per-piece sums.

    Output dict of arrays (P,): integral of log-growth times base speed,
    the same with the fibered weight, arc lengths of image and base, field
    classification data and Jacobian extremes.
    """
    x, w = gauss_legendre(q)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    s = mid[:, None] + half[:, None] * x[None, :]
    p, v, X, base_v = push_curve(curve, k, s, field_fn)
    h = _log_growth_on(curve.params, p, X)
    img_speed = np.linalg.norm(v, axis=-1)
    base_speed = np.linalg.norm(base_v, axis=-1)
    J = piece_jacobian(curve, k, v, base_v)
    wh = w[None, :] * half[:, None]
    return {
        "exact": np.sum(h * base_speed * wh, axis=1),
        "image": np.sum(h * img_speed * wh, axis=1),
        "image_len": np.sum(img_speed * wh, axis=1),
        "field": X,
        "J_min": J.min(axis=1),
        "J_max": J.max(axis=1),
        "points": p,
    }


def I_n_decomposed(curve: UCurve, field_fn=None, n: int = 1, mode: str | None = None,
                   delta_tilde: float = 0.1, q: int = 32, cap: int = DEFAULT_PIECE_CAP,
                   eps1: float = 0.05) -> Decomposition:
    """Right-hand side of the piece decomposition of I_n, level by level.

    fibered: sum_k mu^{-2Nk}/|curve| * sum_j integral over piece j (beta_k = 0);
    the effective beta_k needed for exact equality is reported per level.
    general: unstable-Jacobian weighted sums, exact by change of variables.
    """
    mode = mode or curve.mode
    _check_mode(mode)
    if mode == "fibered" and (curve.params.perturbed or curve.mode != "fibered"):
        raise ValueError("the fibered decomposition needs a fibered curve of the unperturbed map")
    field_fn = field_fn or constant_field()
    params = curve.params
    total_len = float(curve.length)
    levels = []
    value = 0.0
    for k in range(n):
        pieces = iterate_subdivide(curve, k, cap=cap)
        a = np.array([pc.t0 for pc in pieces])
        b = np.array([pc.t1 for pc in pieces])
        full = np.array([pc.full for pc in pieces])
        res = _pieces_quadrature(curve, k, a, b, field_fn, q)
        good = np.all(in_good_cone(res["field"], params.N, delta_tilde), axis=1)
        exact_terms = res["exact"] / total_len
        if mode == "fibered":
            growth = params.hyperbolic.mu ** (2 * params.N * k)
            terms = res["image"] / (growth * total_len)
        else:
            terms = exact_terms
        lvl_total = float(terms.sum())
        exact_total = float(exact_terms.sum())
        beta = exact_total / lvl_total - 1.0 if lvl_total != 0 else 0.0
        spread = float(np.max(np.log(res["J_max"] / res["J_min"])))
        levels.append(LevelTerms(
            k=k,
            pieces=len(pieces),
            full_pieces=int(full.sum()),
            good_term=float(terms[full & good].sum()),
            bad_term=float(terms[full & ~good].sum()),
            remainder=float(terms[~full].sum()),
            remainder_bound=remainder_bound(params, k, eps1),
            beta_effective=beta,
            jacobian_spread=spread,
        ))
        value += lvl_total
    return Decomposition(value, mode, levels)


# --- classification and census -----------------------------------------


def classify_field(piece: Piece, field_fn=None, delta_tilde: float = 0.1, samples: int = 16) -> str:
    """'good' when every sampled (projected) field vector lies in the good cone."""
    field_fn = field_fn or constant_field()
    s = np.linspace(piece.t0, piece.t1, samples)
    _, _, X, _ = push_curve(piece.curve, piece.k, s, field_fn)
    return "good" if bool(np.all(in_good_cone(X, piece.params.N, delta_tilde))) else "bad"


def adapted_field(piece: Piece, field_fn=None, samples: int = 64) -> AdaptedField:
    field_fn = field_fn or constant_field()
    s = np.linspace(piece.t0, piece.t1, samples)
    p, v, X, _ = push_curve(piece.curve, piece.k, s, field_fn)
    speed = np.linalg.norm(v, axis=-1)
    arc = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(s))])
    return AdaptedField(X, arc, holder_estimate(X, arc), holder_bound(piece.params))


def good_persistence(curve: UCurve, field_fn=None, k_max: int = 3, delta_tilde: float = 0.1,
                     samples: int = 4096) -> list:
    """Per level k < k_max: the fraction of points whose pushed field is good
    at k, whose k-th image avoids CritTilde, and which stay good at k + 1.

    Returns (eligible_count, persisted_fraction) pairs.
    """
    field_fn = field_fn or constant_field()
    params = curve.params
    s = np.linspace(curve.t[0], curve.t_end, samples)
    p = curve.point(s)
    X = _field_values(field_fn, s)
    X = X / np.linalg.norm(X, axis=-1, keepdims=True)
    crit = CriticalRegion("crit_tilde", params.N, delta_tilde)
    out = []
    for _ in range(k_max):
        eligible = in_good_cone(X, params.N, delta_tilde) & ~in_critical(p, crit)
        X = _matvec(df_center(params, p), X)
        X = X / np.linalg.norm(X, axis=-1, keepdims=True)
        p = f_apply(params, p)
        kept = in_good_cone(X, params.N, delta_tilde)[eligible]
        out.append((int(eligible.sum()), float(kept.mean()) if kept.size else float("nan")))
    return out


@dataclass
class PieceCensus:
    k: int
    mode: str
    pieces: int
    good: int
    bad: int
    min_J: float
    max_J: float
    sum_minJ_good: float
    sum_maxJ_bad: float
    K: float
    eps2: float
    eps3: float
    extra: dict = field(default_factory=dict)

    @property
    def good_fraction(self) -> float:
        n = self.good + self.bad
        return self.good / n if n else float("nan")

    @property
    def count_check(self) -> bool:
        return self.good >= self.K * self.bad

    @property
    def weighted_check(self) -> bool:
        return self.sum_minJ_good >= self.K * self.sum_maxJ_bad

    @property
    def bracket(self) -> tuple:
        e = self.eps2 + self.eps3
        return (math.exp(-e), math.exp(2 * e))

    @property
    def bracket_check(self) -> bool:
        lo, hi = self.bracket
        return lo <= self.sum_minJ_good + self.sum_maxJ_bad <= hi

    @property
    def fraction_check(self) -> bool:
        return self.good_fraction >= 1.0 / (1.0 + 1.0 / self.K)

    def as_row(self) -> dict:
        return {
            "k": self.k,
            "mode": self.mode,
            "pieces": self.pieces,
            "good": self.good,
            "bad": self.bad,
            "min_J": self.min_J,
            "max_J": self.max_J,
            "sum_minJ_good": self.sum_minJ_good,
            "sum_maxJ_bad": self.sum_maxJ_bad,
        }


def piece_census(curve: UCurve, field_fn=None, k_max: int = 2, delta_tilde: float = 0.1,
                 K: float = 10.0, mode: str = "exhaustive", samples: int = 10_000,
                 rng=None, eps2: float = 0.05, eps3: float = 0.05, q: int = 8,
                 cap: int = DEFAULT_PIECE_CAP, e_tol: float = 1e-4, e_pieces: int | None = 2000):
    """Good/bad counts and Jacobian sums for k = 0..k_max."""
    field_fn = field_fn or constant_field()
    if mode == "exhaustive":
        out = []
        for k in range(k_max + 1):
            pieces = iterate_subdivide(curve, k, cap=cap)
            full = [pc for pc in pieces if pc.full]
            a = np.array([pc.t0 for pc in full])
            b = np.array([pc.t1 for pc in full])
            res = _pieces_quadrature(curve, k, a, b, field_fn, q)
            good = np.all(in_good_cone(res["field"], curve.params.N, delta_tilde), axis=1)
            out.append(PieceCensus(
                k=k, mode="exhaustive", pieces=len(full), good=int(good.sum()), bad=int((~good).sum()),
                min_J=float(res["J_min"].min()), max_J=float(res["J_max"].max()),
                sum_minJ_good=float(res["J_min"][good].sum()),
                sum_maxJ_bad=float(res["J_max"][~good].sum()),
                K=K, eps2=eps2, eps3=eps3,
            ))
        return out
    if mode != "sampled":
        raise ValueError("census mode must be 'exhaustive' or 'sampled'")
    return sampled_census(curve, field_fn, k_max, delta_tilde, K, samples, rng, eps2, eps3, e_tol, e_pieces)


def sampled_census(curve: UCurve, field_fn, k_max, delta_tilde, K, samples, rng, eps2, eps3,
                   e_tol=1e-4, e_pieces: int | None = 2000):
    """Length-weighted census from uniformly drawn base parameters.

    The pushed field is classified at the sampled point and held constant on
    the containing piece; E is integrated along a u-curve through the point.
    Jacobian sums are reported normalized to a unit total.  E is evaluated
    on the first ``e_pieces`` good draws (all of them when None); the draws
    are i.i.d., so this is a uniform subsample.
    """
    params = curve.params
    rng = rng if rng is not None else np.random.default_rng(0)
    s = rng.uniform(curve.t[0], curve.t_end, size=samples)
    p = curve.point(s)
    if not curve.fiber_resolved:
        p[:, 2:] = from_grid(to_grid(rng.uniform(0.0, TWO_PI, size=(samples, 2))))
    X = _field_values(field_fn, s)
    X = X / np.linalg.norm(X, axis=-1, keepdims=True)
    crit = CriticalRegion("crit_tilde", params.N, delta_tilde)
    out = []
    was_good = np.all(in_good_cone(X[:, None, :], params.N, delta_tilde), axis=1)
    for k in range(k_max + 1):
        if k > 0:
            avoid = ~in_critical(p, crit)
            X = _matvec(df_center(params, p), X)
            X = X / np.linalg.norm(X, axis=-1, keepdims=True)
            p = f_apply(params, p)
        good = in_good_cone(X, params.N, delta_tilde)
        extra = {}
        if k > 0:
            keep = was_good & avoid
            extra["persistence_fraction"] = float(good[keep].mean()) if keep.any() else float("nan")
        idx = np.flatnonzero(good)
        if e_pieces is not None:
            idx = idx[:e_pieces]
        if idx.size:
            with warnings.catch_warnings():
                # the caller was already warned when the seed curve was built
                warnings.simplefilter("ignore", RuntimeWarning)
                curves = make_ucurve(params, p[idx], curve.mode, h_max=TWO_PI / 8)
            E = E_integral_constant(params, curves, X[idx], tol=e_tol)
            extra["E_min_good"] = float(np.min(E))
            extra["E_mean_good"] = float(np.mean(E))
            extra["E_pieces"] = int(idx.size)
        extra["holder_bound"] = holder_bound(params)
        extra["samples"] = int(samples)
        frac_good = good.mean()
        out.append(PieceCensus(
            k=k, mode=f"sampled({samples})", pieces=int(samples), good=int(good.sum()),
            bad=int((~good).sum()), min_J=float("nan"), max_J=float("nan"),
            sum_minJ_good=float(frac_good), sum_maxJ_bad=float(1.0 - frac_good),
            K=K, eps2=eps2, eps3=eps3, extra=extra,
        ))
        was_good = good
    return out


# --- distortion -----------------------------------------------------------


def unstable_jacobian_inverse(params: MapParams, m, k: int):
    """J^{uu} of g^{-k} at m, as 1 / ||Dg^k(q) u(q)|| with q = g^{-k}(m)."""
    q = np.asarray(m, dtype=float)
    for _ in range(k):
        q = f_inverse(params, q)
    u = unstable_direction(params, q)
    logs = np.zeros(q.shape[:-1])
    for _ in range(k):
        u = _matvec(df_full(params, q), u)
        nrm = np.linalg.norm(u, axis=-1)
        logs += np.log(nrm)
        u = u / nrm[..., None]
        q = f_apply(params, q)
    return np.exp(-logs)


def leaf_points(params: MapParams, m, t_end: float = TWO_PI, count: int = 64):
    """Points on the strong-unstable leaf through m spanning one u-curve.

    A straight segment along the unstable direction at f^{-1}(m) is pushed
    forward once; the segment is mu^{2N} times shorter than its image, so
    the straight-line error is negligible.  Returns shape (count, ..., 4).
    """
    m = np.asarray(m, dtype=float)
    hyp = params.hyperbolic
    q = f_inverse(params, m)
    u = unstable_direction(params, q)
    v = u / (u[..., 2:] @ hyp.unstable)[..., None]
    half = 0.5 * t_end * hyp.lam ** params.N / abs(hyp.e_u[0])
    s = np.linspace(-half, half, count).reshape((count,) + (1,) * (m.ndim - 1) + (1,))
    seg = _wrap(q[None] + s * v[None])
    return f_apply(params, seg)


def bounded_distortion(curve: UCurve, k: int, sample_pairs: int = 64, pieces: int = 16, rng=None,
                       params: MapParams | None = None) -> float:
    """Worst ratio J(m) / J(m') of the arc-length unstable Jacobian of f^{-k}
    over sampled points m, m' on one u-curve.

    The u-curves are strong-unstable leaves through f^k(curve(s)) for
    uniformly drawn s.  ``params`` overrides the curve's map, so a curve of
    the unperturbed map can seed the leaves of a perturbation.
    """
    if k == 0:
        return 1.0
    params = params or curve.params
    rng = rng if rng is not None else np.random.default_rng(0)
    s = rng.uniform(curve.t[0], curve.t_end, size=pieces)
    p = curve.point(s)
    for _ in range(k):
        p = f_apply(params, p)
    pts = leaf_points(params, p, curve.t_end, sample_pairs)
    logJ = np.log(unstable_jacobian_inverse(params, pts, k))
    return float(np.exp(np.max(logJ.max(axis=0) - logJ.min(axis=0))))
