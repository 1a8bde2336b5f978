"""Pliss times and finite-horizon proxies for the contraction sets Z and X."""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .dynamics import MapParams, df_center, f_apply, f_inverse, random_points
from .lyapunov import _SEED_VEC, _FALLBACK_ROT, _inv2, _rotate


@dataclass(frozen=True)
class PlissParams:
    eps: float
    alpha1: float
    alpha2: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be > 0")
        if not self.alpha1 < self.alpha2:
            raise ValueError("need alpha1 < alpha2")

    @property
    def density_bound(self) -> float:
        return self.eps / (self.alpha2 + self.eps - self.alpha1)


@dataclass(frozen=True)
class PlissReport:
    times: tuple
    density: float
    bound: float
    horizon: int
    average_ok: bool


def pliss_times(seq, params: PlissParams, horizon: int | None = None) -> PlissReport:
    """All k < horizon whose forward window averages all stay <= alpha2 + eps.

    ``average_ok`` is False when the full-window average exceeds alpha2, the
    regime in which the density bound is not guaranteed.
    """
    a = np.asarray(seq, dtype=float)
    if horizon is None:
        horizon = a.size
    if horizon < 0 or horizon > a.size:
        raise ValueError("horizon must lie in [0, len(seq)]")
    a = a[:horizon]
    if np.any(a <= params.alpha1):
        raise ValueError("sequence entries must exceed alpha1")
    if horizon == 0:
        return PlissReport((), 0.0, params.density_bound, 0, True)
    c = params.alpha2 + params.eps
    # b_n = S_n - c n; k is a time iff b_n <= b_k for every n in (k, horizon]
    b = np.concatenate([[0.0], np.cumsum(a - c)])
    suffix_max = np.maximum.accumulate(b[::-1])[::-1]
    ok = suffix_max[1:] <= b[:-1]
    times = tuple(int(k) for k in np.flatnonzero(ok))
    edge = math.ceil(horizon / 10)
    counted = horizon - edge
    density = float(ok[:counted].mean()) if counted > 0 else 0.0
    return PlissReport(times, density, params.density_bound, horizon, bool(a.mean() <= params.alpha2))


def pliss_times_bruteforce(seq, params: PlissParams, horizon: int | None = None):
    """Reference check of the definition over every (k, n) pair."""
    a = [float(v) for v in seq]
    if horizon is None:
        horizon = len(a)
    c = params.alpha2 + params.eps
    out = []
    for k in range(horizon):
        good = True
        for n in range(k + 1, horizon + 1):
            if sum(a[k:n]) > c * (n - k):
                good = False
                break
        if good:
            out.append(k)
    return tuple(out)


def pliss_density_identity(N: float, delta: float) -> dict:
    """Plug-in chain eps/(alpha2+eps-alpha1) = 1/((1+6d)+6log2/logN) >= 1/(1+7d)."""
    if N < 2 or not 0 < delta < 1:
        raise ValueError("need N >= 2 and 0 < delta < 1")
    logn = math.log(N)
    eps = logn / 6.0
    a1 = -logn - math.log(2.0)
    a2 = -(1.0 - delta) * logn
    lhs = eps / (a2 + eps - a1)
    middle = 1.0 / ((1.0 + 6.0 * delta) + 6.0 * math.log(2.0) / logn)
    rhs = 1.0 / (1.0 + 7.0 * delta)
    log_n_star = 6.0 * math.log(2.0) / delta
    return {
        "lhs": lhs,
        "middle": middle,
        "rhs": rhs,
        "holds": middle >= rhs,
        "log_N_star": log_n_star,
        "N_star": math.exp(log_n_star) if log_n_star < 709.0 else math.inf,
    }


@dataclass(frozen=True)
class SetProxyConfig:
    horizon: int = 64
    delta: float = 0.001
    n_back: int = 32
    n_fwd: int = 32

    def __post_init__(self):
        if self.horizon < 0 or self.n_back < 1 or self.n_fwd < 1:
            raise ValueError("horizons must be non-negative (Oseledets horizons >= 1)")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")

    @property
    def T(self) -> int:
        return int(math.floor((1.0 + 7.0 * self.delta) / (28.0 * self.delta)))

    @property
    def measure_bound(self) -> float:
        return (1.0 - 7.0 * self.delta) / (1.0 + 7.0 * self.delta)

    @staticmethod
    def threshold(N: int) -> float:
        return N ** (-4.0 / 5.0)


@dataclass
class ZFlags:
    z_minus: np.ndarray
    z_plus: np.ndarray
    z: np.ndarray
    first_failure_n: np.ndarray


def _two_seed_push(blocks):
    """Push two seed vectors through blocks; keep the faster grower per point.

    Returns the list of unit vectors at every stage (len(blocks) + 1 entries).
    """
    shape = blocks[0].shape[:-2]
    seeds = [np.broadcast_to(_SEED_VEC, shape + (2,)).copy()]
    seeds.append(_rotate(seeds[0], _FALLBACK_ROT))
    tracks, growth = [], []
    for v in seeds:
        g = np.zeros(shape)
        vs = [v]
        for D in blocks:
            v = np.einsum("...ij,...j->...i", D, v)
            nrm = np.linalg.norm(v, axis=-1)
            g += np.log(nrm)
            v = v / nrm[..., None]
            vs.append(v)
        tracks.append(np.stack(vs))
        growth.append(g)
    pick = (growth[1] > growth[0] + 1.0)[None, ..., None]
    return np.where(pick, tracks[1], tracks[0])


def center_rates(params: MapParams, m, lo: int, hi: int, n_back: int, n_fwd: int):
    """Log one-step growth along E- and E+ at orbit indices lo..hi.

    Returns (rate_minus, rate_plus), arrays of shape (hi - lo + 1, ...), where
    rate_minus[i] = log ||Df(m_i)|E-|| and rate_plus[i] = log ||Df(m_i)|E+||,
    with m_i = f^i(m).
    """
    m = np.asarray(m, dtype=float)
    start, stop = lo - n_back, hi + n_fwd
    pts = {0: m}
    p = m
    for i in range(1, stop + 1):
        p = f_apply(params, p)
        pts[i] = p
    p = m
    for i in range(-1, start - 1, -1):
        p = f_inverse(params, p)
        pts[i] = p
    idx = list(range(start, stop + 1))
    D = np.stack([df_center(params, pts[i]) for i in idx])  # D[j] at index start + j
    # E+ pushed forward from index `start`: vecs[j] is E+ at index start + j
    plus = _two_seed_push(list(D[: len(idx) - 1]))
    # E- pulled back from index `stop`: walk inverse blocks from stop-1 down to start
    inv = _inv2(D[:-1])
    minus_rev = _two_seed_push([inv[j] for j in range(len(idx) - 2, -1, -1)])
    minus = minus_rev[::-1]  # minus[j] is E- at index start + j
    sel = slice(lo - start, hi - start + 1)
    Dsel = D[sel]
    rate_minus = np.log(np.linalg.norm(np.einsum("k...ij,k...j->k...i", Dsel, minus[sel]), axis=-1))
    rate_plus = np.log(np.linalg.norm(np.einsum("k...ij,k...j->k...i", Dsel, plus[sel]), axis=-1))
    return rate_minus, rate_plus


def _z_minus_from_rates(rate_minus, i0, horizon, log_thr):
    """Z- flag and first failing n at orbit offset i0 (rates indexed from i0)."""
    seg = rate_minus[i0:i0 + horizon]
    if horizon == 0:
        shape = rate_minus.shape[1:]
        return np.ones(shape, bool), np.full(shape, -1)
    cums = np.cumsum(seg, axis=0)
    n = np.arange(1, horizon + 1).reshape((-1,) + (1,) * (seg.ndim - 1))
    fail = ~(cums < n * log_thr)
    first = np.where(fail.any(axis=0), fail.argmax(axis=0) + 1, -1)
    return ~fail.any(axis=0), first


def _z_plus_from_rates(rate_plus, i0, horizon, log_thr):
    """Z+ at orbit offset i0: ||Df^{-n}|E+|| = prod 1/||Df(m_{i0-j})|E+||, j = 1..n."""
    if horizon == 0:
        shape = rate_plus.shape[1:]
        return np.ones(shape, bool)
    seg = -rate_plus[i0 - horizon:i0][::-1]
    cums = np.cumsum(seg, axis=0)
    n = np.arange(1, horizon + 1).reshape((-1,) + (1,) * (seg.ndim - 1))
    return np.all(cums < n * log_thr, axis=0)


def z_membership(params: MapParams, m, proxy: SetProxyConfig) -> ZFlags:
    """Finite-horizon Z-, Z+ flags at m and the Z flag Z-(f^-1 m) and Z+(f m)."""
    m = np.asarray(m, dtype=float)
    H = proxy.horizon
    log_thr = math.log(proxy.threshold(params.N))
    lo, hi = -1 - H, 1 + H
    rm, rp = center_rates(params, m, lo, hi, proxy.n_back, proxy.n_fwd)
    off = -lo  # index 0 of the orbit inside the rate arrays
    zm, first = _z_minus_from_rates(rm, off, H, log_thr)
    zp = _z_plus_from_rates(rp, off, H, log_thr)
    zm_prev, _ = _z_minus_from_rates(rm, off - 1, H, log_thr)
    zp_next = _z_plus_from_rates(rp, off + 1, H, log_thr)
    return ZFlags(zm, zp, zm_prev & zp_next, first)


def x_membership(params: MapParams, m, proxy: SetProxyConfig):
    """Z flags at m plus X = Z at f^{-k}(m) for every |k| < T (vectorized)."""
    m = np.asarray(m, dtype=float)
    H, T = proxy.horizon, proxy.T
    log_thr = math.log(proxy.threshold(params.N))
    lo, hi = -max(T, 1) - H, max(T, 1) + H
    rm, rp = center_rates(params, m, lo, hi, proxy.n_back, proxy.n_fwd)
    off = -lo
    zm, first = _z_minus_from_rates(rm, off, H, log_thr)
    zp = _z_plus_from_rates(rp, off, H, log_thr)

    def z_shift(k):
        a, _ = _z_minus_from_rates(rm, off - k - 1, H, log_thr)
        return a & _z_plus_from_rates(rp, off - k + 1, H, log_thr)

    z0 = z_shift(0)
    x = z0.copy()
    for k in range(-T + 1, T):
        if k:
            x &= z_shift(k)
    return ZFlags(zm, zp, z0, first), x


@dataclass
class SetMeasureReport:
    sample_count: int
    z_fraction: float
    x_fraction: float
    bound: float
    T: int
    horizon: int
    rows: list


def estimate_set_measures(params: MapParams, proxy: SetProxyConfig, sample_count: int,
                          rng_seed: int = 0, chunk: int = 2000) -> SetMeasureReport:
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.Generator(np.random.Philox(key=rng_seed))
    pts = random_points(rng, sample_count)
    rows = []
    z_all, x_all = [], []
    for s in range(0, sample_count, chunk):
        block = pts[s:s + chunk]
        flags, x = x_membership(params, block, proxy)
        z_all.append(flags.z)
        x_all.append(x)
        for j in range(block.shape[0]):
            rows.append({
                "sample_index": s + j,
                "z_minus": bool(flags.z_minus[j]),
                "z_plus": bool(flags.z_plus[j]),
                "z": bool(flags.z[j]),
                "x": bool(x[j]),
                "first_failure_n": int(flags.first_failure_n[j]),
                "x0": float(block[j, 0]), "y0": float(block[j, 1]),
                "z0": float(block[j, 2]), "w0": float(block[j, 3]),
            })
    z = np.concatenate(z_all)
    x = np.concatenate(x_all)
    return SetMeasureReport(
        sample_count=int(sample_count),
        z_fraction=float(z.mean()),
        x_fraction=float(x.mean()),
        bound=proxy.measure_bound,
        T=proxy.T,
        horizon=proxy.horizon,
        rows=rows,
    )
