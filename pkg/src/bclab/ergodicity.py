"""Birkhoff averages, Hopf-style agreement, correlation decay, leaf
equidistribution and the finite-time contraction probe."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math
import re

import numpy as np

from . import _kernels
from .dynamics import MapParams, f_apply, random_points
from .lyapunov import log_norm_along, stable_center, unstable_center
from .pliss import SetProxyConfig, z_membership
from .torus import TWO_PI, from_grid, reduce_mod_2pi, sincos, to_grid

_KINDS = {"cos": _kernels.OBS_COS, "sin": _kernels.OBS_SIN, "box": _kernels.OBS_BOX}
_TERM = re.compile(r"([+-]?)\s*(\d*)\s*([xyzw])")
_AXES = "xyzw"
CONTROL_NC = 0.5
SATURATION = 1e-3


@dataclass(frozen=True)
class Observable:
    """cos/sin of an integer frequency combination, or a box indicator."""

    name: str
    kind: str
    freq: tuple = (0, 0, 0, 0)
    box: tuple = (0.0, TWO_PI) * 4

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown observable kind {self.kind!r}")
        if len(self.freq) != 4 or len(self.box) != 8:
            raise ValueError("freq needs 4 integers and box 8 bounds")
        object.__setattr__(self, "freq", tuple(int(c) for c in self.freq))
        object.__setattr__(self, "box", tuple(float(c) for c in self.box))

    @classmethod
    def parse(cls, text: str) -> "Observable":
        """Parse 'cos x', 'sin(2x-w)', 'cos(x+y)' or '1'."""
        s = text.strip()
        if s == "1":
            return cls("1", "cos")
        m = re.fullmatch(r"(cos|sin)\s*\(?\s*(.*?)\s*\)?", s)
        if not m:
            raise ValueError(f"cannot parse observable {text!r}")
        if re.search(r"\w\s+\w", m.group(2)):
            raise ValueError(f"missing operator in {m.group(2)!r}")
        body = m.group(2).replace(" ", "")
        freq = [0, 0, 0, 0]
        pos = 0
        for t in _TERM.finditer(body):
            if t.start() != pos:
                break
            coef = int(t.group(2) or 1) * (-1 if t.group(1) == "-" else 1)
            freq[_AXES.index(t.group(3))] += coef
            pos = t.end()
        if pos != len(body) or not body:
            raise ValueError(f"cannot parse frequency combination {m.group(2)!r}")
        return cls(s, m.group(1), tuple(freq))

    @classmethod
    def indicator(cls, lo, hi, name: str = "box") -> "Observable":
        b = []
        for a, c in zip(lo, hi):
            if not 0 <= a < c <= TWO_PI:
                raise ValueError("box bounds must satisfy 0 <= lo < hi <= 2pi")
            b += [a, c]
        return cls(name, "box", box=tuple(b))

    @property
    def sup_norm(self) -> float:
        return 1.0

    @property
    def space_average(self) -> float:
        if self.kind == "box":
            widths = np.diff(np.asarray(self.box).reshape(4, 2), axis=1)
            return float(np.prod(widths) / TWO_PI ** 4)
        if self.kind == "cos" and not any(self.freq):
            return 1.0
        return 0.0

    def __call__(self, m):
        m = np.asarray(m, dtype=float)
        if self.kind == "box":
            b = np.asarray(self.box).reshape(4, 2)
            return np.all((m >= b[:, 0]) & (m < b[:, 1]), axis=-1).astype(float)
        ph = m @ np.asarray(self.freq, dtype=float)
        return np.cos(ph) if self.kind == "cos" else np.sin(ph)


@dataclass(frozen=True)
class ControlMap:
    """Two uncoupled standard maps with a small parameter (not ergodic)."""

    Nc: float = CONTROL_NC

    @property
    def N(self):
        return self.Nc


def _obs_arrays(observables):
    kinds = np.array([_KINDS[o.kind] for o in observables], dtype=np.int64)
    freqs = np.array([o.freq for o in observables], dtype=float)
    boxes = np.array([o.box for o in observables], dtype=float)
    return kinds, freqs, boxes


def _map_args(params):
    if isinstance(params, ControlMap):
        mode, Nc, base = 1, float(params.Nc), MapParams(1)
    else:
        mode, Nc, base = 0, 0.0, params
    N, cpl, fib, fibinv, pre, post = _kernels.map_arrays(base)
    return mode, N, Nc, cpl, fib, fibinv, pre, post


def batch_sums(params, seeds, observables, T: int, direction: int = 1, nbatch: int = 1,
               threads: int = 1):
    """(S, n_obs, nbatch) orbit sums; seeds are split across threads by index."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    if nbatch < 1 or nbatch > T:
        raise ValueError("need 1 <= nbatch <= T")
    seeds = np.ascontiguousarray(np.atleast_2d(seeds), dtype=float)
    kinds, freqs, boxes = _obs_arrays(observables)
    mode, N, Nc, cpl, fib, fibinv, pre, post = _map_args(params)

    def work(chunk):
        return _kernels.birkhoff_sums(chunk, mode, N, Nc, cpl, fib, fibinv, *pre, *post,
                                      kinds, freqs, boxes, int(T), int(direction), int(nbatch))

    if threads <= 1 or len(seeds) < 2:
        return work(seeds)
    chunks = np.array_split(seeds, min(threads, len(seeds)))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(work, chunks))
    return np.concatenate(parts, axis=0)


def birkhoff(params, m, phi: Observable, T: int, direction: int = 1) -> float:
    """(1/T) sum_{j<T} phi(f^{+-j}(m))."""
    return float(batch_sums(params, m, [phi], T, direction)[0, 0, 0] / T)


def batch_stderr(batch_means):
    """Standard error of an orbit average from its batch means.

    Equals s * sqrt(tau_eff / T) for per-step spread s and integrated
    correlation time tau_eff, without estimating either separately.
    """
    b = np.asarray(batch_means, dtype=float)
    return np.std(b, axis=-1, ddof=1) / math.sqrt(b.shape[-1])


def single_linkage_clusters(values, threshold: float) -> int:
    """Number of clusters of 1-d values joined whenever neighbours differ <= threshold."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        return 0
    return int(1 + np.count_nonzero(np.diff(v) > threshold))


@dataclass
class ErgodicityReport:
    observable: str
    T: int
    space_average: float
    phi_plus: np.ndarray
    phi_minus: np.ndarray
    stderr: float
    tolerance: float
    clusters: int
    seeds: np.ndarray = field(repr=False, default=None)

    @property
    def gaps(self):
        return np.abs(self.phi_plus - self.phi_minus)

    @property
    def dispersion(self) -> float:
        return float(np.std(self.phi_plus, ddof=1)) if len(self.phi_plus) > 1 else 0.0

    @property
    def single_cluster(self) -> bool:
        return self.clusters == 1

    @property
    def max_gap(self) -> float:
        return float(self.gaps.max())

    @property
    def max_deviation(self) -> float:
        return float(np.max(np.abs(self.phi_plus - self.space_average)))

    def verdict(self, tol: float = 0.05) -> str:
        if self.single_cluster and self.max_gap <= tol and self.max_deviation <= tol:
            return f"consistent with ergodicity at tolerance {tol:g}"
        return f"not consistent with ergodicity at tolerance {tol:g} ({self.clusters} clusters)"

    def to_dict(self) -> dict:
        return {
            "observable": self.observable,
            "T": self.T,
            "seeds": len(self.phi_plus),
            "space_average": self.space_average,
            "mean_phi_plus": float(np.mean(self.phi_plus)),
            "dispersion": self.dispersion,
            "max_abs_plus_minus_gap": self.max_gap,
            "max_abs_deviation": self.max_deviation,
            "stderr": self.stderr,
            "cluster_tolerance": self.tolerance,
            "clusters": self.clusters,
            "single_cluster": self.single_cluster,
        }

    def rows(self):
        for i, (a, b) in enumerate(zip(self.phi_plus, self.phi_minus)):
            row = {"seed_index": i, "observable": self.observable, "T": self.T,
                   "phi_plus": float(a), "phi_minus": float(b), "gap": float(abs(a - b))}
            if self.seeds is not None:
                row.update(zip(("x", "y", "z", "w"), map(float, self.seeds[i])))
            yield row


def hopf_reports(params, seeds, observables, T: int, nbatch: int = 100, threads: int = 1,
                 sigma: float = 3.0) -> list:
    """Forward and backward averages per seed and a single-linkage cluster count.

    Neighbouring forward averages join one cluster when they differ by at most
    sigma * sqrt(2) * stderr, where stderr is the pooled batch-means standard
    error of one orbit average.  All observables share one pass over each orbit.
    """
    seeds = np.atleast_2d(seeds)
    if len(seeds) < 2:
        raise ValueError("need at least two seeds")
    nbatch = min(nbatch, T)
    fwd = batch_sums(params, seeds, observables, T, 1, nbatch, threads)
    bwd = batch_sums(params, seeds, observables, T, -1, 1, threads)[:, :, 0]
    edges = (np.arange(nbatch + 1) * T) // nbatch
    out = []
    for o, phi in enumerate(observables):
        plus = fwd[:, o, :].sum(axis=1) / T
        minus = bwd[:, o] / T
        batch_means = fwd[:, o, :] / np.diff(edges)[None, :]
        se = float(np.sqrt(np.mean(batch_stderr(batch_means) ** 2)))
        tol = sigma * math.sqrt(2.0) * se
        out.append(ErgodicityReport(phi.name, int(T), phi.space_average, plus, minus, se, tol,
                                    single_linkage_clusters(plus, tol), seeds))
    return out


def hopf_agreement(params, seeds, phi: Observable, T: int, nbatch: int = 100,
                   threads: int = 1, sigma: float = 3.0) -> ErgodicityReport:
    return hopf_reports(params, seeds, [phi], T, nbatch, threads, sigma)[0]


@dataclass
class CorrelationSeries:
    lags: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    sample_count: int

    def rows(self):
        for n, c, e in zip(self.lags, self.values, self.stderr):
            yield {"lag": int(n), "C": float(c), "stderr": float(e), "samples": self.sample_count}


def correlation_decay(params, phi: Observable, psi: Observable, lags, sample_count: int,
                      rng=None) -> CorrelationSeries:
    """|E[phi * psi o f^n] - E[phi] E[psi o f^n]| over uniform random points."""
    lags = np.asarray(sorted(set(int(n) for n in lags)))
    if lags.size and lags[0] < 0:
        raise ValueError("lags must be >= 0")
    rng = rng if rng is not None else np.random.default_rng(0)
    pts = random_points(rng, sample_count)
    a = phi(pts)
    a = a - a.mean()
    vals, errs = [], []
    p = pts
    step = 0
    for n in lags:
        while step < n:
            p = _step(params, p)
            step += 1
        b = psi(p)
        b = b - b.mean()
        prod = a * b
        vals.append(abs(float(prod.mean())))
        errs.append(float(prod.std(ddof=1) / math.sqrt(sample_count)) if sample_count > 1 else float("nan"))
    return CorrelationSeries(lags, np.array(vals), np.array(errs), int(sample_count))


def _step(params, p):
    if isinstance(params, ControlMap):
        out = np.empty_like(p)
        s1, _ = sincos(p[..., 0])
        s2, _ = sincos(p[..., 2])
        out[..., 0] = reduce_mod_2pi(2 * p[..., 0] - p[..., 1] + params.Nc * s1)
        out[..., 1] = p[..., 0]
        out[..., 2] = reduce_mod_2pi(2 * p[..., 2] - p[..., 3] + params.Nc * s2)
        out[..., 3] = p[..., 2]
        return out
    return f_apply(params, p)


def leaf_density(params: MapParams, p, iterations: int, grid: int = 16):
    """Max box deviation |count/n - 1/grid^2| of the fiber orbit {A^{2Nk} pi_2(p)}.

    Vectorized over leading axes of p.  The orbit is computed exactly on the
    dyadic fiber grid.
    """
    if grid < 2:
        raise ValueError("grid must be >= 2")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    p = np.asarray(p, dtype=float)
    k = to_grid(p[..., 2:])
    kz, kw = k[..., 0].ravel(), k[..., 1].ravel()
    counts = np.zeros((kz.size, grid * grid), dtype=np.int64)
    rows = np.arange(kz.size)
    act = params.grid_fiber.act
    for _ in range(iterations):
        z, w = from_grid(kz), from_grid(kw)
        bz = np.minimum((z / TWO_PI * grid).astype(np.int64), grid - 1)
        bw = np.minimum((w / TWO_PI * grid).astype(np.int64), grid - 1)
        np.add.at(counts, (rows, bz * grid + bw), 1)
        kz, kw = act(kz, kw)
    dev = np.max(np.abs(counts / iterations - 1.0 / grid ** 2), axis=1)
    return dev.reshape(p.shape[:-1]) if p.ndim > 1 else float(dev[0])


@dataclass
class ProbeReport:
    direction: str
    slope: float
    fit_slope: float
    cocycle_rate: float
    expected: float
    h: float
    n_used: int
    saturated: bool
    r0: float
    r0_resolvable: bool
    log_separation: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "direction": self.direction,
            "slope": self.slope,
            "fit_slope": self.fit_slope,
            "cocycle_rate": self.cocycle_rate,
            "expected": self.expected,
            "h": self.h,
            "n_used": self.n_used,
            "saturated": self.saturated,
            "r0": self.r0,
            "r0_resolvable": self.r0_resolvable,
        }


def _diff_step(N, m, d):
    """Advance the separation d between m and m + d on the unperturbed map
    (same fiber), using sin a - sin b = 2 cos((a+b)/2) sin((a-b)/2)."""
    dx, dy = d[0], d[1]
    x = m[0]
    dsin = 2.0 * math.cos(x + 0.5 * dx) * math.sin(0.5 * dx)
    return np.array([2.0 * dx - dy + N * dsin, dx])


def contraction_probe(params: MapParams, m, h: float = 1e-8, n_max: int = 5,
                      direction: str = "minus", n_dir: int = 32, require_z: bool = False,
                      proxy: SetProxyConfig | None = None) -> ProbeReport:
    """Separation of m and m + h E (E = E- or E+ in the center plane).

    slope is the secant rate (log|d_n| - log h) / n at the last unsaturated
    n; fit_slope is the least-squares slope of log|d_j| over j <= n.
    """
    if direction not in ("minus", "plus"):
        raise ValueError("direction must be 'minus' or 'plus'")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    m = np.asarray(m, dtype=float)
    if require_z:
        flags = z_membership(params, m, proxy or SetProxyConfig())
        if not bool(flags.z):
            raise ValueError("seed is not in the Z proxy")
    r0 = float(params.N) ** -7.0
    h_used = max(float(h), 1e-10)
    if direction == "minus":
        e = stable_center(params, m, n_dir)[0]
    else:
        e = unstable_center(params, m, n_dir)[0]
    logs = [math.log(h_used)]
    p = m.copy()
    saturated = False
    if params.perturbed:
        q = m.copy()
        q[:2] = q[:2] + h_used * e
        for _ in range(n_max):
            p, q = f_apply(params, p), f_apply(params, q)
            d = (q[:2] - p[:2] + np.pi) % TWO_PI - np.pi
            sep = float(np.linalg.norm(d))
            if sep > SATURATION:
                saturated = True
                break
            logs.append(math.log(sep))
    else:
        d = h_used * e
        for _ in range(n_max):
            d = _diff_step(float(params.N), p, d)
            p = f_apply(params, p)
            sep = float(np.linalg.norm(d))
            if sep > SATURATION or sep == 0.0:
                saturated = True
                break
            logs.append(math.log(sep))
    logs = np.array(logs)
    n_used = len(logs) - 1
    if n_used == 0:
        slope = fit = float("nan")
    else:
        slope = float((logs[-1] - logs[0]) / n_used)
        fit = float(np.polyfit(np.arange(n_used + 1), logs, 1)[0])
    rate = float(log_norm_along(params, m, e, max(n_used, 1)) / max(n_used, 1))
    expected = (-0.8 if direction == "minus" else 0.8) * math.log(params.N)
    return ProbeReport(direction, slope, fit, rate, expected, h_used, n_used, saturated,
                       r0, r0 >= 1e-10, logs)
