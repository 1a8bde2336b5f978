"""Cones in the center plane, critical regions and sampled cone-lemma checks."""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .dynamics import MapParams, df_center, f_inverse, involution, random_points
from .pliss import SetProxyConfig, z_membership
from .lyapunov import unstable_center
from .scales import ScalesConfig
from .torus import HALF_PI, circle_distance


@dataclass(frozen=True)
class Cone2:
    """Double cone {w : aperture * |w_axis| >= |w_perp|}."""

    axis: tuple
    aperture: float

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=float)
        nrm = float(np.linalg.norm(a))
        if nrm == 0.0:
            raise ValueError("cone axis must be non-zero")
        if not self.aperture > 0:
            raise ValueError("aperture must be > 0")
        object.__setattr__(self, "axis", tuple(float(c) for c in a / nrm))
        object.__setattr__(self, "aperture", float(self.aperture))

    @classmethod
    def horizontal(cls, aperture: float) -> "Cone2":
        return cls((1.0, 0.0), aperture)

    @classmethod
    def vertical(cls, aperture: float) -> "Cone2":
        return cls((0.0, 1.0), aperture)

    @property
    def perp(self) -> np.ndarray:
        a = self.axis
        return np.array([-a[1], a[0]])

    def boundary_rays(self) -> np.ndarray:
        a = np.asarray(self.axis)
        rays = np.stack([a + self.aperture * self.perp, a - self.aperture * self.perp])
        return rays / np.linalg.norm(rays, axis=1, keepdims=True)


def in_cone(v, cone: Cone2):
    """Vectorized membership test; raises on a zero vector."""
    v = np.asarray(v, dtype=float)
    if np.any(np.all(v == 0.0, axis=-1)):
        raise ValueError("zero vector has no direction")
    along = np.abs(v @ np.asarray(cone.axis))
    across = np.abs(v @ cone.perp)
    return cone.aperture * along >= across


def cone_image_contained(M, src: Cone2, dst: Cone2):
    """Whether the linear image M(src) lies in dst (vectorized over M).

    Both boundary-ray images and the axis image must lie in dst, all on the
    same side of dst's axis, so the image sector cannot wrap around.
    """
    M = np.asarray(M, dtype=float)
    det = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    if np.any(det == 0.0):
        raise ValueError("singular matrix")
    rays = np.vstack([src.boundary_rays(), np.asarray(src.axis)[None, :]])
    imgs = np.einsum("...ij,rj->...ri", M, rays)
    inside = np.all(in_cone(imgs, dst), axis=-1)
    side = np.sign(imgs @ np.asarray(dst.axis))
    same = np.all(side == side[..., :1], axis=-1) & np.all(side != 0, axis=-1)
    return inside & same


def cone_image_contained_sampled(M, src: Cone2, dst: Cone2, rays: int = 1000):
    """Dense-ray reference for :func:`cone_image_contained` (single matrix)."""
    half = math.atan(src.aperture)
    ang = np.linspace(-half, half, rays)
    a, p = np.asarray(src.axis), src.perp
    vs = np.cos(ang)[:, None] * a + np.sin(ang)[:, None] * p
    return bool(np.all(in_cone(vs @ np.asarray(M, float).T, dst)))


def min_stretch(M, cone: Cone2):
    """Exact minimum of ||M v|| over unit v in the cone (vectorized over M)."""
    M = np.asarray(M, dtype=float)
    G = np.einsum("...ki,...kj->...ij", M, M)
    best = np.full(M.shape[:-2], np.inf)
    for r in cone.boundary_rays():
        # boundary rays are members by construction; a rounded membership test could drop them
        best = np.minimum(best, np.linalg.norm(M @ r, axis=-1))
    _, V = np.linalg.eigh(G)
    for j in range(2):
        c = V[..., :, j]
        val = np.linalg.norm(np.einsum("...ij,...j->...i", M, c), axis=-1)
        best = np.where(in_cone(c, cone), np.minimum(best, val), best)
    return best


REGION_KINDS = ("crit1", "crit2", "g1", "g2", "crit_tilde", "g_tilde")


@dataclass(frozen=True)
class CriticalRegion:
    kind: str
    N: int
    delta_tilde: float = 0.1

    def __post_init__(self):
        if self.kind not in REGION_KINDS:
            raise ValueError(f"unknown region kind {self.kind!r}")

    @property
    def half_width(self) -> float:
        if self.kind in ("crit1", "g1"):
            return 2.0 * self.N ** -0.3
        if self.kind in ("crit2", "g2"):
            return self.N ** -0.3
        return 2.0 * self.N ** -self.delta_tilde

    @property
    def is_complement(self) -> bool:
        return self.kind.startswith("g")


def _near_critical(t, width):
    d = np.minimum(circle_distance(t, HALF_PI), circle_distance(t, 3.0 * HALF_PI))
    return d < width


def in_critical(m, region: CriticalRegion):
    """Membership of m in the named region (critical sets or their complements)."""
    m = np.asarray(m, dtype=float)
    w = region.half_width
    crit = _near_critical(m[..., 0], w)
    if region.kind not in ("crit_tilde", "g_tilde"):
        crit = crit | _near_critical(m[..., 1], w)
    return ~crit if region.is_complement else crit


def region_gap(N: int) -> float:
    """Distance between the boundaries of the two critical widths."""
    return CriticalRegion("g1", N).half_width - CriticalRegion("g2", N).half_width


def in_good_cone(v, N: int, delta_tilde: float):
    v = np.asarray(v, dtype=float)
    return N ** delta_tilde * np.abs(v[..., 0]) >= np.abs(v[..., 1])


def sin_theta(params: MapParams, m, X):
    """|sin| of the angle between X and the direction (1, Omega) killed in the first row."""
    D = df_center(params, m)
    X = np.asarray(X, dtype=float)
    X = X / np.linalg.norm(X, axis=-1, keepdims=True)
    om = D[..., 0, 0]
    return np.abs(om * X[..., 0] - X[..., 1]) / np.sqrt(1.0 + om * om)


@dataclass
class ConeCheckReport:
    lemma: str
    hypothesis: str
    N: int
    samples: int
    pass_fraction: float
    first_counterexample: list | None
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.samples > 0 and self.pass_fraction == 1.0

    def to_dict(self) -> dict:
        return {
            "lemma": self.lemma,
            "hypothesis": self.hypothesis,
            "N": self.N,
            "samples": self.samples,
            "pass_fraction": self.pass_fraction,
            "first_counterexample": self.first_counterexample,
            "details": self.details,
        }


def _report(lemma, hyp, N, pts, ok, details=None):
    ok = np.asarray(ok, dtype=bool)
    bad = np.flatnonzero(~ok)
    first = [float(c) for c in pts[bad[0]]] if bad.size else None
    frac = float(ok.mean()) if ok.size else float("nan")
    return ConeCheckReport(lemma, hyp, N, int(ok.size), frac, first, details or {})


def _filtered(rng, count, accept, batch=None):
    """Draw uniform points until ``count`` of them satisfy ``accept``."""
    batch = batch or max(1024, count)
    out, have = [], 0
    for _ in range(1000):
        pts = random_points(rng, batch)
        pts = pts[accept(pts)]
        out.append(pts)
        have += pts.shape[0]
        if have >= count:
            break
    pts = np.concatenate(out)[:count]
    return pts


def check_cone_containment(params: MapParams, scales: ScalesConfig, count: int, rng):
    """Ds(m) maps the wide horizontal cone into the thin one, for m in G2."""
    N = params.N
    g2 = CriticalRegion("g2", N)
    pts = _filtered(rng, count, lambda p: in_critical(p, g2))
    src = Cone2.horizontal(4.0 / scales.theta1)
    dst = Cone2.horizontal(scales.theta2)
    ok = cone_image_contained(df_center(params, pts), src, dst)
    # vertical mirror under the inverse map, at the involuted points
    mirror_pts = involution(pts)
    Dinv = np.linalg.inv(df_center(params, f_inverse(params, mirror_pts)))
    ok_mirror = cone_image_contained(Dinv, Cone2.vertical(4.0 / scales.theta1), Cone2.vertical(scales.theta2))
    om = np.abs(df_center(params, pts)[..., 0, 0])
    return _report("cone_containment", "m in G2", N, pts, ok, {
        "mirror_pass_fraction": float(ok_mirror.mean()),
        "min_abs_omega": float(om.min()),
        "required_abs_omega": float(4.0 / scales.theta1 + 1.0 / scales.theta2),
    })


def check_expansion(params: MapParams, scales: ScalesConfig, count: int, rng):
    """Unit vectors in the thin horizontal cone grow by more than N^{1/2} on G2."""
    N = params.N
    g2 = CriticalRegion("g2", N)
    pts = _filtered(rng, count, lambda p: in_critical(p, g2))
    stretch = min_stretch(df_center(params, pts), Cone2.horizontal(scales.theta2))
    mirror_pts = involution(pts)
    Dinv = np.linalg.inv(df_center(params, f_inverse(params, mirror_pts)))
    stretch_m = min_stretch(Dinv, Cone2.vertical(scales.theta2))
    return _report("expansion", "m in G2, v in thin horizontal cone", N, pts, stretch > math.sqrt(N), {
        "min_stretch": float(stretch.min()),
        "threshold": math.sqrt(N),
        "mirror_pass_fraction": float((stretch_m > math.sqrt(N)).mean()),
    })


def check_good_field_angle(params: MapParams, scales: ScalesConfig, count: int, rng):
    """Off the critical strip, good fields keep |sin theta| > N^{-4 dt} and ||Df X|| >= N^{1-6 dt}."""
    N, dt = params.N, scales.delta_tilde
    off = CriticalRegion("g_tilde", N, dt)
    pts = _filtered(rng, count, lambda p: in_critical(p, off))
    half = math.atan(N ** dt)
    ang = rng.uniform(-half, half, size=pts.shape[0])
    X = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    st = sin_theta(params, pts, X)
    growth = np.linalg.norm(np.einsum("...ij,...j->...i", df_center(params, pts), X), axis=-1)
    # worst case over the whole good cone is attained on its boundary rays
    worst = np.minimum(
        sin_theta(params, pts, np.array([1.0, N ** dt])),
        sin_theta(params, pts, np.array([1.0, -N ** dt])),
    )
    ok = (st > N ** (-4 * dt)) & (growth >= N ** (1 - 6 * dt))
    return _report("good_field_angle", "m off critical strip, X in good cone", N, pts, ok, {
        "min_abs_sin": float(st.min()),
        "min_abs_sin_cone_worst": float(worst.min()),
        "sin_threshold": N ** (-4 * dt),
        "min_growth": float(growth.min()),
        "growth_threshold": N ** (1 - 6 * dt),
        "worst_case_pass_fraction": float((worst > N ** (-4 * dt)).mean()),
    })


def check_contraction_sets_avoid_critical(params: MapParams, scales: ScalesConfig, count: int, rng):
    """Near pi/2 (|cos x| < 4N^{-3/10}) the center derivative norm stays below N^{4/5}."""
    N = params.N
    pts = _filtered(rng, count, lambda p: np.abs(np.cos(p[:, 0])) < 4.0 * N ** -0.3)
    norms = np.linalg.norm(df_center(params, pts), ord=2, axis=(-2, -1))
    return _report("contraction_sets_avoid_critical", "|cos x| < 4 N^{-3/10}", N, pts,
                   norms < N ** 0.8, {"max_norm": float(norms.max()), "threshold": N ** 0.8})


def check_unstable_cone(params: MapParams, scales: ScalesConfig, count: int, rng,
                        proxy: SetProxyConfig | None = None):
    """On Z-proxy points E+ lies in the wide horizontal cone and its thin cone nests inside."""
    N = params.N
    proxy = proxy or SetProxyConfig()
    cand = random_points(rng, count)
    flags = z_membership(params, cand, proxy)
    pts = cand[flags.z]
    if pts.shape[0] == 0:
        return _report("unstable_cone", "m in Z proxy", N, pts, np.zeros(0, bool))
    ep, _ = unstable_center(params, pts, proxy.n_back)
    wide = Cone2.horizontal(1.0 / scales.theta1)
    ok1 = in_cone(ep, wide)
    outer = Cone2.horizontal(4.0 / scales.theta1)
    eye = np.eye(2)
    ok2 = np.array([bool(cone_image_contained(eye, Cone2(tuple(e), scales.theta1 / 2), outer)) for e in ep])
    return _report("unstable_cone", "m in Z proxy", N, pts, ok1 & ok2, {
        "candidates": int(count),
        "z_fraction": float(flags.z.mean()),
    })


LEMMA_CHECKS = {
    "unstable_cone": check_unstable_cone,
    "contraction_sets_avoid_critical": check_contraction_sets_avoid_critical,
    "cone_containment": check_cone_containment,
    "expansion": check_expansion,
    "good_field_angle": check_good_field_angle,
}


def verify_cone_lemmas(params: MapParams, scales: ScalesConfig, sample_count: int,
                       rng_seed: int = 0, lemmas=None, z_sample_count: int | None = None):
    """Run the selected cone checks; returns a list of :class:`ConeCheckReport`."""
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    lemmas = list(lemmas) if lemmas is not None else list(LEMMA_CHECKS)
    reports = []
    for i, name in enumerate(lemmas):
        rng = np.random.Generator(np.random.Philox(key=rng_seed, counter=[0, 0, 0, i]))
        count = sample_count
        if name == "unstable_cone":
            count = z_sample_count or min(sample_count, 5000)
        reports.append(LEMMA_CHECKS[name](params, scales, count, rng))
    return reports


def smallest_passing_N(lemma: str, N_values, sample_count: int, rng_seed: int = 0, **scale_kw):
    """First N in the list at which the lemma's pass fraction reaches 1, else None."""
    for N in sorted(N_values):
        rep = verify_cone_lemmas(MapParams(N), ScalesConfig(N, **scale_kw), sample_count,
                                 rng_seed, lemmas=[lemma])[0]
        if rep.passed:
            return N
    return None
