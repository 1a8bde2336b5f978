import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.optimize import minimize_scalar

from bclab.cones import (
    LEMMA_CHECKS,
    Cone2,
    CriticalRegion,
    cone_image_contained,
    cone_image_contained_sampled,
    in_cone,
    in_critical,
    in_good_cone,
    min_stretch,
    region_gap,
    sin_theta,
    smallest_passing_N,
    verify_cone_lemmas,
)
from bclab.dynamics import MapParams, df_center, random_points
from bclab.scales import ScalesConfig

finite = st.floats(-1e3, 1e3, allow_nan=False).filter(lambda v: abs(v) > 1e-3)
apertures = st.floats(0.01, 50.0)
axes = st.floats(0, math.pi)


@given(finite, finite, st.floats(-1e6, 1e6).filter(lambda t: abs(t) > 1e-6), apertures, axes)
def test_membership_is_scale_invariant(a, b, t, ap, ang):
    cone = Cone2((math.cos(ang), math.sin(ang)), ap)
    v = np.array([a, b])
    assert in_cone(t * v, cone) == in_cone(v, cone)


def test_zero_vector_rejected():
    with pytest.raises(ValueError):
        in_cone(np.zeros(2), Cone2.horizontal(1.0))
    with pytest.raises(ValueError):
        Cone2((0.0, 0.0), 1.0)
    with pytest.raises(ValueError):
        Cone2((1.0, 0.0), 0.0)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4), apertures, apertures, axes, axes)
def test_boundary_ray_test_agrees_with_dense_sampling(entries, a1, a2, t1, t2):
    M = np.array(entries).reshape(2, 2)
    assume(abs(np.linalg.det(M)) > 1e-2)
    src = Cone2((math.cos(t1), math.sin(t1)), a1)
    dst = Cone2((math.cos(t2), math.sin(t2)), a2)
    exact = bool(cone_image_contained(M, src, dst))
    sampled = cone_image_contained_sampled(M, src, dst)
    if exact:
        assert sampled
    elif sampled:
        # the image sector wraps through dst's perpendicular inside a sliver thinner
        # than the ray grid; the preimage of that perpendicular is the witness
        witness = np.linalg.solve(M, dst.perp)
        assert in_cone(witness, src)


def test_containment_vectorized_over_matrices(rng):
    M = df_center(MapParams(500), random_points(rng, 50))
    got = cone_image_contained(M, Cone2.horizontal(0.5), Cone2.horizontal(0.05))
    for Mi, g in zip(M, got):
        assert g == cone_image_contained_sampled(Mi, Cone2.horizontal(0.5), Cone2.horizontal(0.05))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4), apertures)
def test_min_stretch_matches_dense_sampling(entries, ap):
    M = np.array(entries).reshape(2, 2)
    assume(abs(np.linalg.det(M)) > 1e-2)
    cone = Cone2.horizontal(ap)
    ang = np.linspace(-math.atan(ap), math.atan(ap), 20001)
    v = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    norms = np.linalg.norm(v @ M.T, axis=1)
    i = int(norms.argmin())
    step = ang[1] - ang[0]
    lo, hi = max(ang[0], ang[i] - step), min(ang[-1], ang[i] + step)
    fine = minimize_scalar(lambda a: np.linalg.norm(M @ [math.cos(a), math.sin(a)]),
                           bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
    dense = min(norms[i], fine.fun)
    exact = float(min_stretch(M, cone))
    assert exact <= dense + 1e-12
    assert exact >= dense - 1e-7 * max(1.0, dense)


@pytest.mark.parametrize("N", [10, 100, 10_000])
def test_region_nesting_and_gap(N, rng):
    assert region_gap(N) == pytest.approx(N ** -0.3, rel=1e-15)
    g1, g2 = CriticalRegion("g1", N), CriticalRegion("g2", N)
    assert g1.half_width - g2.half_width > 0
    pts = random_points(rng, 20000)
    assert not np.any(in_critical(pts, g1) & ~in_critical(pts, g2))
    c1, c2 = CriticalRegion("crit1", N), CriticalRegion("crit2", N)
    assert np.array_equal(in_critical(pts, c1), ~in_critical(pts, g1))
    assert not np.any(in_critical(pts, c2) & ~in_critical(pts, c1))


def test_region_kind_validation():
    with pytest.raises(ValueError):
        CriticalRegion("crit3", 10)


def test_good_cone_and_sin_theta():
    assert in_good_cone(np.array([1.0, 1.5]), 100, 0.1)
    assert not in_good_cone(np.array([1.0, 1.7]), 100, 0.1)
    p = MapParams(10)
    m = np.array([0.0, 0.0, 0.0, 0.0])
    # Omega = 12; the killed direction is (1, 12)
    assert sin_theta(p, m, np.array([1.0, 12.0])) == pytest.approx(0.0, abs=1e-15)
    assert sin_theta(p, m, np.array([-12.0, 1.0])) == pytest.approx(1.0)


def test_mirror_lemmas_share_pass_fraction():
    params = MapParams(100)
    reps = verify_cone_lemmas(params, ScalesConfig(100), 5000, rng_seed=1,
                              lemmas=["cone_containment", "expansion"])
    for r in reps:
        assert r.details["mirror_pass_fraction"] == r.pass_fraction


def test_worked_examples_at_N100():
    sc = ScalesConfig(100)
    assert sc.theta1 == pytest.approx(0.158489, abs=1e-6) and sc.theta2 == pytest.approx(0.063096, abs=1e-6)
    v = np.array([1.0, 0.07])
    assert not in_cone(v, Cone2.horizontal(sc.theta2)) and in_cone(v, Cone2.horizontal(sc.theta1))
    assert in_cone(np.array([1.0, 1.0]), Cone2.horizontal(1.0))
    M = np.array([[102.0, -1.0], [1.0, 0.0]])
    assert cone_image_contained(M, Cone2.horizontal(4 / sc.theta1), Cone2.horizontal(sc.theta2))
    img = M @ np.array([1.0, 4 / sc.theta1])
    assert img[1] / img[0] == pytest.approx(1 / 76.76, rel=1e-3)
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    assert cone_image_contained(rot, Cone2.horizontal(0.3), Cone2.vertical(0.3))
    assert cone_image_contained(np.eye(2), Cone2.horizontal(0.2), Cone2.horizontal(0.3))
    assert CriticalRegion("crit_tilde", 100, 0.1).half_width == pytest.approx(1.26191, abs=1e-5)
    m = np.array([math.pi / 2 + 1.3, 0.0, 0.0, 0.0])
    assert not in_critical(m, CriticalRegion("crit_tilde", 100, 0.1))
    for kind in ("crit1", "crit2", "crit_tilde"):
        assert in_critical(np.array([math.pi / 2, 1.0, 0.0, 0.0]), CriticalRegion(kind, 100))
    for kind in ("g1", "g2"):
        assert in_critical(np.zeros(4), CriticalRegion(kind, 100))
    # sin of the angle for X = (1, 0) at x = 0 is |Omega| / sqrt(1 + Omega^2)
    assert sin_theta(MapParams(100), np.zeros(4), np.array([1.0, 0.0])) == pytest.approx(102 / math.hypot(1, 102))


def test_contraction_inequality_needs_very_large_N():
    # the hypothesis |cos x| < 4 N^{-3/10} only forces ||Df|| < N^{4/5} once N^{1/10} > 4
    r = verify_cone_lemmas(MapParams(100), ScalesConfig(100), 2000, lemmas=["contraction_sets_avoid_critical"])[0]
    assert not r.passed
    assert smallest_passing_N("contraction_sets_avoid_critical", [10**5, 3 * 10**6], 2000) == 3 * 10**6


def test_report_structure():
    rep = verify_cone_lemmas(MapParams(100), ScalesConfig(100), 2000, rng_seed=2,
                             lemmas=["expansion", "good_field_angle"])
    assert [r.lemma for r in rep] == ["expansion", "good_field_angle"]
    for r in rep:
        d = r.to_dict()
        assert d["samples"] == 2000 and d["pass_fraction"] == 1.0 and d["first_counterexample"] is None
        assert r.passed
    with pytest.raises(ValueError):
        verify_cone_lemmas(MapParams(100), ScalesConfig(100), 0)


def test_failures_report_a_counterexample():
    r = verify_cone_lemmas(MapParams(20), ScalesConfig(20), 2000, rng_seed=0, lemmas=["cone_containment"])[0]
    assert not r.passed and len(r.first_counterexample) == 4
    pt = np.array(r.first_counterexample)
    sc = ScalesConfig(20)
    assert not cone_image_contained(df_center(MapParams(20), pt), Cone2.horizontal(4 / sc.theta1),
                                    Cone2.horizontal(sc.theta2))


def test_unstable_cone_on_z_points():
    r = verify_cone_lemmas(MapParams(100), ScalesConfig(100), 200, rng_seed=4, lemmas=["unstable_cone"])[0]
    assert r.lemma == "unstable_cone" and r.pass_fraction == 1.0


def test_smallest_passing_N_scan():
    assert set(LEMMA_CHECKS) >= {"cone_containment", "expansion", "good_field_angle"}
    assert smallest_passing_N("expansion", [100, 50], 500) == 50
    assert smallest_passing_N("cone_containment", [20, 40], 500) is None
