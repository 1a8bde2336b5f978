import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bclab.dynamics import MapParams, ShearPerturbation, f_apply, f_inverse, random_points
from bclab.ergodicity import (
    ControlMap,
    Observable,
    batch_stderr,
    batch_sums,
    birkhoff,
    contraction_probe,
    correlation_decay,
    hopf_agreement,
    hopf_reports,
    leaf_density,
    single_linkage_clusters,
)
from bclab.pliss import SetProxyConfig, z_membership

TRIG = ["cos x", "sin y", "cos(x+y)", "sin(2x-w)", "cos z", "cos(z-3w+y)", "1"]


@pytest.mark.parametrize("text,kind,freq", [
    ("cos x", "cos", (1, 0, 0, 0)),
    ("cos(x+y)", "cos", (1, 1, 0, 0)),
    ("sin(2x-w)", "sin", (2, 0, 0, -1)),
    ("sin ( -z + 3y )", "sin", (0, 3, -1, 0)),
    ("1", "cos", (0, 0, 0, 0)),
])
def test_parse(text, kind, freq):
    o = Observable.parse(text)
    assert (o.kind, o.freq) == (kind, freq)


@pytest.mark.parametrize("bad", ["tan x", "cos", "cos(x+)", "cos(q)", "cos(x y)"])
def test_parse_errors(bad):
    with pytest.raises(ValueError):
        Observable.parse(bad)


def test_space_averages(rng):
    assert Observable.parse("cos x").space_average == 0.0
    assert Observable.parse("1").space_average == 1.0
    box = Observable.indicator([0, 0, 0, 0], [math.pi, math.pi, 2 * math.pi, 2 * math.pi])
    assert box.space_average == pytest.approx(0.25)
    pts = random_points(rng, 200_000)
    assert box(pts).mean() == pytest.approx(0.25, abs=5e-3)
    with pytest.raises(ValueError):
        Observable.indicator([1, 0, 0, 0], [0.5, 1, 1, 1])


@pytest.mark.parametrize("params", [MapParams(5), MapParams(5, post_shears=(ShearPerturbation(0, (0, 1, 1, 0), 1e-3),))])
def test_kernel_sums_match_numpy_orbits(params, rng):
    obs = [Observable.parse(t) for t in TRIG] + [Observable.indicator([0] * 4, [3, 3, 6, 6])]
    seeds = random_points(rng, 4)
    T = 12
    fwd = batch_sums(params, seeds, obs, T, 1)[..., 0]
    bwd = batch_sums(params, seeds, obs, T, -1)[..., 0]
    p, q = seeds, seeds
    ref_f = np.zeros_like(fwd)
    ref_b = np.zeros_like(bwd)
    for _ in range(T):
        ref_f += np.stack([o(p) for o in obs], axis=1)
        ref_b += np.stack([o(q) for o in obs], axis=1)
        p, q = f_apply(params, p), f_inverse(params, q)
    np.testing.assert_allclose(fwd, ref_f, atol=1e-6)
    np.testing.assert_allclose(bwd, ref_b, atol=1e-6)


def test_control_map_sums_match_numpy(rng):
    from bclab.ergodicity import _step
    seeds = random_points(rng, 3)
    cm = ControlMap(0.5)
    got = batch_sums(cm, seeds, [Observable.parse("cos(x+z)")], 50)[:, 0, 0]
    p = seeds
    ref = np.zeros(3)
    for _ in range(50):
        ref += np.cos(p[:, 0] + p[:, 2])
        p = _step(cm, p)
    np.testing.assert_allclose(got, ref, atol=1e-8)


def test_batches_partition_the_orbit(rng):
    seeds = random_points(rng, 3)
    obs = [Observable.parse("cos x")]
    whole = batch_sums(MapParams(20), seeds, obs, 1000)[..., 0]
    parts = batch_sums(MapParams(20), seeds, obs, 1000, nbatch=7)
    np.testing.assert_allclose(parts.sum(axis=-1), whole, rtol=1e-12)


def test_deterministic_and_thread_independent(rng):
    seeds = random_points(rng, 7)
    obs = [Observable.parse("cos x"), Observable.parse("cos z")]
    a = batch_sums(MapParams(30), seeds, obs, 5000, nbatch=10)
    b = batch_sums(MapParams(30), seeds, obs, 5000, nbatch=10)
    c = batch_sums(MapParams(30), seeds, obs, 5000, nbatch=10, threads=3)
    assert np.array_equal(a, b) and np.array_equal(a, c)
    assert birkhoff(MapParams(30), seeds[0], obs[0], 5000) == birkhoff(MapParams(30), seeds[0], obs[0], 5000)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(TRIG), st.integers(0, 2**31), st.integers(1, 300), st.integers(1, 200))
def test_trig_averages_bounded(text, seed, T, N):
    m = random_points(np.random.default_rng(seed), 1)[0]
    for direction in (1, -1):
        assert abs(birkhoff(MapParams(N), m, Observable.parse(text), T, direction)) <= 1.0


def test_argument_validation():
    with pytest.raises(ValueError):
        batch_sums(MapParams(3), np.zeros(4), [Observable.parse("cos x")], 0)
    with pytest.raises(ValueError):
        batch_sums(MapParams(3), np.zeros(4), [Observable.parse("cos x")], 10, direction=2)
    with pytest.raises(ValueError):
        batch_sums(MapParams(3), np.zeros(4), [Observable.parse("cos x")], 10, nbatch=11)
    with pytest.raises(ValueError):
        hopf_reports(MapParams(3), np.zeros((1, 4)), [Observable.parse("cos x")], 10)


def test_clusters_and_stderr():
    assert single_linkage_clusters([], 1.0) == 0
    assert single_linkage_clusters([0.0, 0.1, 0.2, 5.0, 5.05], 0.15) == 2
    assert single_linkage_clusters([3.0, 1.0, 2.0], 1.0) == 1
    b = np.array([[1.0, 3.0, 1.0, 3.0]])
    assert batch_stderr(b)[0] == pytest.approx(np.std([1, 3, 1, 3], ddof=1) / 2)


def test_hopf_single_cluster_unperturbed(rng):
    seeds = random_points(rng, 12)
    reps = hopf_reports(MapParams(100), seeds, [Observable.parse(t) for t in ("cos x", "cos z")], 20_000, 20)
    for r in reps:
        assert r.single_cluster and r.max_deviation <= 0.05 and r.max_gap <= 0.05
        assert r.tolerance == pytest.approx(3 * math.sqrt(2) * r.stderr)
        assert "consistent" in r.verdict()
        rows = list(r.rows())
        assert len(rows) == 12 and {"seed_index", "phi_plus", "phi_minus", "x", "w"} <= set(rows[0])


def test_control_map_is_detected(rng):
    seeds = random_points(rng, 20)
    r = hopf_agreement(ControlMap(0.5), seeds, Observable.parse("cos x"), 20_000, 20)
    assert r.clusters >= 2 and not r.single_cluster
    assert r.verdict().startswith("not consistent")


def test_correlation_decay(rng):
    phi = Observable.parse("cos x")
    series = correlation_decay(MapParams(100), phi, phi, [3, 0, 1], 20_000, rng)
    assert list(series.lags) == [0, 1, 3]
    assert series.values[0] == pytest.approx(0.5, abs=0.02)
    assert series.values[2] <= 5 * series.stderr[2] + 0.01
    rows = list(series.rows())
    assert rows[0]["lag"] == 0 and rows[0]["samples"] == 20_000
    with pytest.raises(ValueError):
        correlation_decay(MapParams(3), phi, phi, [-1], 10)


def test_leaf_density(rng):
    p = random_points(rng, 4)
    short = leaf_density(MapParams(5), p, 64)
    long = leaf_density(MapParams(5), p, 16384)
    assert short.shape == (4,)
    assert np.all(long < short) and np.all(long < 0.01)
    # the fixed point never leaves its box
    assert leaf_density(MapParams(5), np.zeros(4), 100) == pytest.approx(1 - 1 / 256)
    with pytest.raises(ValueError):
        leaf_density(MapParams(5), p, 0)


def test_contraction_probe_on_z_point(rng):
    params = MapParams(20)
    proxy = SetProxyConfig(horizon=16, n_back=24, n_fwd=24)
    pts = random_points(rng, 400)
    z = z_membership(params, pts, proxy).z
    m = pts[np.flatnonzero(z)[0]]
    rep = contraction_probe(params, m, h=1e-8, n_max=4, require_z=True, proxy=proxy)
    assert rep.r0 == 20.0 ** -7 and rep.r0_resolvable
    assert rep.n_used >= 1 and not np.isnan(rep.slope)
    assert rep.slope == pytest.approx(rep.cocycle_rate, abs=0.05)
    assert rep.slope <= rep.expected
    up = contraction_probe(params, m, h=1e-12, n_max=2, direction="plus")
    assert up.h == 1e-10 and up.slope > 0
    assert set(up.to_dict()) >= {"r0", "h", "slope", "saturated"}


def test_contraction_probe_guards(rng):
    params = MapParams(20)
    with pytest.raises(ValueError):
        contraction_probe(params, np.zeros(4), direction="sideways")
    with pytest.raises(ValueError):
        contraction_probe(params, np.zeros(4), n_max=0)
    far = contraction_probe(MapParams(30), random_points(rng, 1)[0], n_max=2)
    assert far.r0 == 30.0 ** -7 and not far.r0_resolvable
