import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bclab.dynamics import MapParams, random_points
from bclab.pliss import (
    PlissParams,
    SetProxyConfig,
    estimate_set_measures,
    pliss_density_identity,
    pliss_times,
    pliss_times_bruteforce,
    x_membership,
    z_membership,
)


@st.composite
def pliss_case(draw, max_len=16):
    a1 = draw(st.floats(-5, 2))
    gap = draw(st.floats(0.1, 3.0))
    eps = draw(st.floats(0.01, 1.0))
    n = draw(st.integers(1, max_len))
    # entries on a coarse dyadic grid so that ties with the threshold really occur
    raw = draw(st.lists(st.integers(1, 64), min_size=n, max_size=n))
    seq = [a1 + 4.0 * r / 64 for r in raw]
    return seq, PlissParams(eps, a1, a1 + gap)


@settings(max_examples=1000)
@given(pliss_case())
def test_matches_bruteforce(case):
    seq, pp = case
    assert pliss_times(seq, pp).times == pliss_times_bruteforce(seq, pp)


@settings(max_examples=200, deadline=None)
@given(pliss_case(max_len=300))
def test_density_bound_on_low_average_sequences(case):
    seq, pp = case
    seq = np.asarray(seq)
    # shift the sequence so its average sits at or below alpha2
    excess = seq.mean() - pp.alpha2
    if excess > 0:
        seq = np.maximum(seq - excess, pp.alpha1 + 1e-9)
    rep = pliss_times(seq, pp)
    if not rep.average_ok:
        return
    h = rep.horizon
    edge = math.ceil(h / 10)
    assert rep.density >= rep.bound - edge / h - 1e-12


def test_simple_example():
    pp = PlissParams(0.5, -1.0, 0.0)
    # window sums against c = 0.5 per step
    rep = pliss_times([0.0, 2.0, 0.0, 0.0], pp)
    assert rep.times == (2, 3)
    assert rep.times == pliss_times_bruteforce([0.0, 2.0, 0.0, 0.0], pp)
    assert pliss_times([1.0, 1.0], pp, horizon=0).times == ()


def test_input_validation():
    with pytest.raises(ValueError):
        PlissParams(0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        PlissParams(0.1, 1.0, 1.0)
    pp = PlissParams(0.1, 0.0, 1.0)
    with pytest.raises(ValueError):
        pliss_times([0.0, 1.0], pp)
    with pytest.raises(ValueError):
        pliss_times([0.5], pp, horizon=3)


def test_density_identity_arithmetic():
    d = pliss_density_identity(100, 0.25)
    logn = math.log(100)
    eps = logn / 6
    lhs = eps / (-(0.75) * logn + eps + logn + math.log(2))
    assert d["lhs"] == pytest.approx(lhs, abs=1e-15)
    assert abs(d["lhs"] - d["middle"]) <= 1e-12
    assert d["holds"] == (d["middle"] >= d["rhs"])
    assert d["N_star"] == pytest.approx(2.0 ** 24)
    huge = pliss_density_identity(100, 1e-3)
    assert huge["N_star"] == math.inf and huge["log_N_star"] == pytest.approx(6000 * math.log(2))


def test_identity_holds_exactly_beyond_threshold():
    delta = 0.5
    n_star = 2 ** 12
    assert not pliss_density_identity(n_star // 2, delta)["holds"]
    assert pliss_density_identity(n_star * 2, delta)["holds"]


def test_proxy_config():
    cfg = SetProxyConfig(delta=0.001)
    assert cfg.T == 35  # floor(1.007 / 0.028)
    assert cfg.measure_bound == pytest.approx(0.993 / 1.007)
    with pytest.raises(ValueError):
        SetProxyConfig(horizon=-1)
    with pytest.raises(ValueError):
        SetProxyConfig(delta=1.0)


def test_z_proxy_nested_in_horizon(rng):
    params = MapParams(20)
    m = random_points(rng, 400)
    prev = None
    for h in (4, 8, 16, 32):
        z = z_membership(params, m, SetProxyConfig(horizon=h, n_back=24, n_fwd=24))
        if prev is not None:
            assert not np.any(z.z_minus & ~prev.z_minus)
            assert not np.any(z.z_plus & ~prev.z_plus)
            assert not np.any(z.z & ~prev.z)
        prev = z


def test_x_subset_of_z(rng):
    params = MapParams(20)
    proxy = SetProxyConfig(horizon=8, delta=0.1, n_back=16, n_fwd=16)
    flags, x = x_membership(params, random_points(rng, 200), proxy)
    assert not np.any(x & ~flags.z)


def test_set_measure_report_rows():
    rep = estimate_set_measures(MapParams(20), SetProxyConfig(horizon=8, n_back=16, n_fwd=16), 50, rng_seed=3)
    assert rep.sample_count == 50 and len(rep.rows) == 50
    assert list(rep.rows[0])[:6] == ["sample_index", "z_minus", "z_plus", "z", "x", "first_failure_n"]
    assert rep.z_fraction == np.mean([r["z"] for r in rep.rows])
    again = estimate_set_measures(MapParams(20), SetProxyConfig(horizon=8, n_back=16, n_fwd=16), 50, rng_seed=3)
    assert again.rows == rep.rows
