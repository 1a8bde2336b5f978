import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bclab import _kernels
from bclab.dynamics import (
    MapParams,
    ShearPerturbation,
    df_center,
    df_full,
    f_apply,
    f_inverse,
    involution_residual,
    iterate,
    omega,
    orbit,
    random_points,
    semiconjugacy_check,
    standard_map,
)
from bclab.torus import GRID_SIZE, IntMat2, to_grid, torus_distance

SHEAR = ShearPerturbation(0, (0, 1, 1, 0), 1e-3)
FIBER_SHEAR = ShearPerturbation(2, (1, 0, 0, 1), 1e-4)
MATRICES = [IntMat2(2, 1, 1, 1), IntMat2(3, 1, 2, 1), IntMat2(1, 1, 1, 2)]


@pytest.mark.parametrize("A", MATRICES)
@pytest.mark.parametrize("N", [1, 3, 7, 100])
def test_fixed_points_exact(N, A):
    p = MapParams(N, A)
    for m in ([0.0, 0.0, 0.0, 0.0], [math.pi, math.pi, 0.0, 0.0]):
        assert np.array_equal(f_apply(p, np.array(m)), np.array(m))


@pytest.mark.parametrize("N", [1, 2, 5, 13, 20])
def test_involution_conjugacy(N, points):
    assert involution_residual(MapParams(N), points).max() <= 1e-9


@pytest.mark.parametrize("N", [1, 4, 20, 100])
def test_fiber_is_exact_cat_map(N, points):
    # independent oracle: big-integer action of A^{2N} on grid indices
    M = MapParams(N).A.power(2 * N)
    kz, kw = to_grid(points[:, 2]), to_grid(points[:, 3])
    got = to_grid(f_apply(MapParams(N), points)[:, 2:])
    for i in range(0, len(points), 97):
        z, w = int(kz[i]), int(kw[i])
        assert int(got[i, 0]) == (M.a * z + M.b * w) % GRID_SIZE
        assert int(got[i, 1]) == (M.c * z + M.d * w) % GRID_SIZE
    assert semiconjugacy_check(MapParams(N), points).max() == 0.0


@pytest.mark.parametrize("params", [
    MapParams(7),
    MapParams(7, post_shears=(SHEAR,)),
    MapParams(7, pre_shears=(FIBER_SHEAR,), post_shears=(SHEAR,)),
])
def test_inverse_roundtrip(params, points):
    back = f_inverse(params, f_apply(params, points))
    assert torus_distance(back, points).max() <= 1e-9
    if not any(s.target >= 2 for s in params.shears):
        # a fiber shear leaves the grid, and its rounding grows like mu^{2N} per step
        assert torus_distance(iterate(params, iterate(params, points, 3), -3), points).max() <= 1e-6


def test_orbit_shape_and_direction(points):
    p = MapParams(3)
    o = orbit(p, points[:5], -4)
    assert o.shape == (5, 5, 4)
    assert np.allclose(o[1], f_inverse(p, points[:5]))


@pytest.mark.parametrize("N", [3, 10, 100])
def test_center_block_properties(N, points):
    D = df_center(MapParams(N), points)
    assert np.abs(np.linalg.det(D) - 1.0).max() <= 1e-12
    sv = np.linalg.svd(D, compute_uv=False)
    assert sv[:, 0].max() <= 2 * N and sv[:, 0].min() >= 1 / (2 * N)
    # second derivative: only d/dx of Omega, bounded by N
    assert np.abs(N * np.sin(points[:, 0])).max() <= N


def test_center_plane_invariant(points):
    J = df_full(MapParams(20), points)
    assert np.all(J[:, 2:, :2] == 0.0)


def test_omega_and_standard_map():
    assert omega(MapParams(5), 0.0) == 7.0
    assert omega(MapParams(5), math.pi) == -3.0
    x, y = 0.4, 2.0
    want = ((2 * x - y + 3 * math.sin(x)) % (2 * math.pi), x)
    assert np.allclose(standard_map(3, [x, y]), want)


@pytest.mark.parametrize("params", [MapParams(4), MapParams(4, post_shears=(SHEAR,)),
                                    MapParams(4, pre_shears=(FIBER_SHEAR,))])
def test_derivative_matches_finite_differences(params, rng):
    m = random_points(rng, 8)
    J = df_full(params, m)
    h = 1e-6
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        diff = f_apply(params, m + e) - f_apply(params, m - e)
        diff = (diff + math.pi) % (2 * math.pi) - math.pi
        # fiber coordinates live on a grid of spacing ~5.6e-15; keep the step well above it
        np.testing.assert_allclose(diff / (2 * h), J[:, :, j], atol=5e-4 * max(1.0, np.abs(J).max()))


def test_df_center_refuses_fiber_coupling():
    p = MapParams(4, post_shears=(ShearPerturbation(2, (1, 0, 0, 0), 1e-3),))
    assert not p.center_invariant
    with pytest.raises(ValueError):
        df_center(p, np.zeros(4))


@pytest.mark.parametrize("bad", [
    dict(target=4, k=(0, 0, 0, 0), eps=0.1),
    dict(target=0, k=(1, 0, 0, 0), eps=0.1),
    dict(target=0, k=(0, 1, 0), eps=0.1),
    dict(target=0, k=(0, 1, 0, 0), eps=-1.0),
])
def test_shear_validation(bad):
    with pytest.raises(ValueError):
        ShearPerturbation(**bad)


def test_map_params_validation():
    with pytest.raises(ValueError):
        MapParams(0)
    with pytest.raises(ValueError):
        MapParams(3, IntMat2(1, 1, 0, 1))
    p = MapParams(3, post_shears=(SHEAR,))
    assert p.perturbed and p.unperturbed() == MapParams(3)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 200), st.integers(0, 2**32 - 1))
def test_numba_step_agrees_with_numpy(N, seed):
    params = MapParams(N, post_shears=(SHEAR,), pre_shears=(FIBER_SHEAR,))
    m = random_points(np.random.default_rng(seed), 1)[0]
    Nf, cpl, fib, _, pre, post = _kernels.map_arrays(params)
    got = _kernels.orbit_forward(m, 3, Nf, cpl, fib, *pre, *post)
    want = orbit(params, m, 3)
    assert torus_distance(got, want).max() <= 1e-9
