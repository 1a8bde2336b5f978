"""Compiled orbit kernels.

Each kernel mirrors the numpy implementation in :mod:`bclab.dynamics`
operation by operation.  Single steps agree to within an ulp (numpy and
libm sin may round differently); each path on its own is deterministic.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .torus import CELL, GRID_MASK, GRID_SIZE, HALF_PI, TWO_PI

_MASK = np.uint64(GRID_MASK)
_GSIZE = float(GRID_SIZE)

OBS_COS = 0
OBS_SIN = 1
OBS_BOX = 2


@njit(cache=True, nogil=True)
def _reduce(v):
    r = v % TWO_PI
    if r >= TWO_PI:
        r = 0.0
    return r


@njit(cache=True, nogil=True)
def _sincos(x):
    t = x / HALF_PI
    q = np.rint(t)
    r = (t - q) * HALF_PI
    s = math.sin(r)
    c = math.cos(r)
    quad = q % 4.0
    if quad == 0.0:
        return s, c
    if quad == 1.0:
        return c, -s
    if quad == 2.0:
        return -s, -c
    return -c, s


@njit(cache=True, nogil=True)
def _to_grid(v):
    k = np.rint(v / CELL) % _GSIZE
    return np.uint64(np.int64(k)) & _MASK


@njit(cache=True, nogil=True)
def _from_grid(k):
    return float(k) * CELL


@njit(cache=True, nogil=True)
def _act(mat, kz, kw):
    nz = (mat[0, 0] * kz + mat[0, 1] * kw) & _MASK
    nw = (mat[1, 0] * kz + mat[1, 1] * kw) & _MASK
    return nz, nw


@njit(cache=True, nogil=True)
def _apply_shears(m, targets, freqs, amps, sign, reverse):
    n = targets.shape[0]
    for ii in range(n):
        i = n - 1 - ii if reverse else ii
        ph = 0.0
        for j in range(4):
            ph += m[j] * freqs[i, j]
        t = targets[i]
        v = _reduce(m[t] + sign * amps[i] * math.sin(ph))
        if t >= 2:
            v = _from_grid(_to_grid(v))
        m[t] = v


@njit(cache=True, nogil=True)
def step_forward(m, N, cpl, fib, pre_t, pre_k, pre_e, post_t, post_k, post_e):
    _apply_shears(m, pre_t, pre_k, pre_e, 1.0, False)
    x = m[0]
    y = m[1]
    kz = _to_grid(m[2])
    kw = _to_grid(m[3])
    cz, _ = _act(cpl, kz, kw)
    fz, fw = _act(fib, kz, kw)
    s, _ = _sincos(x)
    xn = (2.0 * x - y + N * s) + _from_grid(cz)
    m[0] = _reduce(xn)
    m[1] = _reduce(x)
    m[2] = _from_grid(fz)
    m[3] = _from_grid(fw)
    _apply_shears(m, post_t, post_k, post_e, 1.0, False)


@njit(cache=True, nogil=True)
def step_inverse(m, N, cpl, fibinv, pre_t, pre_k, pre_e, post_t, post_k, post_e):
    _apply_shears(m, post_t, post_k, post_e, -1.0, True)
    xp = m[0]
    yp = m[1]
    kz = _to_grid(m[2])
    kw = _to_grid(m[3])
    fz, fw = _act(fibinv, kz, kw)
    cz, _ = _act(cpl, fz, fw)
    s, _ = _sincos(yp)
    y = (2.0 * yp - xp + N * s) + _from_grid(cz)
    m[0] = _reduce(yp)
    m[1] = _reduce(y)
    m[2] = _from_grid(fz)
    m[3] = _from_grid(fw)
    _apply_shears(m, pre_t, pre_k, pre_e, -1.0, True)


@njit(cache=True, nogil=True)
def step_control(m, Nc):
    s, _ = _sincos(m[0])
    xn = 2.0 * m[0] - m[1] + Nc * s
    s2, _ = _sincos(m[2])
    zn = 2.0 * m[2] - m[3] + Nc * s2
    m[1] = _reduce(m[0])
    m[0] = _reduce(xn)
    m[3] = _reduce(m[2])
    m[2] = _reduce(zn)


@njit(cache=True, nogil=True)
def step_control_inverse(m, Nc):
    s, _ = _sincos(m[1])
    y = 2.0 * m[1] - m[0] + Nc * s
    s2, _ = _sincos(m[3])
    w = 2.0 * m[3] - m[2] + Nc * s2
    m[0] = _reduce(m[1])
    m[1] = _reduce(y)
    m[2] = _reduce(m[3])
    m[3] = _reduce(w)


@njit(cache=True, nogil=True)
def _shear_center_block(m, targets, freqs, amps, out):
    # product of the center blocks of the shears, applied in order, at the points they see
    n = targets.shape[0]
    for i in range(n):
        ph = 0.0
        for j in range(4):
            ph += m[j] * freqs[i, j]
        t = targets[i]
        if t < 2:
            c = amps[i] * math.cos(ph)
            a0 = c * freqs[i, 0]
            a1 = c * freqs[i, 1]
            # row t += (a0, a1) . out
            r0 = out[t, 0] + a0 * out[0, 0] + a1 * out[1, 0]
            r1 = out[t, 1] + a0 * out[0, 1] + a1 * out[1, 1]
            out[t, 0] = r0
            out[t, 1] = r1
        v = _reduce(m[t] + amps[i] * math.sin(ph))
        if t >= 2:
            v = _from_grid(_to_grid(v))
        m[t] = v


@njit(cache=True, nogil=True)
def center_block_and_step(m, N, cpl, fib, pre_t, pre_k, pre_e, post_t, post_k, post_e, out):
    """Write the center derivative at m into ``out`` and advance m by one step."""
    out[0, 0] = 1.0
    out[0, 1] = 0.0
    out[1, 0] = 0.0
    out[1, 1] = 1.0
    _shear_center_block(m, pre_t, pre_k, pre_e, out)
    _, c = _sincos(m[0])
    om = N * c + 2.0
    a00 = om * out[0, 0] - out[1, 0]
    a01 = om * out[0, 1] - out[1, 1]
    out[1, 0] = out[0, 0]
    out[1, 1] = out[0, 1]
    out[0, 0] = a00
    out[0, 1] = a01
    x = m[0]
    y = m[1]
    kz = _to_grid(m[2])
    kw = _to_grid(m[3])
    cz, _ = _act(cpl, kz, kw)
    fz, fw = _act(fib, kz, kw)
    s, _ = _sincos(x)
    m[0] = _reduce((2.0 * x - y + N * s) + _from_grid(cz))
    m[1] = _reduce(x)
    m[2] = _from_grid(fz)
    m[3] = _from_grid(fw)
    _shear_center_block(m, post_t, post_k, post_e, out)


@njit(cache=True, nogil=True)
def center_lyapunov(seeds, N, cpl, fib, pre_t, pre_k, pre_e, post_t, post_k, post_e, n, burn):
    """Per-seed sums of log r11, log r22 over n steps after ``burn`` steps.

    Returns (S, 2) sums; a row of NaN marks a degenerate renormalization.
    """
    S = seeds.shape[0]
    out = np.zeros((S, 2))
    m = np.empty(4)
    D = np.empty((2, 2))
    for s in range(S):
        for j in range(4):
            m[j] = seeds[s, j]
        q00 = 1.0
        q10 = 0.0
        q01 = 0.0
        q11 = 1.0
        acc1 = 0.0
        acc2 = 0.0
        for it in range(burn + n):
            center_block_and_step(m, N, cpl, fib, pre_t, pre_k, pre_e, post_t, post_k, post_e, D)
            v0 = D[0, 0] * q00 + D[0, 1] * q10
            v1 = D[1, 0] * q00 + D[1, 1] * q10
            u0 = D[0, 0] * q01 + D[0, 1] * q11
            u1 = D[1, 0] * q01 + D[1, 1] * q11
            r11 = math.sqrt(v0 * v0 + v1 * v1)
            if r11 == 0.0 or not math.isfinite(r11):
                acc1 = np.nan
                break
            q00 = v0 / r11
            q10 = v1 / r11
            proj = q00 * u0 + q10 * u1
            u0 -= proj * q00
            u1 -= proj * q10
            r22 = math.sqrt(u0 * u0 + u1 * u1)
            if r22 == 0.0:
                acc1 = np.nan
                break
            q01 = u0 / r22
            q11 = u1 / r22
            if it >= burn:
                acc1 += math.log(r11)
                acc2 += math.log(r22)
        out[s, 0] = acc1
        out[s, 1] = acc2
    return out


@njit(cache=True, nogil=True)
def _observe(m, kind, freq, box):
    if kind == OBS_BOX:
        for j in range(4):
            if m[j] < box[2 * j] or m[j] >= box[2 * j + 1]:
                return 0.0
        return 1.0
    ph = 0.0
    for j in range(4):
        ph += m[j] * freq[j]
    if kind == OBS_COS:
        return math.cos(ph)
    return math.sin(ph)


@njit(cache=True, nogil=True)
def birkhoff_sums(seeds, mode, N, Nc, cpl, fib, fibinv, pre_t, pre_k, pre_e,
                  post_t, post_k, post_e, kinds, freqs, boxes, T, direction, nbatch):
    """Batch sums of observables along orbits of length T.

    mode 0 is the skew product, mode 1 the uncoupled control product.
    Returns (S, n_obs, nbatch); batch b sums indices [b*T/nbatch, (b+1)*T/nbatch).
    """
    S = seeds.shape[0]
    nobs = kinds.shape[0]
    out = np.zeros((S, nobs, nbatch))
    m = np.empty(4)
    for s in range(S):
        for j in range(4):
            m[j] = seeds[s, j]
        for t in range(T):
            b = (t * nbatch) // T
            for o in range(nobs):
                out[s, o, b] += _observe(m, kinds[o], freqs[o], boxes[o])
            if mode == 0:
                if direction > 0:
                    step_forward(m, N, cpl, fib, pre_t, pre_k, pre_e, post_t, post_k, post_e)
                else:
                    step_inverse(m, N, cpl, fibinv, pre_t, pre_k, pre_e, post_t, post_k, post_e)
            else:
                if direction > 0:
                    step_control(m, Nc)
                else:
                    step_control_inverse(m, Nc)
    return out


@njit(cache=True, nogil=True)
def orbit_forward(seed, n, N, cpl, fib, pre_t, pre_k, pre_e, post_t, post_k, post_e):
    out = np.empty((n + 1, 4))
    m = seed.copy()
    out[0] = m
    for i in range(n):
        step_forward(m, N, cpl, fib, pre_t, pre_k, pre_e, post_t, post_k, post_e)
        out[i + 1] = m
    return out


def shear_arrays(shears):
    targets = np.array([s.target for s in shears], dtype=np.int64)
    freqs = np.array([s.k for s in shears], dtype=np.float64).reshape(len(shears), 4)
    amps = np.array([s.eps for s in shears], dtype=np.float64)
    return targets, freqs, amps


def map_arrays(params):
    """Positional kernel arguments describing a :class:`MapParams`."""
    pre = shear_arrays(params.pre_shears)
    post = shear_arrays(params.post_shears)
    return (
        float(params.N),
        params.grid_couple.as_uint64(),
        params.grid_fiber.as_uint64(),
        params.grid_fiber_inv.as_uint64(),
        pre,
        post,
    )
