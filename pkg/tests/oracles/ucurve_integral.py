"""Independent reference values for the u-curve log-growth averages at N = 3.

Run as a script; prints the numbers frozen in tests/test_ucurves.py.

The unstable field comes from the series
    alpha(m) = sum_j mu^{-2Nj} Dc(f^-1 m) ... Dc(f^-(j-1) m) c,   c = (mu^N e_x, 0),
with the fiber back-orbit carried in 50-digit arithmetic, the curve from
scipy's DOP853 and the integrals from fixed-panel Gauss-Legendre.
"""

import math

import mpmath as mp
import numpy as np
from scipy.integrate import solve_ivp

mp.mp.dps = 50
N = 3
MU = (3 + math.sqrt(5)) / 2
LAM = 1 / MU
E_U = np.array([MU - 1.0, 1.0]) / math.hypot(MU - 1.0, 1.0)   # eigenvector of [[2,1],[1,1]]
A_INV_2N = mp.matrix([[1, -1], [-1, 2]]) ** (2 * N)
A_N_ROW = (mp.matrix([[2, 1], [1, 1]]) ** N)[0, :]
TWO_PI_MP = 2 * mp.pi
TERMS = 14


def back_orbit(m):
    x, y = float(m[0]), float(m[1])
    fib = mp.matrix([mp.mpf(m[2]), mp.mpf(m[3])])
    out = []
    for _ in range(TERMS):
        fib = A_INV_2N * fib
        fib = mp.matrix([mp.fmod(fib[0], TWO_PI_MP), mp.fmod(fib[1], TWO_PI_MP)])
        cpl = float(mp.fmod((A_N_ROW * fib)[0], TWO_PI_MP))
        # inverse of (x, y) -> (2x - y + N sin x + cpl, x)
        x, y = y, 2 * y - x + N * math.sin(y) + cpl
        out.append((x, y))
    return out


def alpha(m):
    c = np.array([MU ** N * E_U[0], 0.0])
    total = np.zeros(2)
    prod = np.eye(2)
    orb = back_orbit(m)
    for j in range(1, TERMS + 1):
        total += MU ** (-2 * N * j) * (prod @ c)
        x = orb[j - 1][0]
        prod = prod @ np.array([[N * math.cos(x) + 2.0, -1.0], [1.0, 0.0]])
    return total


def velocity(t, m):
    a = alpha(m)
    return np.concatenate([a, E_U]) / (LAM ** N * abs(E_U[0]))


def forward(m):
    x, y, z, w = m
    cpl = float(A_N_ROW[0]) * z + float(A_N_ROW[1]) * w
    return np.array([2 * x - y + N * math.sin(x) + cpl, x, 0.0, 0.0])


def log_growth(m, n):
    v = np.array([1.0, 0.0])
    p = np.array(m, dtype=float)
    for _ in range(n):
        v = np.array([[N * math.cos(p[0]) + 2.0, -1.0], [1.0, 0.0]]) @ v
        p = forward(p)
    return math.log(np.linalg.norm(v))


def main():
    seed = np.array([0.3, 1.1, 0.7, 2.2])
    cell = 2 * math.pi / 2**50
    seed[2:] = np.round(seed[2:] / cell) * cell
    sol = solve_ivp(velocity, (0.0, 2 * math.pi), seed, method="DOP853",
                    rtol=1e-12, atol=1e-12, dense_output=True)
    g, w = np.polynomial.legendre.leggauss(16)
    for n, panels in ((1, 256), (2, 8192)):
        edges = np.linspace(0.0, 2 * math.pi, panels + 1)
        num = den = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            ts = 0.5 * (a + b) + 0.5 * (b - a) * g
            for t, wt in zip(ts, w):
                m = sol.sol(t)
                speed = np.linalg.norm(velocity(t, m))
                num += 0.5 * (b - a) * wt * log_growth(m, n) * speed
                den += 0.5 * (b - a) * wt * speed
        print(f"I_{n} = {num / den:.10f}   length = {den:.10f}")
    print("x_length ratio", (sol.sol(2 * math.pi)[0] - seed[0]) / (2 * math.pi))


if __name__ == "__main__":
    main()
