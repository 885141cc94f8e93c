#!/usr/bin/env python3
"""Independent reference values frozen into the test suite.

Uses mpmath only (no package imports), so a bug in the package cannot leak
into its own oracle. Run it and paste the printed numbers into
tests/oracle_values.py if anything here changes.
"""
import itertools

import mpmath as mp

mp.mp.dps = 40


def Phi(x):
    return mp.ncdf(x)


def m1(m, s):
    return m * Phi(m / s) + s * mp.npdf(m / s)


def m2(m, s):
    return (m * m + s * s) * Phi(m / s) + m * s * mp.npdf(m / s)


def m2_quad(m, s):
    # integrate directly against the density, split at the kink
    f = lambda x: (m + s * x) ** 2 * mp.npdf(x)
    return mp.quad(f, [-m / s, mp.inf])


def cross_quad(q, b, d):
    """E (G1 + b)_+ (G2 + d)_+ for unit-variance G with correlation q."""
    s = mp.sqrt(1 - q * q)

    def inner(x):
        # G2 = q x + s y, positive part kicks in at y > (-d - q x) / s
        lo = (-d - q * x) / s
        c = d + q * x
        # E_y (c + s y)_+ = m1(c, s) in closed form along y
        return (x + b) * m1(c, s) * mp.npdf(x)

    return mp.quad(inner, [-b, mp.inf])


def wigner_scalar(alpha_eff, r):
    """Constant (p, zeta) of the LV fixed-point system for a Wigner profile."""
    def zeta_of(p):
        c = alpha_eff * Phi(r / mp.sqrt(p))
        return ((1 - 2 * c) - mp.sqrt(1 - 4 * c)) / (2 * c)

    def f(p):
        z = zeta_of(p)
        return alpha_eff * (1 + z) ** 2 * m2(r, mp.sqrt(p)) - p

    lo, hi = mp.mpf("1e-6"), mp.mpf(1)
    while f(hi) > 0:
        hi *= 2
    p = mp.findroot(f, (lo, hi), solver="bisect", tol=mp.mpf(10) ** -35, maxsteps=400)
    return p, zeta_of(p)


def norm_bound(row_sum, vmax, n, eps):
    return (1 + eps) * (2 * mp.sqrt(row_sum) + 6 / mp.sqrt(mp.log(1 + eps)) * mp.sqrt(vmax * mp.log(n)))


def w2_bruteforce(a, b):
    best = min(sum((x - y) ** 2 for x, y in zip(a, perm)) for perm in itertools.permutations(b))
    return mp.sqrt(mp.mpf(best) / len(a))


if __name__ == "__main__":
    print("RELU_PROB_1_1 =", mp.nstr(Phi(1), 20))
    print("RELU_M1_1_1 =", mp.nstr(m1(mp.mpf(1), mp.mpf(1)), 20))
    print("RELU_M2_1_1 =", mp.nstr(m2(mp.mpf(1), mp.mpf(1)), 20))
    print("RELU_M2_1_2 =", mp.nstr(m2_quad(mp.mpf(1), mp.mpf(2)), 20))
    for q, b, d in [(0.5, 1, 1), (0.9, 0.3, -0.4), (-0.7, 1.5, 0.2), (0.999, 1, 1), (0.2, -2, 0.5)]:
        v = cross_quad(mp.mpf(q), mp.mpf(b), mp.mpf(d))
        print(f"RELU_CROSS[{q}, {b}, {d}] =", mp.nstr(v, 20))
    # q = -1: G2 = -G1, support is -b < g < d
    v = mp.quad(lambda g: (g + mp.mpf("0.3")) * (mp.mpf("0.7") - g) * mp.npdf(g), [mp.mpf("-0.3"), mp.mpf("0.7")])
    print("RELU_CROSS[-1, 0.3, 0.7] =", mp.nstr(v, 20))
    for n in (1000, 2000):
        p, z = wigner_scalar(mp.mpf("0.2") * (n - 1) / n, mp.mpf(1))
        print(f"WIGNER_0.2_n{n} p =", mp.nstr(p, 20), "zeta =", mp.nstr(z, 20))
    # wigner alpha = 0.2, n = 1000: row sums 0.2 * 999 / 1000, entries 0.2 / 1000
    print("NORM_BOUND_WIGNER =", mp.nstr(norm_bound(mp.mpf("0.1998"), mp.mpf("0.0002"), 1000, mp.mpf("0.1")), 20))
    print("NORM_BOUND_WIGNER_NOMINAL =", mp.nstr(norm_bound(mp.mpf("0.2"), mp.mpf("0.0002"), 1000, mp.mpf("0.1")), 20))
    a = [0.3, -1.2, 2.5, 0.0]
    b = [1.0, 0.7, -0.4, 3.1]
    print("W2_FOUR =", mp.nstr(w2_bruteforce([mp.mpf(x) for x in a], [mp.mpf(x) for x in b]), 20))
