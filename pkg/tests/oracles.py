"""Independent reference implementations used only by the test suite.

Everything here is deliberately written the slow, obvious way (plain
Python series summation, naive loops, central differences) so that a bug
in the package cannot hide in a shared code path.
"""

from __future__ import annotations

import math

import numpy as np

# --- Bessel references -------------------------------------------------


def series_i0(x: float) -> float:
    """I0 via the ascending series, summed until term < 1e-18 * sum."""
    q = 0.25 * x * x
    total = 1.0
    term = 1.0
    n = 0
    while True:
        n += 1
        term *= q / (n * n)
        total += term
        if term < 1e-18 * total or n > 400:
            return total


def series_i1(x: float) -> float:
    q = 0.25 * x * x
    total = 1.0
    term = 1.0
    n = 0
    while True:
        n += 1
        term *= q / (n * (n + 1))
        total += term
        if term < 1e-18 * total or n > 400:
            return 0.5 * x * total


def series_log_i0(x: float) -> float:
    return math.log(series_i0(x))


def asymptotic_log_i0(x: float) -> float:
    """log I0 from the standard large-argument expansion, smallest-term cut."""
    total = 1.0
    term = 1.0
    k = 0
    while True:
        k += 1
        new = term * (2 * k - 1) ** 2 / (8.0 * k * x)
        if abs(new) >= abs(term) or k > 200:
            break
        total += new
        term = new
        if abs(term) < 1e-18 * total:
            break
    return x - 0.5 * math.log(2.0 * math.pi * x) + math.log(total)


def asymptotic_ratio_i1_i0(x: float) -> float:
    """I1/I0 from the two scaled expansions, each cut at its smallest term."""

    def scaled(mu):
        total = 1.0
        term = 1.0
        k = 0
        while True:
            k += 1
            new = term * ((2 * k - 1) ** 2 - mu) / (8.0 * k * x)
            if abs(new) >= abs(term) or k > 200:
                break
            total += new
            term = new
            if abs(term) < 1e-18 * abs(total):
                break
        return total

    return scaled(4.0) / scaled(0.0)


# --- finite differences -------------------------------------------------


def central_diff(f, x: float, h: float) -> float:
    return (f(x + h) - f(x - h)) / (2.0 * h)


def fd_gradient(f, x: np.ndarray, h=1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (f(xp) - f(xm)) / (2.0 * step)
    return g


def fd_hessian(f, x: np.ndarray, h=1e-4) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.size
    H = np.zeros((n, n))
    for i in range(n):
        si = h * max(1.0, abs(x[i]))
        for j in range(i, n):
            sj = h * max(1.0, abs(x[j]))
            xpp = x.copy()
            xpm = x.copy()
            xmp = x.copy()
            xmm = x.copy()
            xpp[[i, j]] += [si, sj] if i != j else [2 * si, 0]
            if i == j:
                f0 = f(x)
                xp = x.copy()
                xp[i] += si
                xm = x.copy()
                xm[i] -= si
                H[i, i] = (f(xp) - 2 * f0 + f(xm)) / si**2
            else:
                xpm[[i, j]] += [si, -sj]
                xmp[[i, j]] += [-si, sj]
                xmm[[i, j]] += [-si, -sj]
                H[i, j] = H[j, i] = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (
                    4 * si * sj
                )
    return H


# --- brute-force tensor contraction -------------------------------------


def full_symmetric_tensor(theta15, exponents) -> np.ndarray:
    """Expand 15 unique coefficients into the full 3x3x3x3 symmetric array."""
    D = np.zeros((3, 3, 3, 3))
    by_counts = {tuple(e): t for e, t in zip(exponents, theta15)}
    for i in range(3):
        for j in range(3):
            for k in range(3):
                for l in range(3):
                    counts = [0, 0, 0]
                    for ax in (i, j, k, l):
                        counts[ax] += 1
                    D[i, j, k, l] = by_counts[tuple(counts)]
    return D


def naive_quartic_form(D: np.ndarray, g: np.ndarray) -> float:
    total = 0.0
    for i in range(3):
        for j in range(3):
            for k in range(3):
                for l in range(3):
                    total += D[i, j, k, l] * g[i] * g[j] * g[k] * g[l]
    return total
