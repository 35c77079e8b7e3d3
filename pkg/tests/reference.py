"""Independent reference values for the tests.

Hit ratio and occupancy come from numerical integration over the gap
density f(x) = beta*exp(-beta*(x-s)), x >= s, using the per-gap events
directly rather than any closed form:

    hit       iff  x <= tau  or  a broadcast lands in (omega, x)
    occupied  for  min(x, tau)  plus  (x - omega - B)^+ ,  B ~ Exp(lam)
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate


def _quad(fn, s, beta, points):
    lo = s
    pts = sorted({p for p in points if math.isfinite(p) and p > lo})
    total = 0.0
    edges = [lo] + pts + [math.inf]
    for a, b in zip(edges, edges[1:]):
        val, _ = integrate.quad(lambda x: fn(x) * beta * math.exp(-beta * (x - s)), a, b,
                                epsabs=1e-14, epsrel=1e-12, limit=200)
        total += val
    return total


def co_reference(s: float, beta: float, lam: float, tau: float, omega: float) -> tuple[float, float]:
    mean = s + 1.0 / beta

    def hit(x):
        if x <= tau:
            return 1.0
        if x > omega and lam > 0:
            return -math.expm1(-lam * (x - omega))
        return 0.0

    def occ(x):
        base = min(x, tau)
        if x > omega and lam > 0:
            a = x - omega
            base += a + math.expm1(-lam * a) / lam
        return base

    pts = [tau, omega]
    return _quad(hit, s, beta, pts), _quad(occ, s, beta, pts) / mean


def mc_co(s: float, beta: float, lam: float, tau: float, omega: float, n: int, seed: int):
    """Plain Monte-Carlo over i.i.d. gaps, a third route to the same numbers."""
    rng = np.random.default_rng(seed)
    x = s + rng.exponential(1.0 / beta, n)
    b = omega + rng.exponential(1.0 / lam, n) if lam > 0 else np.full(n, np.inf)
    hit = (x <= tau) | (b < x)
    occ = np.minimum(x, tau) + np.clip(x - b, 0, None)
    return hit.mean(), occ.sum() / x.sum()


def upper_bound_reference(s, beta, b):
    """Fill the budget with the items of largest beta_i first, each up to
    its instant-overhearing ceiling 1/(beta s + 1), slope beta s + 1."""
    s = np.asarray(s, float)
    beta = np.asarray(beta, float)
    p = (1 / (s + 1 / beta)) / np.sum(1 / (s + 1 / beta))
    order = np.argsort(-beta, kind="stable")
    left = b
    h = 0.0
    for i in order:
        cap = 1 / (beta[i] * s[i] + 1)
        take = min(cap, left)
        h += p[i] * (beta[i] * s[i] + 1) * take
        left -= take
        if left <= 0:
            break
    return min(h, 1.0)
