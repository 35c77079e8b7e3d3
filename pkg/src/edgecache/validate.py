"""Invariant suites behind ``edgecache validate``."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import analytics
from .analytics import PolicyParams, TimeDrivenCurve, evaluate_co, separability_check
from .demand import Catalog, DemandProfile, Population, popularity
from .optimizer import (
    allocate,
    check_allocation,
    event_driven_curves,
    grid_oracle,
    solve_benchmarks,
    solve_time_driven,
    time_driven_curves,
)
from .simulator import SimConfig, run

log = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""


def _random_profile(rng) -> tuple[DemandProfile, float]:
    return DemandProfile(float(rng.uniform(0.05, 5.0)), float(rng.uniform(0.1, 5.0))), float(rng.uniform(0.05, 5.0))


def region_continuity(n: int = 1000, seed: int = 1, tol: float = 1e-12) -> CheckResult:
    """Adjacent closed-form cases agree on their shared boundary."""
    rng = np.random.default_rng(seed)
    for _ in range(n):
        prof, lam = _random_profile(rng)
        s, beta = prof.s, prof.beta
        tau = float(rng.uniform(0, s))
        a = analytics._case1(s, beta, lam, tau, s)
        b = analytics._case2(s, beta, lam, tau, s)
        if max(abs(a[0] - b[0]), abs(a[1] - b[1])) > tol:
            return CheckResult("region continuity", False, f"omega=s: s={s} beta={beta} lam={lam} tau={tau}: {a} vs {b}")
        omega = s + float(rng.exponential(2.0))
        b = analytics._case2(s, beta, lam, s, omega)
        c = analytics._case3(s, beta, lam, s, omega)
        if max(abs(b[0] - c[0]), abs(b[1] - c[1])) > tol:
            return CheckResult("region continuity", False, f"tau=s: s={s} beta={beta} lam={lam} omega={omega}: {b} vs {c}")
    return CheckResult("region continuity", True, f"{n} random boundary points")


def _random_params(rng, s: float) -> PolicyParams:
    tau = float(rng.choice([0.0, rng.uniform(0, 2 * s), rng.uniform(0, 3 * s), math.inf], p=[0.1, 0.4, 0.4, 0.1]))
    if math.isinf(tau):
        return PolicyParams(tau, tau)
    extra = float(rng.choice([0.0, rng.uniform(0, 2 * s), math.inf], p=[0.1, 0.8, 0.1]))
    return PolicyParams(tau, tau + extra)


def separability(n: int = 1000, seed: int = 2, tol: float = 1e-12) -> CheckResult:
    rng = np.random.default_rng(seed)
    for _ in range(n):
        prof, lam = _random_profile(rng)
        params = _random_params(rng, prof.s)
        h, r = evaluate_co(prof, lam, params)
        (hc, rc), (ho, ro) = separability_check(prof, lam, params)
        if abs(h - hc - ho) > tol or abs(r - rc - ro) > tol:
            return CheckResult("separability", False, f"{prof} lam={lam} {params}: {h, r} vs {hc + ho, rc + ro}")
    return CheckResult("separability", True, f"{n} random points")


def monotonicity(seed: int = 3, grid: int = 24) -> CheckResult:
    rng = np.random.default_rng(seed)
    for _ in range(5):
        prof, lam = _random_profile(rng)
        ts = np.linspace(0, 3 * prof.s, grid)
        for w in ts:
            hs = [evaluate_co(prof, lam, PolicyParams(t, w)) for t in ts if t <= w]
            for (h0, r0), (h1, r1) in zip(hs, hs[1:]):
                if h1 < h0 - 1e-12 or r1 < r0 - 1e-12:
                    return CheckResult("monotonicity", False, f"not increasing in tau: {prof} lam={lam}")
        for t in ts:
            hs = [evaluate_co(prof, lam, PolicyParams(t, w)) for w in ts if w >= t]
            for (h0, r0), (h1, r1) in zip(hs, hs[1:]):
                if h1 > h0 + 1e-12 or r1 > r0 + 1e-12:
                    return CheckResult("monotonicity", False, f"not decreasing in omega: {prof} lam={lam}")
    return CheckResult("monotonicity", True)


def dominance(n_items: int = 5, grid: int = 64, seed: int = 4, tol: float = 1e-9) -> CheckResult:
    """No deterministic policy lies above the randomized boundary curve."""
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(n_items):
        prof, lam = _random_profile(rng)
        curve = TimeDrivenCurve(prof, lam)
        taus = np.concatenate([np.linspace(0, 3 * prof.s, grid - 1), [math.inf]])
        omegas = np.concatenate([np.linspace(0, 3 * prof.s, grid - 1), [math.inf]])
        for t in taus:
            for w in omegas:
                if w < t:
                    continue
                h, r = evaluate_co(prof, lam, PolicyParams(float(t), float(w)))
                gap = h - curve.h(r)
                worst = max(worst, gap)
                if gap > tol:
                    return CheckResult("curve dominance", False, f"{prof} lam={lam} tau={t} omega={w}: {h} > {curve.h(r)}")
    return CheckResult("curve dominance", True, f"max excess {worst:.2e}")


def curve_shape(seed: int = 5) -> CheckResult:
    """Boundary curves are concave; the convexity claim is checked and logged."""
    rng = np.random.default_rng(seed)
    convex = 0
    for _ in range(5):
        prof, lam = _random_profile(rng)
        c = TimeDrivenCurve(prof, lam)
        d2 = analytics.concavity_defects(c, 512)
        if d2.max() > 1e-9:
            return CheckResult("curve concavity", False, f"{prof} lam={lam}: second difference {d2.max():.2e}")
        convex += analytics.check_convexity(c, 512)
    return CheckResult("curve concavity", True, f"{5 - convex}/5 curves logged as not convex")


def random_instance(rng, N: int):
    s = rng.uniform(0.0, 3.0, N)
    beta = rng.uniform(0.2, 3.0, N)
    cat = Catalog.from_arrays(s, beta)
    lam = rng.uniform(0.0, 3.0, N)
    r_bar = rng.uniform(0.0, 1.0, N)
    b = float(rng.uniform(0.05, N))
    return cat, lam, r_bar, b


def solver_oracle(n: int = 100, seed: int = 6, tol: float = 1e-3) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(n):
        cat, lam, r_bar, b = random_instance(rng, int(rng.integers(1, 7)))
        p = popularity(cat)
        for curves in (time_driven_curves(cat, lam), event_driven_curves(cat, r_bar)):
            alloc = allocate(curves, p, b)
            try:
                check_allocation(alloc, b)
            except AssertionError as e:
                return CheckResult("solver-oracle agreement", False, f"instance {k}: {e}")
            gap = abs(alloc.objective - grid_oracle(curves, p, b))
            worst = max(worst, gap)
            if gap > tol:
                return CheckResult("solver-oracle agreement", False, f"instance {k} ({curves[0].kind}): gap {gap:.2e}")
    return CheckResult("solver-oracle agreement", True, f"{n} instances, max gap {worst:.2e}")


def objective_monotone(seed: int = 7) -> CheckResult:
    cat = Catalog.zipf(60, 0.8)
    lam = cat.beta.copy()
    prev = 0.0
    for b in (1, 2, 5, 10, 20, 40, 60):
        obj = solve_time_driven(cat, lam, b).objective
        bench = solve_benchmarks(cat, b, lambdas=lam)
        if obj < prev - 1e-12:
            return CheckResult("objective monotone in b", False, f"b={b}: {obj} < {prev}")
        for name, a in bench.items():
            if a.objective > obj + 1e-9:
                return CheckResult("benchmark dominance", False, f"b={b}: {name} {a.objective} > {obj}")
        prev = obj
    return CheckResult("objective monotone in b", True)


def closed_form_oracle(renewals: int, n_tuples: int = 6, seed: int = 8) -> CheckResult:
    """Simulated hit ratio and occupancy sit within 4 standard errors of the
    closed form (the looser band keeps the quick suite stable)."""
    rng = np.random.default_rng(seed)
    for k in range(n_tuples):
        prof, lam = _random_profile(rng)
        params = _random_params(rng, prof.s)
        pop = Population([[prof.s]], [[prof.beta]])
        reps = 10
        horizon = renewals * prof.mean_gap / reps
        hs, rs = [], []
        for rep in range(reps):
            m = run(SimConfig(pop, [params], horizon, lambdas=[lam], seed=seed * 1000 + k * 100 + rep))
            hs.append(m.hit_ratio)
            rs.append(float(m.occupancy_fraction()[0, 0]))
        h, r = evaluate_co(prof, lam, params)
        for name, xs, ref in (("h", hs, h), ("r", rs, r)):
            se = np.std(xs, ddof=1) / math.sqrt(reps)
            if abs(np.mean(xs) - ref) > 4 * se + 1e-12:
                return CheckResult("closed-form oracle", False, f"{prof} lam={lam} {params}: {name} {np.mean(xs)} vs {ref} (se {se:.2e})")
    return CheckResult("closed-form oracle", True, f"{n_tuples} tuples x {renewals} renewals")


def simulator_accounting(seed: int = 9) -> CheckResult:
    cat = Catalog.zipf(30, 0.8)
    pop = Population.homogeneous_from(cat, 6)
    pols = [PolicyParams(0.0, float(s)) for s in cat.s]
    m = run(SimConfig(pop, pols, 2000.0, mode="event", seed=seed))
    if np.any(m.hits + m.misses != m.requests):
        return CheckResult("conservation", False)
    if not np.array_equal(m.item_broadcasts, m.misses.sum(axis=0)):
        return CheckResult("event-driven causality", False, "broadcasts differ from misses")
    if np.any(m.occupancy < -1e-9) or np.any(m.occupancy > m.elapsed + 1e-9):
        return CheckResult("conservation", False, "occupancy outside [0, elapsed]")
    return CheckResult("event-driven causality", True)


def suites(quick: bool = False) -> list[Callable[[], CheckResult]]:
    renewals = 10_000 if quick else 100_000
    return [
        region_continuity,
        separability,
        monotonicity,
        lambda: dominance(grid=24 if quick else 64),
        curve_shape,
        lambda: solver_oracle(n=15 if quick else 100),
        objective_monotone,
        simulator_accounting,
        lambda: closed_form_oracle(renewals, n_tuples=3 if quick else 6),
    ]


def run_all(quick: bool = False, report: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    """Run suites in order, stopping at the first failure."""
    out = []
    for check in suites(quick):
        res = check()
        out.append(res)
        if report:
            report(res)
        if not res.ok:
            break
    return out
