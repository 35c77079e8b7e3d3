"""Occupancy allocation: maximize ``sum_i p_i h_i(r_i)`` with ``sum_i r_i <= b``.

Every occupancy curve is concave, so the optimum equalizes the weighted
marginal gain ``p_i h_i'(r_i)`` across items that are neither empty nor
full.  Piecewise-linear curves are solved exactly by a fractional knapsack
over their segments; the smooth time-driven curves by bisection on the
common marginal price.  :func:`grid_oracle` is an independent brute-force
check for small instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .analytics import (
    EventDrivenCurve,
    LinearCurve,
    OccupancyCurve,
    PolicyParams,
    TimeDrivenCurve,
    never_policy,
    popular_sets,
)
from .demand import Catalog, Population, popularity
from .policy import ItemPolicy, policy_to_dict

STRUCT_TOL = 1e-9


@dataclass
class Allocation:
    r_star: np.ndarray
    policies: list
    objective: float
    kind: str
    breakpoints: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def used(self) -> float:
        return float(self.r_star.sum())

    def fractional_items(self, tol: float = STRUCT_TOL) -> list[int]:
        """Items whose occupancy is not 0, their breakpoint, or 1."""
        out = []
        for i, (r, rb) in enumerate(zip(self.r_star, self.breakpoints)):
            if min(abs(r), abs(r - rb), abs(r - 1.0)) > tol:
                out.append(i)
        return out

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "objective": float(self.objective),
            "r_star": [float(x) for x in self.r_star],
            "policies": [policy_to_dict(p) for p in self.policies],
        }


def check_allocation(alloc: Allocation, b: float, structured: bool | None = None) -> None:
    """Raise AssertionError if the budget or the single-fractional-item
    structure (checked for piecewise-linear kinds) is violated."""
    r = alloc.r_star
    if np.any(r < -STRUCT_TOL) or np.any(r > 1.0 + STRUCT_TOL):
        raise AssertionError("occupancy outside [0, 1]")
    if r.sum() > b + STRUCT_TOL:
        raise AssertionError(f"budget exceeded: {r.sum()} > {b}")
    if structured is None:
        structured = alloc.kind != TimeDrivenCurve.kind
    if structured and len(alloc.fractional_items()) > 1:
        raise AssertionError(f"more than one fractional item: {alloc.fractional_items()}")


def _greedy(curves: Sequence[OccupancyCurve], p: np.ndarray, b: float) -> np.ndarray:
    pieces = []
    for i, c in enumerate(curves):
        for k, (length, slope) in enumerate(c.segments()):
            # zero-gain pieces come last and only soak up spare budget
            gain = p[i] * slope
            if gain >= 0 and length > 0:
                pieces.append((-gain, i, k, length))
    pieces.sort()
    r = np.zeros(len(curves))
    left = float(b)
    for _, i, _, length in pieces:
        if left <= 0:
            break
        take = min(length, left)
        r[i] += take
        left -= take
    return np.minimum(r, [c.r_max for c in curves])


def _demand(curves, p, mu: float) -> tuple[np.ndarray, np.ndarray]:
    lo = np.zeros(len(curves))
    hi = np.zeros(len(curves))
    for i, c in enumerate(curves):
        if p[i] <= 0:
            continue
        lo[i], hi[i] = c.argmax(mu / p[i])
    return lo, hi


def _water_fill(curves: Sequence[OccupancyCurve], p: np.ndarray, b: float) -> np.ndarray:
    caps = np.array([c.r_max if p[i] > 0 else 0.0 for i, c in enumerate(curves)])
    if caps.sum() <= b:
        return caps
    mu_lo = 0.0
    mu_hi = max(p[i] * c.slope0 for i, c in enumerate(curves)) * 2.0 + 1.0
    lo_hi, hi_hi = _demand(curves, p, mu_hi)
    lo_lo, hi_lo = _demand(curves, p, mu_lo)
    for _ in range(200):
        mid = 0.5 * (mu_lo + mu_hi)
        if mid in (mu_lo, mu_hi):
            break
        lo_m, hi_m = _demand(curves, p, mid)
        if lo_m.sum() > b:
            mu_lo, lo_lo, hi_lo = mid, lo_m, hi_m
        elif hi_m.sum() < b:
            mu_hi, lo_hi, hi_hi = mid, lo_m, hi_m
        else:
            mu_hi, lo_hi, hi_hi = mid, lo_m, hi_m
            break
    # lo_hi fits; spend what is left on items that move within the bracket
    r = lo_hi.copy()
    target = np.maximum(hi_hi, lo_lo)
    left = b - r.sum()
    for i in range(len(curves)):
        if left <= 0:
            break
        take = min(target[i] - r[i], left)
        if take > 0:
            r[i] += take
            left -= take
    return np.minimum(r, caps)


def allocate(curves: Sequence[OccupancyCurve], p: Sequence[float], b: float) -> Allocation:
    """Optimal occupancies and the policies that realize them."""
    if not b > 0:
        raise ValueError(f"cache size must be positive, got {b}")
    if len(curves) != len(p):
        raise ValueError("need one popularity per curve")
    kinds = {c.kind for c in curves}
    if len(kinds) != 1:
        raise ValueError(f"curves of different kinds: {sorted(kinds)}")
    p = np.asarray(p, dtype=float)
    if all(c.segments() is not None for c in curves):
        r = _greedy(curves, p, b)
    else:
        r = _water_fill(curves, p, b)
    policies = [c.policy(float(x)) for c, x in zip(curves, r)]
    obj = float(sum(pi * c.h(float(x)) for pi, c, x in zip(p, curves, r)))
    bps = np.array([c.breakpoint for c in curves])
    return Allocation(r, policies, obj, kinds.pop(), bps)


def objective(curves: Sequence[OccupancyCurve], p: Sequence[float], r: Sequence[float]) -> float:
    return float(sum(pi * c.h(float(x)) for pi, c, x in zip(p, curves, r)))


def _pareto(cost: np.ndarray, value: np.ndarray, b: float) -> tuple[np.ndarray, np.ndarray]:
    keep = cost <= b + 1e-12
    cost, value = cost[keep], value[keep]
    order = np.lexsort((-value, cost))
    cost, value = cost[order], value[order]
    best = np.maximum.accumulate(value)
    mask = np.ones(len(value), dtype=bool)
    mask[1:] = value[1:] > best[:-1]
    return cost[mask], value[mask]


def grid_oracle(curves: Sequence[OccupancyCurve], p: Sequence[float], b: float, steps: int = 256) -> float:
    """Brute-force optimum over occupancies on a ``1/steps`` grid.

    Each item may also sit exactly at its breakpoint.  One item (tried in
    turn) takes whatever budget the others leave, so the budget constraint
    can be met with equality.  Exhaustive over all combinations through a
    Pareto-pruned dynamic program; meant for N <= 6.
    """
    p = np.asarray(p, dtype=float)
    N = len(curves)
    cand = []
    for c in curves:
        pts = np.unique(np.concatenate([np.arange(steps + 1) / steps, [c.breakpoint, c.r_max]]))
        pts = pts[pts <= c.r_max + 1e-15]
        cand.append((pts, c.h_grid(pts)))
    best = 0.0
    for filler in range(N):
        cost = np.zeros(1)
        value = np.zeros(1)
        for i in range(N):
            if i == filler:
                continue
            pts, hv = cand[i]
            cost = (cost[:, None] + pts[None, :]).ravel()
            value = (value[:, None] + p[i] * hv[None, :]).ravel()
            cost, value = _pareto(cost, value, b)
        fc = curves[filler]
        rest = np.clip(b - cost, 0.0, fc.r_max)
        total = value + p[filler] * fc.h_grid(rest)
        best = max(best, float(total.max()))
    return best


# -- scenario solvers ------------------------------------------------------


def time_driven_curves(catalog: Catalog, lambdas: Sequence[float], overhear_only: bool = False):
    if len(lambdas) != catalog.N:
        raise ValueError("need one overhearing rate per item")
    curves = []
    for i, (prof, lam) in enumerate(zip(catalog, lambdas)):
        c = TimeDrivenCurve(prof, float(lam), item=i)
        if overhear_only:
            c.r_max = c.r0
        curves.append(c)
    return curves


def solve_time_driven(catalog: Catalog, lambdas: Sequence[float], b: float) -> Allocation:
    """Optimal time-driven policy: each item mixes "always cached" with an
    overhearing-only policy."""
    return allocate(time_driven_curves(catalog, lambdas), popularity(catalog), b)


@dataclass(frozen=True)
class OccupancyEstimate:
    item: int
    r_bar: float
    horizon: float


def _estimate_values(catalog: Catalog, estimates) -> list[float]:
    if estimates is None:
        raise ValueError("event-driven solves need occupancy estimates")
    if len(estimates) != catalog.N:
        raise ValueError(f"need {catalog.N} occupancy estimates, got {len(estimates)}")
    out = []
    for k, e in enumerate(estimates):
        if isinstance(e, OccupancyEstimate):
            if e.item != k:
                raise ValueError(f"estimate {k} is for item {e.item}")
            out.append(e.r_bar)
        else:
            out.append(float(e))
    return out


def event_driven_curves(catalog: Catalog, estimates, overhear_only: bool = False):
    r_bar = _estimate_values(catalog, estimates)
    curves = []
    for i, (prof, rb) in enumerate(zip(catalog, r_bar)):
        c = EventDrivenCurve(prof, rb, item=i)
        if overhear_only:
            c.r_max = c.breakpoint
        curves.append(c)
    return curves


def solve_event_driven(catalog: Catalog, b: float, estimates) -> Allocation:
    """Event-driven policy built on measured occupancies of the
    overhearing-only policy with deaf TTL equal to the OFF period."""
    return allocate(event_driven_curves(catalog, estimates), popularity(catalog), b)


def estimation_phase(population: Population, horizon: float = 10000.0, seed: int = 0, warmup: float | None = None):
    """Run every cache with overhearing-only policies (deaf TTL = its user's
    OFF period) under miss-triggered broadcasts.

    Returns the per-item occupancy estimates (averaged over caches) and the
    raw run metrics.
    """
    from .simulator import SimConfig, run

    if not horizon > 0:
        raise ValueError("estimation horizon must be positive")
    pols = [
        [PolicyParams(0.0, float(population.s[m, i])) for i in range(population.N)]
        for m in range(population.M)
    ]
    cfg = SimConfig(population, pols, horizon, mode="event", seed=seed, warmup=warmup)
    metrics = run(cfg)
    occ = metrics.item_occupancy()
    return [OccupancyEstimate(i, float(x), float(horizon)) for i, x in enumerate(occ)], metrics


def estimate_occupancies(
    population: Population, horizon: float = 10000.0, seed: int = 0, warmup: float | None = None
) -> list[OccupancyEstimate]:
    return estimation_phase(population, horizon, seed, warmup)[0]


def solve_benchmarks(
    catalog: Catalog,
    b: float,
    lambdas: Sequence[float] | None = None,
    estimates=None,
) -> dict[str, Allocation]:
    """Optimal caching-only and overhearing-only allocations.

    Give ``lambdas`` for time-driven broadcasts or ``estimates`` for the
    event-driven case.
    """
    p = popularity(catalog)
    out = {"caching-only": allocate([LinearCurve(prof, i) for i, prof in enumerate(catalog)], p, b)}
    if lambdas is not None:
        out["overhearing-only"] = allocate(time_driven_curves(catalog, lambdas, overhear_only=True), p, b)
    elif estimates is not None:
        out["overhearing-only"] = allocate(event_driven_curves(catalog, estimates, overhear_only=True), p, b)
    else:
        raise ValueError("give lambdas (time-driven) or estimates (event-driven)")
    return out


@dataclass
class HeterogeneousSolution:
    policies: list[list[ItemPolicy]]
    K: list[int]
    D: list[list[int]]
    C: list[list[int]]
    time_driven: list[Allocation] | None = None

    def to_dict(self) -> dict:
        d = {
            "K": self.K,
            "popular": self.D,
            "policies": [[policy_to_dict(p) for p in row] for row in self.policies],
        }
        if self.time_driven is not None:
            d["time_driven"] = [a.to_dict() for a in self.time_driven]
        return d


def solve_heterogeneous(
    population: Population, b: float, lambdas: Sequence[float] | None = None
) -> HeterogeneousSolution:
    """Per-cache policies for users with individual demand.

    Event-driven: each cache overhears (deaf TTL = its user's OFF period)
    exactly the items popular for its user and never caches the rest.
    With ``lambdas``, the time-driven problem is also solved separately for
    every cache.
    """
    sets = popular_sets(population, b)
    policies = []
    for m in range(population.M):
        popular = set(sets.D[m])
        policies.append([
            PolicyParams(0.0, float(population.s[m, i])) if i in popular else never_policy()
            for i in range(population.N)
        ])
    td = None
    if lambdas is not None:
        td = []
        for m in range(population.M):
            cat = Catalog.from_arrays(population.s[m], population.beta[m])
            alloc = solve_time_driven(cat, [lambdas[j] for j in cat.order], b)
            # back to shared item indices
            r = np.zeros(population.N)
            pols: list = [None] * population.N
            for k, j in enumerate(cat.order):
                r[j] = alloc.r_star[k]
                pols[j] = alloc.policies[k]
            td.append(Allocation(r, pols, alloc.objective, alloc.kind, alloc.breakpoints[np.argsort(cat.order)]))
    return HeterogeneousSolution(policies, sets.K, sets.D, sets.C, td)

