"""Closed-form hit ratio and occupancy of TTL caching/overhearing policies.

A deterministic item policy is a pair ``(tau, omega)`` with ``omega >= tau``:
after each request the item stays cached for ``tau`` and broadcasts are
ignored for ``omega``.  Once the deaf timer has run out, the next broadcast
of the item is stored and kept until the following request.  Broadcasts of
each item form a Poisson process of rate ``lam``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .demand import Catalog, DemandProfile, Population, popularity

log = logging.getLogger(__name__)

INF = math.inf
LAMBDA_EPS = 1e-9


@dataclass(frozen=True)
class PolicyParams:
    """Deterministic policy: caching TTL ``tau`` and deaf TTL ``omega``."""

    tau: float
    omega: float

    def __post_init__(self) -> None:
        if not (self.tau >= 0 and self.omega >= 0):
            raise ValueError(f"TTLs must be nonnegative, got tau={self.tau}, omega={self.omega}")
        if self.omega < self.tau:
            raise ValueError(f"omega ({self.omega}) must be >= tau ({self.tau})")


@dataclass(frozen=True)
class RandomizedParams:
    """Mixture of deterministic policies, one drawn afresh at every request."""

    q: tuple[float, ...]
    taus: tuple[float, ...]
    omegas: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "q", tuple(float(x) for x in self.q))
        object.__setattr__(self, "taus", tuple(float(x) for x in self.taus))
        object.__setattr__(self, "omegas", tuple(float(x) for x in self.omegas))
        n = len(self.q)
        if n == 0 or len(self.taus) != n or len(self.omegas) != n:
            raise ValueError("q, taus and omegas must be nonempty and of equal length")
        if any(not (0.0 <= x <= 1.0) for x in self.q):
            raise ValueError(f"mixture weights must lie in [0, 1], got {self.q}")
        if abs(sum(self.q) - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must sum to 1, got {sum(self.q)}")
        for t, w in zip(self.taus, self.omegas):
            PolicyParams(t, w)

    @property
    def components(self) -> list[PolicyParams]:
        return [PolicyParams(t, w) for t, w in zip(self.taus, self.omegas)]


# -- building blocks -------------------------------------------------------


def _check(profile: DemandProfile, lam: float) -> None:
    if math.isinf(profile.s):
        raise ValueError("closed forms need a finite OFF period")
    if not lam >= 0:
        raise ValueError(f"overhearing rate must be >= 0, got {lam}")


def _overhear_before_on(d: float, beta: float, lam: float) -> tuple[float, float]:
    """(hit, occupancy*E[X]) of the overhearing part when the deaf timer ends
    ``d >= 0`` before the OFF period does."""
    if lam < LAMBDA_EPS:
        return 0.0, 0.0
    x = math.exp(-lam * d)
    h = 1.0 - beta / (lam + beta) * x
    occ = d + math.expm1(-lam * d) / lam + (1.0 / beta - x / (lam + beta))
    return h, occ


def _overhear_during_on(w: float, beta: float, lam: float) -> tuple[float, float]:
    """Same, when the deaf timer ends ``w >= 0`` after the ON period started."""
    y = math.exp(-beta * w)
    return lam / (lam + beta) * y, lam / (beta * (lam + beta)) * y


def _case1(s: float, beta: float, lam: float, tau: float, omega: float) -> tuple[float, float]:
    # tau <= omega <= s: cached copy always expires before the next request
    mean = s + 1.0 / beta
    h, occ = _overhear_before_on(s - omega, beta, lam)
    return h, tau / mean + occ / mean


def _case2(s: float, beta: float, lam: float, tau: float, omega: float) -> tuple[float, float]:
    # tau <= s < omega
    mean = s + 1.0 / beta
    h, occ = _overhear_during_on(omega - s, beta, lam)
    return h, tau / mean + occ / mean


def _case3(s: float, beta: float, lam: float, tau: float, omega: float) -> tuple[float, float]:
    # s < tau <= omega
    mean = s + 1.0 / beta
    y = math.exp(-beta * (tau - s))
    h_o, occ_o = _overhear_during_on(omega - s, beta, lam)
    return 1.0 - y + h_o, 1.0 - y / (beta * mean) + occ_o / mean


def region(s: float, tau: float, omega: float) -> int:
    if omega <= s:
        return 1
    if tau <= s:
        return 2
    return 3


def _co(profile: DemandProfile, lam: float, params: PolicyParams) -> tuple[float, float]:
    _check(profile, lam)
    s, beta = profile.s, profile.beta
    case = (_case1, _case2, _case3)[region(s, params.tau, params.omega) - 1]
    return case(s, beta, lam, params.tau, params.omega)


def hit_ratio_co(profile: DemandProfile, lam: float, params: PolicyParams) -> float:
    return _co(profile, lam, params)[0]


def occupancy_co(profile: DemandProfile, lam: float, params: PolicyParams) -> float:
    return _co(profile, lam, params)[1]


def evaluate_co(profile: DemandProfile, lam: float, params: PolicyParams) -> tuple[float, float]:
    """``(hit ratio, occupancy)`` of a deterministic policy."""
    return _co(profile, lam, params)


def evaluate_rco(profile: DemandProfile, lam: float, rparams: RandomizedParams) -> tuple[float, float]:
    h = r = 0.0
    for q, p in zip(rparams.q, rparams.components):
        if q == 0.0:
            continue
        hj, rj = _co(profile, lam, p)
        h += q * hj
        r += q * rj
    return h, r


def hit_ratio_rco(profile: DemandProfile, lam: float, rparams: RandomizedParams) -> float:
    return evaluate_rco(profile, lam, rparams)[0]


def occupancy_rco(profile: DemandProfile, lam: float, rparams: RandomizedParams) -> float:
    return evaluate_rco(profile, lam, rparams)[1]


def evaluate(profile: DemandProfile, lam: float, params) -> tuple[float, float]:
    if isinstance(params, RandomizedParams):
        return evaluate_rco(profile, lam, params)
    return evaluate_co(profile, lam, params)


# -- independent component route ---------------------------------------------


def caching_component(profile: DemandProfile, tau: float) -> tuple[float, float]:
    """Hit ratio and occupancy contributed by the caching timer alone."""
    s, beta = profile.s, profile.beta
    mean = s + 1.0 / beta
    if tau <= s:
        return 0.0, tau / mean
    y = math.exp(-beta * (tau - s))
    return 1.0 - y, 1.0 - y / (beta * mean)


def overhearing_component(profile: DemandProfile, lam: float, omega: float) -> tuple[float, float]:
    """Hit ratio and occupancy contributed by stored broadcasts alone."""
    s, beta = profile.s, profile.beta
    mean = s + 1.0 / beta
    if omega <= s:
        h, occ = _overhear_before_on(s - omega, beta, lam)
    else:
        h, occ = _overhear_during_on(omega - s, beta, lam)
    return h, occ / mean


def separability_check(
    profile: DemandProfile, lam: float, params: PolicyParams
) -> tuple[tuple[float, float], tuple[float, float]]:
    """``((h_c, r_c), (h_o, r_o))``; the parts add up to :func:`evaluate_co`."""
    _check(profile, lam)
    return caching_component(profile, params.tau), overhearing_component(profile, lam, params.omega)


# -- occupancy curves ----------------------------------------------------------


def never_policy() -> PolicyParams:
    return PolicyParams(0.0, INF)


class OccupancyCurve:
    """Upper boundary ``h(r)`` of an item's achievable (occupancy, hit) region.

    ``r_max`` caps the usable occupancy; the restricted benchmark families
    are the same curves with a lower cap.  All curves are concave.
    """

    kind = "abstract"
    item: int = 0
    r_max: float = 1.0
    breakpoint: float = 0.0

    def h(self, r: float) -> float:
        raise NotImplementedError

    def policy(self, r: float):
        raise NotImplementedError

    def argmax(self, price: float) -> tuple[float, float]:
        """Smallest and largest maximizer of ``h(r) - price*r`` on [0, r_max]."""
        raise NotImplementedError

    def segments(self) -> list[tuple[float, float]] | None:
        """``(length, slope)`` pieces for piecewise-linear curves, else None."""
        return None

    def h_grid(self, r: np.ndarray) -> np.ndarray:
        return np.array([self.h(float(x)) for x in r])


def _argmax_linear(segs: list[tuple[float, float]], price: float) -> tuple[float, float]:
    lo = hi = 0.0
    for length, slope in segs:
        if slope > price:
            lo += length
            hi += length
        elif slope == price:
            hi += length
            break
        else:
            break
    return lo, hi


def _eval_linear(segs: list[tuple[float, float]], r: float) -> float:
    h = 0.0
    for length, slope in segs:
        step = min(r, length)
        h += slope * step
        r -= step
        if r <= 0:
            break
    return h


class LinearCurve(OccupancyCurve):
    """Caching-only hull ``h = r``: mix "always cached" with "never cached"."""

    kind = "caching-only"

    def __init__(self, profile: DemandProfile, item: int = 0) -> None:
        self.profile = profile
        self.item = item
        self.r_max = 1.0
        self.breakpoint = 0.0

    def segments(self):
        return [(1.0, 1.0)]

    def h(self, r: float) -> float:
        return min(max(r, 0.0), 1.0)

    def argmax(self, price: float):
        return _argmax_linear(self.segments(), price)

    def policy(self, r: float):
        r = min(max(r, 0.0), 1.0)
        return RandomizedParams((r, 1.0 - r), (INF, 0.0), (INF, INF))


class TimeDrivenCurve(OccupancyCurve):
    """Boundary under Poisson broadcasts of rate ``lam``.

    From the origin it follows the overhearing-only family with the deaf
    timer shrinking from infinity to 0, reaching ``breakpoint = r(0, 0)``,
    and then the straight line to (1, 1) obtained by mixing that policy with
    "always cached".  Up to ``r(0, s)`` the overhearing-only part is linear
    with slope ``beta*s + 1``.
    """

    kind = "time-driven-rco"

    def __init__(self, profile: DemandProfile, lam: float, item: int = 0, r_max: float = 1.0) -> None:
        _check(profile, lam)
        self.profile = profile
        self.lam = float(lam)
        self.item = item
        s, beta = profile.s, profile.beta
        self.mean = s + 1.0 / beta
        self.slope0 = beta * s + 1.0
        if self.lam < LAMBDA_EPS:
            self.r_lin = self.h_lin = 0.0
            self.r0 = self.h0 = 0.0
        else:
            self.h_lin, self.r_lin = _co(profile, self.lam, PolicyParams(0.0, s))
            self.h0, self.r0 = _co(profile, self.lam, PolicyParams(0.0, 0.0))
        self.breakpoint = self.r0
        self.chord = (1.0 - self.h0) / (1.0 - self.r0) if self.r0 < 1.0 else 0.0
        self.r_max = min(float(r_max), 1.0)

    def _depth_for(self, r: float) -> float:
        """Length ``d = s - omega`` with ``r(0, omega) = r`` on the curved piece."""
        s, beta, lam = self.profile.s, self.profile.beta, self.lam
        target = r * self.mean

        def f(d: float) -> float:
            return d + math.expm1(-lam * d) / lam + (1.0 / beta - math.exp(-lam * d) / (lam + beta)) - target

        if f(0.0) >= 0:
            return 0.0
        if f(s) <= 0:
            return s
        return brentq(f, 0.0, s, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)

    def omega_for(self, r: float) -> float:
        """Deaf TTL of the overhearing-only policy with occupancy ``r <= breakpoint``."""
        if r <= 0:
            return INF
        if r <= self.r_lin:
            return self.profile.s + math.log(self.r_lin / r) / self.profile.beta
        if r >= self.r0:
            return 0.0
        return self.profile.s - self._depth_for(r)

    def h(self, r: float) -> float:
        r = min(max(r, 0.0), self.r_max)
        if r <= self.r_lin:
            return self.slope0 * r
        if r >= self.r0:
            return min(self.h0 + self.chord * (r - self.r0), 1.0)
        d = self._depth_for(r)
        beta, lam = self.profile.beta, self.lam
        return 1.0 - beta / (lam + beta) * math.exp(-lam * d)

    def slope_at_depth(self, d: float) -> float:
        beta, lam = self.profile.beta, self.lam
        x = math.exp(-lam * d)
        return self.mean * lam * beta * x / ((lam + beta) - beta * x)

    def _r_at_price(self, price: float) -> float:
        # curved piece: invert the slope in closed form through x = exp(-lam*d)
        beta, lam, s = self.profile.beta, self.lam, self.profile.s
        x = price * (lam + beta) / (self.mean * lam * beta + price * beta)
        x = min(max(x, math.exp(-lam * s)), 1.0)
        d = -math.log(x) / lam
        occ = d + math.expm1(-lam * d) / lam + (1.0 / beta - x / (lam + beta))
        return min(max(occ / self.mean, self.r_lin), self.r0)

    def argmax(self, price: float) -> tuple[float, float]:
        if price > self.slope0:
            lo = hi = 0.0
        elif price < self.chord:
            lo = hi = 1.0
        elif price == self.slope0:
            lo = 0.0
            hi = 1.0 if price == self.chord else self.r_lin
        elif price == self.chord:
            lo, hi = self.r0, 1.0
        else:
            lo = hi = self._r_at_price(price) if self.r_lin < self.r0 else self.r_lin
        return min(lo, self.r_max), min(hi, self.r_max)

    def params(self, r: float) -> tuple[float, float]:
        """``(q, omega)`` of the mixture of "always cached" (weight q) and
        the overhearing-only policy with deaf TTL omega."""
        r = min(max(r, 0.0), self.r_max)
        if r >= 1.0:
            return 1.0, 0.0
        if r > self.r0:
            return (r - self.r0) / (1.0 - self.r0), 0.0
        return 0.0, self.omega_for(r)

    def policy(self, r: float) -> RandomizedParams:
        q, omega = self.params(r)
        return RandomizedParams((q, 1.0 - q), (INF, 0.0), (INF, omega))


class EventDrivenCurve(OccupancyCurve):
    """Piecewise-linear boundary under miss-triggered broadcasts.

    Any overhearing-only policy whose deaf timer outlasts the OFF period has
    hit ratio ``(beta*s + 1)`` times its occupancy.  The first piece runs up
    to ``breakpoint``, the occupancy of the policy with deaf TTL ``s``; the
    second mixes that policy with "always cached".  Without a measured
    breakpoint the instant-overhearing ceiling ``1/(beta*s + 1)`` is used.
    """

    kind = "event-driven-rco"

    def __init__(
        self, profile: DemandProfile, r_bar: float | None = None, item: int = 0, r_max: float = 1.0
    ) -> None:
        if math.isinf(profile.s):
            raise ValueError("closed forms need a finite OFF period")
        self.profile = profile
        self.item = item
        self.slope0 = profile.beta * profile.s + 1.0
        ceiling = 1.0 / self.slope0
        rb = ceiling if r_bar is None else float(r_bar)
        self.breakpoint = min(max(rb, 0.0), ceiling)
        self.h_break = min(self.slope0 * self.breakpoint, 1.0)
        if self.breakpoint < 1.0:
            self.chord = (1.0 - self.h_break) / (1.0 - self.breakpoint)
        else:
            self.chord = 0.0
        self.r_max = min(float(r_max), 1.0)

    def segments(self) -> list[tuple[float, float]]:
        segs = []
        first = min(self.breakpoint, self.r_max)
        if first > 0:
            segs.append((first, self.slope0))
        rest = self.r_max - first
        if rest > 0:
            segs.append((rest, self.chord))
        return segs

    def h(self, r: float) -> float:
        r = min(max(r, 0.0), self.r_max)
        return min(_eval_linear(self.segments(), r), 1.0)

    def argmax(self, price: float) -> tuple[float, float]:
        return _argmax_linear(self.segments(), price)

    def policy(self, r: float):
        s = self.profile.s
        r = min(max(r, 0.0), self.r_max)
        rb = self.breakpoint
        if r <= 0.0:
            return never_policy()
        if r >= 1.0:
            return PolicyParams(INF, INF)
        if r < rb:
            q = r / rb
            return RandomizedParams((q, 1.0 - q), (0.0, 0.0), (s, INF))
        if r == rb:
            return PolicyParams(0.0, s)
        q = (r - rb) / (1.0 - rb)
        return RandomizedParams((q, 1.0 - q), (INF, 0.0), (INF, s))


def curve_time_driven(profile: DemandProfile, lam: float, item: int = 0) -> TimeDrivenCurve:
    return TimeDrivenCurve(profile, lam, item)


def curve_event_driven(profile: DemandProfile, r_bar: float | None = None, item: int = 0) -> EventDrivenCurve:
    return EventDrivenCurve(profile, r_bar, item)


def concavity_defects(curve: OccupancyCurve, n: int = 1024) -> np.ndarray:
    """Second differences of ``h`` on a uniform grid (all <= ~0 when concave)."""
    r = np.linspace(0.0, curve.r_max, n + 1)
    return np.diff(curve.h_grid(r), 2)


def check_convexity(curve: OccupancyCurve, n: int = 1024, tol: float = 1e-8) -> bool:
    """True when second differences are all >= -tol.  Failures are logged."""
    d2 = concavity_defects(curve, n)
    worst = float(d2.min()) if len(d2) else 0.0
    if worst < -tol:
        log.warning("curve is not convex: min second difference %.3e (item %d, %s)", worst, curve.item, curve.kind)
        return False
    return True


# -- bounds ----------------------------------------------------------------


def _fill_count(terms: Sequence[float], b: float) -> tuple[int, float]:
    """Largest K whose first K terms fit in b, and their total."""
    tol = 1e-9 * max(1.0, b)
    acc = 0.0
    for k, t in enumerate(terms):
        if acc + t > b + tol:
            return k, acc
        acc += t
    return len(terms), acc


def upper_bound(catalog: Catalog, b: float) -> tuple[float, int]:
    """``(h_upper, K)``: ideal fill where item i needs ``1/(beta_i s_i + 1)``.

    Items are taken in catalog (beta-descending) order; items never requested
    again are skipped.  When b covers every item, ``(1.0, N)``.
    """
    if not b > 0:
        raise ValueError(f"cache size must be positive, got {b}")
    p = popularity(catalog)
    idx = [i for i, prof in enumerate(catalog) if prof.recurrent]
    terms = [1.0 / (catalog.beta[i] * catalog.s[i] + 1.0) for i in idx]
    K, used = _fill_count(terms, b)
    if K == len(idx):
        return 1.0, catalog.N
    h = float(sum(p[i] for i in idx[:K]))
    nxt = idx[K]
    h += p[nxt] * (catalog.beta[nxt] * catalog.s[nxt] + 1.0) * max(b - used, 0.0)
    return float(min(h, 1.0)), K


@dataclass(frozen=True)
class PopularSets:
    K: list[int]
    D: list[list[int]]
    C: list[list[int]]


def popular_sets(population: Population, b: float) -> PopularSets:
    """Per user, the items that fit in an ideal overhearing-only fill of size b.

    Each user ranks the shared items by its own beta (ties: lower index
    first) and the fill charges ``1/(beta s + 1)`` of the item at each rank.
    ``C[i]`` lists the users for whom item i is popular.
    """
    if not b > 0:
        raise ValueError(f"cache size must be positive, got {b}")
    M, N = population.M, population.N
    K, D = [], []
    C: list[list[int]] = [[] for _ in range(N)]
    for m in range(M):
        beta = population.beta[m]
        s = population.s[m]
        ranked = [int(i) for i in np.argsort(-beta, kind="stable") if not math.isinf(s[i])]
        terms = [1.0 / (beta[i] * s[i] + 1.0) for i in ranked]
        k, _ = _fill_count(terms, b)
        K.append(k)
        D.append(sorted(ranked[:k]))
        for i in ranked[:k]:
            C[i].append(m)
    return PopularSets(K, D, C)


def theorem4_gap_bound(catalog: Catalog, M: int, b: float | None = None) -> float:
    """``max_{i <= K+1} 2 sqrt((beta_i s_i + 1)/M)``; without b, over all items."""
    if M < 1:
        raise ValueError("M must be >= 1")
    w = catalog.beta * catalog.s + 1.0
    w = w[np.isfinite(w)]
    if b is not None:
        _, K = upper_bound(catalog, b)
        w = w[: K + 1]
    return float(2.0 * np.sqrt(w.max() / M))


def theorem5_gap_bound(population: Population, b: float) -> float:
    """``1/b + max_i 2 sqrt(beta_max) / sqrt(sum_{m in C_i} rate_i^(m))``.

    Items popular for nobody are left out of the max (their term is unbounded
    and they carry no overhearing-only traffic).
    """
    sets = popular_sets(population, b)
    beta_max = float(population.beta.max())
    rates = population.rates()
    worst = 0.0
    for i, users in enumerate(sets.C):
        if not users:
            continue
        total = float(rates[users, i].sum())
        worst = max(worst, 2.0 * math.sqrt(beta_max) / math.sqrt(total))
    return 1.0 / b + worst


def overall_hit_ratio(p: Sequence[float], h: Sequence[float]) -> float:
    return float(np.dot(p, h))
