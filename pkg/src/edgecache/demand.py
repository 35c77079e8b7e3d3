"""Individualized ON-OFF demand model.

After each request for an item a user stays silent for a fixed OFF period
``s``; the next request then arrives after an exponential ON period with
rate ``beta``.  The process renews at every request.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import streams

INF = math.inf


@dataclass(frozen=True)
class DemandProfile:
    """Demand of one user for one item: OFF length ``s`` and ON rate ``beta``."""

    s: float
    beta: float

    def __post_init__(self) -> None:
        if not self.beta > 0 or math.isinf(self.beta):
            raise ValueError(f"beta must be positive and finite, got {self.beta}")
        if not self.s >= 0:
            raise ValueError(f"s must be >= 0, got {self.s}")

    @property
    def mean_gap(self) -> float:
        """Expected inter-request time ``s + 1/beta`` (inf when s is inf)."""
        return self.s + 1.0 / self.beta

    @property
    def rate(self) -> float:
        """Long-run request rate ``1 / (s + 1/beta)``; zero when s is inf."""
        return 0.0 if math.isinf(self.s) else 1.0 / self.mean_gap

    @property
    def recurrent(self) -> bool:
        return not math.isinf(self.s)


class Catalog:
    """N items of one user, sorted so that ``beta`` is nonincreasing.

    ``order[k]`` is the input position of the k-th sorted item.  Ties in
    ``beta`` keep input order.
    """

    def __init__(self, profiles: Sequence[DemandProfile]) -> None:
        if len(profiles) == 0:
            raise ValueError("a catalog needs at least one item")
        order = sorted(range(len(profiles)), key=lambda k: -profiles[k].beta)
        self.items: tuple[DemandProfile, ...] = tuple(profiles[k] for k in order)
        self.order = np.asarray(order, dtype=np.int64)
        self.s = np.array([p.s for p in self.items], dtype=float)
        self.beta = np.array([p.beta for p in self.items], dtype=float)

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, i: int) -> DemandProfile:
        return self.items[i]

    def __iter__(self):
        return iter(self.items)

    @property
    def N(self) -> int:
        return len(self.items)

    @classmethod
    def from_arrays(cls, s: Sequence[float], beta: Sequence[float]) -> "Catalog":
        if len(s) != len(beta):
            raise ValueError("s and beta must have equal length")
        return cls([DemandProfile(float(a), float(b)) for a, b in zip(s, beta)])

    @classmethod
    def zipf(
        cls,
        n: int,
        exponent: float,
        s_rule: str | float = "inverse",
        c: float | None = None,
    ) -> "Catalog":
        """``beta_i = c * i**-exponent``; ``c`` defaults to ``1/sum_i i**-exponent``.

        ``s_rule="inverse"`` gives ``s_i = 1/beta_i``; a number gives a
        constant OFF period.
        """
        idx = np.arange(1, n + 1, dtype=float)
        weights = idx ** (-exponent)
        if c is None:
            c = 1.0 / weights.sum()
        beta = c * weights
        if s_rule == "inverse":
            s = 1.0 / beta
        elif isinstance(s_rule, (int, float)):
            s = np.full(n, float(s_rule))
        else:
            raise ValueError(f"unknown s_rule {s_rule!r}")
        return cls.from_arrays(s, beta)


def zipf_constant(n: int, exponent: float) -> float:
    """Normalizing constant ``1 / sum_{i<=n} i**-exponent``."""
    return float(1.0 / (np.arange(1, n + 1, dtype=float) ** (-exponent)).sum())


class Population:
    """M users over a shared item index space.

    ``s[m, i]`` and ``beta[m, i]`` describe user m's demand for item i.
    Item indices are shared by all users; each user's own beta-sorted view
    is available through :meth:`user_catalog`.
    """

    def __init__(self, s: np.ndarray, beta: np.ndarray) -> None:
        s = np.array(s, dtype=float, ndmin=2)
        beta = np.array(beta, dtype=float, ndmin=2)
        if s.shape != beta.shape:
            raise ValueError("s and beta must have the same shape")
        if s.shape[0] < 1 or s.shape[1] < 1:
            raise ValueError("a population needs M >= 1 users and N >= 1 items")
        if np.any(~(beta > 0)) or np.any(np.isinf(beta)):
            raise ValueError("beta must be positive and finite")
        if np.any(~(s >= 0)):
            raise ValueError("s must be >= 0")
        self.s = s
        self.beta = beta

    @property
    def M(self) -> int:
        return self.s.shape[0]

    @property
    def N(self) -> int:
        return self.s.shape[1]

    @property
    def homogeneous(self) -> bool:
        return bool(np.all(self.s == self.s[0]) and np.all(self.beta == self.beta[0]))

    def profile(self, m: int, i: int) -> DemandProfile:
        return DemandProfile(float(self.s[m, i]), float(self.beta[m, i]))

    def user_catalog(self, m: int) -> Catalog:
        """User m's items sorted by that user's beta; ``order`` maps to shared indices."""
        return Catalog([self.profile(m, i) for i in range(self.N)])

    def rates(self) -> np.ndarray:
        """Per (user, item) long-run request rates, zero for s = inf."""
        with np.errstate(divide="ignore"):
            r = 1.0 / (self.s + 1.0 / self.beta)
        return np.where(np.isinf(self.s), 0.0, r)

    @classmethod
    def homogeneous_from(cls, catalog: Catalog, M: int) -> "Population":
        """M identical users; shared item indices follow the catalog's sorted order."""
        if M < 1:
            raise ValueError("M must be >= 1")
        return cls(np.tile(catalog.s, (M, 1)), np.tile(catalog.beta, (M, 1)))

    @classmethod
    def from_profiles(cls, users: Sequence[Sequence[DemandProfile]]) -> "Population":
        n = {len(u) for u in users}
        if len(n) != 1:
            raise ValueError("every user needs the same number of items")
        s = [[p.s for p in u] for u in users]
        beta = [[p.beta for p in u] for u in users]
        return cls(np.array(s), np.array(beta))


def popularity(catalog: Catalog | Sequence[DemandProfile]) -> np.ndarray:
    """Probability that a request is for each item (s = inf items get 0)."""
    rates = np.array([p.rate for p in catalog], dtype=float)
    total = rates.sum()
    if total <= 0:
        raise ValueError("no recurrent demand: every item has s = inf")
    return rates / total


def user_share(population: Population) -> np.ndarray:
    """Fraction of all requests issued by each user."""
    per_user = population.rates().sum(axis=1)
    total = per_user.sum()
    if total <= 0:
        raise ValueError("no recurrent demand in population")
    return per_user / total


def next_request_gap(profile: DemandProfile, rng) -> float:
    """Time from one request to the next: ``s + Exp(beta)``; inf if s is inf.

    ``rng`` only needs a ``standard_exponential()`` method.
    """
    if not profile.recurrent:
        return INF
    return profile.s + rng.standard_exponential() / profile.beta


@dataclass(frozen=True)
class RequestStream:
    times: np.ndarray
    users: np.ndarray
    items: np.ndarray
    horizon: float

    def __len__(self) -> int:
        return len(self.times)


class DemandStreams:
    """Seeded request processes for every (user, item) of a population.

    ``start="stationary"`` draws each pair's phase from the equilibrium of
    its renewal cycle: the cycle straddling t=0 is length-biased and t=0 is
    uniform inside it.  ``age`` is the time since the (virtual) last request
    before 0.  ``start="cold"`` puts that virtual request exactly at t=0.
    """

    def __init__(self, population: Population, seed: int, start: str = "stationary") -> None:
        if start not in ("stationary", "cold"):
            raise ValueError(f"start must be 'stationary' or 'cold', got {start!r}")
        self.population = population
        self.seed = int(seed)
        self.root = streams.root_key(seed)
        self.start = start
        self.age, self.first = self._initial_phase()
        self._pairs: dict[int, streams.UniformStream] = {}

    def _initial_phase(self) -> tuple[np.ndarray, np.ndarray]:
        pop = self.population
        M, N = pop.M, pop.N
        age = np.zeros((M, N))
        first = np.full((M, N), INF)
        for i in range(N):
            u = streams.generator(self.root, streams.INIT, i).random((M, 4))
            s = pop.s[:, i]
            beta = pop.beta[:, i]
            finite = ~np.isinf(s)
            e1 = -np.log1p(-u[:, 2]) / beta
            if self.start == "cold":
                age[:, i] = np.where(finite, 0.0, INF)
                first[:, i] = np.where(finite, s + e1, INF)
                continue
            e2 = -np.log1p(-u[:, 3]) / beta
            with np.errstate(invalid="ignore"):
                p_exp = np.where(finite, s / (s + 1.0 / beta), 0.0)
            length = s + np.where(u[:, 0] < p_exp, e1, e1 + e2)
            a = u[:, 1] * length
            age[:, i] = np.where(finite, a, INF)
            first[:, i] = np.where(finite, length - a, INF)
        return age, first

    def next_gap(self, user: int, item: int) -> float:
        s = self.population.s[user, item]
        if math.isinf(s):
            return INF
        key = user * self.population.N + item
        stream = self._pairs.get(key)
        if stream is None:
            stream = streams.UniformStream(self.root, streams.DEMAND, user, item)
            self._pairs[key] = stream
        return s + stream.standard_exponential() / self.population.beta[user, item]

    def pair_times(self, user: int, item: int, horizon: float) -> list[float]:
        """All request epochs of one pair in [0, horizon)."""
        out = []
        t = float(self.first[user, item])
        while t < horizon:
            out.append(t)
            t += self.next_gap(user, item)
        return out


def generate_stream(
    population: Population, horizon: float, seed: int, start: str = "stationary"
) -> RequestStream:
    """Materialize every request in [0, horizon), ordered by time."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    ds = DemandStreams(population, seed, start)
    times, users, items = [], [], []
    for m in range(population.M):
        for i in range(population.N):
            ts = ds.pair_times(m, i, horizon)
            times.extend(ts)
            users.extend([m] * len(ts))
            items.extend([i] * len(ts))
    t = np.asarray(times, dtype=float)
    u = np.asarray(users, dtype=np.int64)
    it = np.asarray(items, dtype=np.int64)
    order = np.lexsort((it, u, t))
    return RequestStream(t[order], u[order], it[order], float(horizon))
