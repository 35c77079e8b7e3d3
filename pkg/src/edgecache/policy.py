"""Per-item cache control: TTL caching/overhearing state machines and the
LRU and LFU baselines.

A cache talks to its driver (the simulator, or :func:`replay`) through a
small hooks object::

    hooks.schedule(time, prio, kind, cache, item, gen)
    hooks.listen(cache, item, gen, time)    # start accepting broadcasts
    hooks.unlisten(cache, item)
    hooks.preheard(item, duration) -> prob  # P(a broadcast in `duration`)

Timer events carry the generation number current when they were set; every
request bumps the generation so stale timers fall through as no-ops.
"""

from __future__ import annotations

import heapq
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence, Union

from . import streams
from .analytics import PolicyParams, RandomizedParams

INF = math.inf

# event priorities at equal timestamps
PRIO_TIMER = 0
PRIO_BROADCAST = 1
PRIO_REQUEST = 2

EXPIRE = "expire"
DEAF = "deaf"


@dataclass(frozen=True)
class LRU:
    pass


@dataclass(frozen=True)
class LFU:
    pass


ItemPolicy = Union[PolicyParams, RandomizedParams, LRU, LFU]


def cache_only(tau: float) -> PolicyParams:
    return PolicyParams(tau, INF)


def overhear_only(omega: float) -> PolicyParams:
    return PolicyParams(0.0, omega)


def never_cache() -> PolicyParams:
    return PolicyParams(0.0, INF)


def always_cache() -> PolicyParams:
    return PolicyParams(INF, INF)


def _num(x: float):
    return "inf" if math.isinf(x) else float(x)


def _parse(x) -> float:
    if isinstance(x, str):
        if x.lower() in ("inf", "+inf", "infinity"):
            return INF
        raise ValueError(f"expected a number or 'inf', got {x!r}")
    return float(x)


def policy_to_dict(policy: ItemPolicy) -> dict:
    if isinstance(policy, PolicyParams):
        return {"type": "co", "tau": _num(policy.tau), "omega": _num(policy.omega)}
    if isinstance(policy, RandomizedParams):
        return {
            "type": "rco",
            "q": list(policy.q),
            "taus": [_num(t) for t in policy.taus],
            "omegas": [_num(w) for w in policy.omegas],
        }
    if isinstance(policy, LRU):
        return {"type": "lru"}
    if isinstance(policy, LFU):
        return {"type": "lfu"}
    raise TypeError(f"not an item policy: {policy!r}")


def policy_from_dict(d: dict) -> ItemPolicy:
    kind = d.get("type")
    allowed = {
        "co": {"type", "tau", "omega"},
        "cache_only": {"type", "tau"},
        "overhear_only": {"type", "omega"},
        "rco": {"type", "q", "taus", "omegas"},
        "lru": {"type"},
        "lfu": {"type"},
    }
    if kind not in allowed:
        raise ValueError(f"unknown policy type {kind!r}")
    extra = set(d) - allowed[kind]
    if extra:
        raise ValueError(f"unknown fields for {kind} policy: {sorted(extra)}")
    if kind == "co":
        return PolicyParams(_parse(d["tau"]), _parse(d["omega"]))
    if kind == "cache_only":
        return cache_only(_parse(d["tau"]))
    if kind == "overhear_only":
        return overhear_only(_parse(d["omega"]))
    if kind == "rco":
        return RandomizedParams(
            tuple(float(x) for x in d["q"]),
            tuple(_parse(x) for x in d["taus"]),
            tuple(_parse(x) for x in d["omegas"]),
        )
    return LRU() if kind == "lru" else LFU()


class CacheState:
    """Counters shared by every cache flavour.

    Metrics only count what happens at or after ``window_start``.
    """

    listens_always = False

    def __init__(self, cid: int, n_items: int, hooks, window_start: float = 0.0) -> None:
        self.cid = cid
        self.N = n_items
        self.hooks = hooks
        self.w0 = window_start
        self.requests = [0] * n_items
        self.hits = [0] * n_items
        self.occupancy = [0.0] * n_items
        self.stores = [0] * n_items

    def _credit(self, item: int, start: float, end: float) -> None:
        a = start if start > self.w0 else self.w0
        if end > a:
            self.occupancy[item] += end - a

    def _count(self, item: int, t: float, hit: bool) -> None:
        if t >= self.w0:
            self.requests[item] += 1
            if hit:
                self.hits[item] += 1

    def _check_item(self, item: int) -> None:
        if not 0 <= item < self.N:
            raise IndexError(f"unknown item {item}")

    def open_intervals(self) -> dict[int, float]:
        """item -> time it entered the cache, for items cached right now."""
        raise NotImplementedError

    def audit_occupancy(self, t: float) -> list[float]:
        """Fraction of [window_start, t] each item has spent cached so far."""
        span = t - self.w0
        if span <= 0:
            raise ValueError("audit time must lie after the metrics window start")
        occ = list(self.occupancy)
        for item, since in self.open_intervals().items():
            a = max(since, self.w0)
            if t > a:
                occ[item] += t - a
        return [o / span for o in occ]

    def finalize(self, t: float) -> None:
        """Close every open residency at the end of the run."""
        for item, since in self.open_intervals().items():
            self._credit(item, since, t)

    def cached_items(self) -> list[int]:
        return sorted(self.open_intervals())

    # defaults for caches that ignore timers and broadcasts
    def on_timer(self, kind: str, item: int, t: float, gen: int) -> None:
        pass

    def on_overhear(self, item: int, t: float, gen: int = -1) -> bool:
        return False

    def is_listening(self, item: int, gen: int) -> bool:
        return False


class TTLCache(CacheState):
    """Caches run by caching/overhearing TTL policies, one per item.

    ``capacity`` switches on hard-capacity mode: a broadcast is not stored
    into a full cache, and loading a requested item into a full cache evicts
    the item whose caching timer runs out first (stored broadcasts and
    never-expiring items count as expiring at infinity; ties go to the item
    that has been cached longest).
    """

    def __init__(
        self,
        cid: int,
        policies: Sequence[PolicyParams | RandomizedParams],
        hooks,
        root: int,
        window_start: float = 0.0,
        capacity: int | None = None,
    ) -> None:
        super().__init__(cid, len(policies), hooks, window_start)
        self.fixed: list[tuple[float, float] | None] = []
        self.mix: list[tuple[list[float], tuple[float, ...], tuple[float, ...]] | None] = []
        for p in policies:
            if isinstance(p, PolicyParams):
                self.fixed.append((p.tau, p.omega))
                self.mix.append(None)
            elif isinstance(p, RandomizedParams):
                cum, acc = [], 0.0
                for q in p.q:
                    acc += q
                    cum.append(acc)
                self.fixed.append(None)
                self.mix.append((cum, p.taus, p.omegas))
            else:
                raise TypeError(f"TTLCache cannot run {p!r}")
        self.root = root
        self.capacity = capacity
        n = self.N
        self.cached = [False] * n
        self.since = [0.0] * n
        self.deadline = [0.0] * n
        self.gen = [0] * n
        self.listening = [False] * n
        self.n_cached = 0
        self._streams: dict[int, streams.UniformStream] = {}

    def _uniform(self, item: int) -> float:
        st = self._streams.get(item)
        if st is None:
            st = streams.UniformStream(self.root, streams.POLICY, self.cid, item)
            self._streams[item] = st
        return st.random()

    def _draw(self, item: int) -> tuple[float, float]:
        f = self.fixed[item]
        if f is not None:
            return f
        cum, taus, omegas = self.mix[item]
        u = self._uniform(item)
        for j, c in enumerate(cum):
            if u < c:
                return taus[j], omegas[j]
        # rounding left u above the last cumulative weight
        j = max(k for k in range(len(cum)) if (cum[k] - (cum[k - 1] if k else 0.0)) > 0)
        return taus[j], omegas[j]

    def _evict(self, item: int, t: float) -> None:
        self.cached[item] = False
        self.n_cached -= 1
        self._credit(item, self.since[item], t)

    def _admit(self, item: int, t: float, deadline: float) -> None:
        self.cached[item] = True
        self.n_cached += 1
        self.since[item] = t
        self.deadline[item] = deadline

    def _make_room(self, t: float) -> None:
        victim = min(
            (j for j in range(self.N) if self.cached[j]),
            key=lambda j: (self.deadline[j], self.since[j]),
        )
        self._evict(victim, t)

    def _stop_listening(self, item: int) -> None:
        if self.listening[item]:
            self.listening[item] = False
            self.hooks.unlisten(self.cid, item)

    def _start_listening(self, item: int, t: float) -> None:
        self.listening[item] = True
        self.hooks.listen(self.cid, item, self.gen[item], t)

    def _renew(self, item: int, t: float, tau: float, omega: float) -> None:
        """Restart both timers at ``t`` for an item already marked (not) cached."""
        g = self.gen[item]
        if tau == INF:
            self.deadline[item] = INF
        elif tau > 0:
            self.deadline[item] = t + tau
            self.hooks.schedule(t + tau, PRIO_TIMER, EXPIRE, self.cid, item, g)
        if omega == INF:
            return
        if omega > 0:
            self.hooks.schedule(t + omega, PRIO_TIMER, DEAF, self.cid, item, g)
        else:
            self._start_listening(item, t)

    def on_request(self, item: int, t: float) -> bool:
        hit = self.cached[item]
        self._count(item, t, hit)
        self.gen[item] += 1
        self._stop_listening(item)
        tau, omega = self._draw(item)
        if tau == 0.0:
            if hit:
                self._evict(item, t)
        elif not hit:
            if self.capacity is not None and self.n_cached >= self.capacity:
                self._make_room(t)
            self._admit(item, t, INF)
        self._renew(item, t, tau, omega)
        return hit

    def init_from_age(self, item: int, age: float) -> None:
        """Put the item in the state left by a request ``age`` before t=0."""
        self._check_item(item)
        if math.isinf(age):
            return
        tau, omega = self._draw(item)
        t_req = -age
        cache_end = t_req + tau
        if tau > 0 and cache_end > 0:
            if self.capacity is None or self.n_cached < self.capacity:
                self._admit(item, 0.0, cache_end)
                if tau != INF:
                    self.hooks.schedule(cache_end, PRIO_TIMER, EXPIRE, self.cid, item, self.gen[item])
        if omega == INF:
            return
        deaf_end = t_req + omega
        if deaf_end > 0:
            self.hooks.schedule(deaf_end, PRIO_TIMER, DEAF, self.cid, item, self.gen[item])
            return
        if self.cached[item]:
            return
        p_heard = self.hooks.preheard(item, -deaf_end)
        if p_heard > 0 and self._uniform(item) < p_heard:
            if self.capacity is None or self.n_cached < self.capacity:
                self._admit(item, 0.0, INF)
                return
        self._start_listening(item, 0.0)

    def on_timer(self, kind: str, item: int, t: float, gen: int) -> None:
        if gen != self.gen[item]:
            return
        if kind == EXPIRE:
            # an evicted-then-overheard copy has an infinite deadline
            if self.cached[item] and self.deadline[item] <= t:
                self._evict(item, t)
        elif not self.cached[item] and not self.listening[item]:
            self._start_listening(item, t)

    def is_listening(self, item: int, gen: int) -> bool:
        return self.listening[item] and gen == self.gen[item]

    def on_overhear(self, item: int, t: float, gen: int = -1) -> bool:
        """Store a broadcast if the deaf timer has run out; True when stored."""
        if not self.listening[item] or self.cached[item]:
            return False
        if gen >= 0 and gen != self.gen[item]:
            return False
        if self.capacity is not None and self.n_cached >= self.capacity:
            return False
        self._stop_listening(item)
        self._admit(item, t, INF)
        if t >= self.w0:
            self.stores[item] += 1
        return True

    def open_intervals(self) -> dict[int, float]:
        return {i: self.since[i] for i in range(self.N) if self.cached[i]}


class LRUCache(CacheState):
    """Least-recently-used replacement over ``capacity`` slots."""

    def __init__(self, cid, n_items, hooks, capacity: int, window_start=0.0, overhear=False) -> None:
        super().__init__(cid, n_items, hooks, window_start)
        if capacity < 1:
            raise ValueError("LRU capacity must be >= 1")
        self.capacity = int(capacity)
        self.slots: OrderedDict[int, float] = OrderedDict()
        self.listens_always = overhear

    def _insert(self, item: int, t: float) -> None:
        self.slots[item] = t
        if len(self.slots) > self.capacity:
            old, since = self.slots.popitem(last=False)
            self._credit(old, since, t)

    def on_request(self, item: int, t: float) -> bool:
        slots = self.slots
        hit = item in slots
        self._count(item, t, hit)
        if hit:
            slots.move_to_end(item)
        else:
            self._insert(item, t)
        return hit

    def warm(self, ages: Sequence[float]) -> None:
        """Fill with the most recently requested items before t=0."""
        order = sorted((a, i) for i, a in enumerate(ages) if not math.isinf(a))
        for _, i in reversed(order[: self.capacity]):
            self.slots[i] = 0.0

    def on_overhear(self, item: int, t: float, gen: int = -1) -> bool:
        if not self.listens_always or item in self.slots:
            return False
        self._insert(item, t)
        if t >= self.w0:
            self.stores[item] += 1
        return True

    def is_listening(self, item: int, gen: int) -> bool:
        return self.listens_always

    def open_intervals(self) -> dict[int, float]:
        return dict(self.slots)


class LFUCache(CacheState):
    """Perfect LFU: request counts persist after eviction; the cached item with
    the lowest count (then the least recent access) is evicted."""

    def __init__(self, cid, n_items, hooks, capacity: int, window_start=0.0, overhear=False) -> None:
        super().__init__(cid, n_items, hooks, window_start)
        if capacity < 1:
            raise ValueError("LFU capacity must be >= 1")
        self.capacity = int(capacity)
        self.counts = [0] * n_items
        self.last = [-INF] * n_items
        self.slots: dict[int, float] = {}
        self.listens_always = overhear

    def _insert(self, item: int, t: float) -> None:
        self.slots[item] = t
        if len(self.slots) > self.capacity:
            counts, last = self.counts, self.last
            victim = min(self.slots, key=lambda j: (counts[j], last[j]))
            since = self.slots.pop(victim)
            self._credit(victim, since, t)

    def on_request(self, item: int, t: float) -> bool:
        hit = item in self.slots
        self._count(item, t, hit)
        self.counts[item] += 1
        self.last[item] = t
        if not hit:
            self._insert(item, t)
        return hit

    def warm(self, ages: Sequence[float]) -> None:
        order = sorted((a, i) for i, a in enumerate(ages) if not math.isinf(a))
        for a, i in order[: self.capacity]:
            self.slots[i] = 0.0
            self.last[i] = -a

    def on_overhear(self, item: int, t: float, gen: int = -1) -> bool:
        if not self.listens_always or item in self.slots:
            return False
        self.last[item] = t
        self._insert(item, t)
        stored = item in self.slots
        if stored and t >= self.w0:
            self.stores[item] += 1
        return stored

    def is_listening(self, item: int, gen: int) -> bool:
        return self.listens_always

    def open_intervals(self) -> dict[int, float]:
        return dict(self.slots)


# -- standalone replay ---------------------------------------------------------


class _ReplayHooks:
    def __init__(self) -> None:
        self.heap: list = []
        self.seq = 0
        self.listeners: set[tuple[int, int]] = set()

    def schedule(self, time, prio, kind, cache, item, gen):
        self.seq += 1
        heapq.heappush(self.heap, (time, prio, self.seq, kind, item, gen))

    def listen(self, cache, item, gen, time):
        self.listeners.add((cache, item))

    def unlisten(self, cache, item):
        self.listeners.discard((cache, item))

    def preheard(self, item, duration):
        return 0.0


@dataclass(frozen=True)
class ReplayEvent:
    time: float
    kind: str  # "hit", "miss", "store", "ignore", "evict"
    item: int


def replay(
    policies: Sequence[ItemPolicy],
    requests: Sequence[tuple[float, int]],
    broadcasts: Sequence[tuple[float, int]] = (),
    seed: int = 0,
    capacity: int | None = None,
    until: float | None = None,
) -> tuple[list[ReplayEvent], CacheState]:
    """Drive one cache through an explicit trace of requests and broadcasts.

    The trace ends at ``until`` (default: the last request or broadcast);
    timers due later are dropped.  Returns the decision log and the cache
    state finalized at the end of the trace.
    """
    hooks = _ReplayHooks()
    n = len(policies)
    if all(isinstance(p, LRU) for p in policies):
        cache: CacheState = LRUCache(0, n, hooks, capacity or n)
    elif all(isinstance(p, LFU) for p in policies):
        cache = LFUCache(0, n, hooks, capacity or n)
    else:
        cache = TTLCache(0, policies, hooks, streams.root_key(seed), capacity=capacity)
    for t, i in requests:
        hooks.schedule(t, PRIO_REQUEST, "request", 0, i, 0)
    for t, i in broadcasts:
        hooks.schedule(t, PRIO_BROADCAST, "broadcast", 0, i, 0)
    if until is None:
        until = max([t for t, _ in requests] + [t for t, _ in broadcasts], default=0.0)
    log: list[ReplayEvent] = []
    while hooks.heap and hooks.heap[0][0] <= until:
        t, _, _, kind, item, gen = heapq.heappop(hooks.heap)
        cache._check_item(item)
        if kind == "request":
            log.append(ReplayEvent(t, "hit" if cache.on_request(item, t) else "miss", item))
        elif kind == "broadcast":
            stored = cache.on_overhear(item, t)
            log.append(ReplayEvent(t, "store" if stored else "ignore", item))
        else:
            was = isinstance(cache, TTLCache) and cache.cached[item]
            cache.on_timer(kind, item, t, gen)
            if was and not cache.cached[item]:
                log.append(ReplayEvent(t, "evict", item))
    cache.finalize(until)
    return log, cache
