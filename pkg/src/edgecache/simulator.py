"""Discrete-event simulation of edge caches with wireless overhearing.

Two broadcast models are supported.  ``time`` (exogenous): item i is
broadcast at the epochs of a Poisson process of rate ``lambdas[i]``.
``event``: every miss makes the base station send the item, and every
other cache that is listening for it may store the copy.
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import math
import os
from bisect import bisect_left, bisect_right
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import streams
from .analytics import PolicyParams, RandomizedParams
from .demand import DemandStreams, Population
from .policy import (
    LFU,
    LRU,
    PRIO_BROADCAST,
    PRIO_REQUEST,
    CacheState,
    ItemPolicy,
    LFUCache,
    LRUCache,
    TTLCache,
    policy_to_dict,
)

INF = math.inf

_REQUEST = "request"
_OVERHEAR = "overhear"
_DELIVER = "deliver"


@dataclass
class SimConfig:
    """One simulation run.

    ``policies`` holds one list of item policies per cache, or a single
    list shared by every cache.  A cache whose items are all ``LRU()`` (or
    all ``LFU()``) runs that replacement scheme with ``cache_size`` slots.
    ``capacity`` turns on hard-capacity mode for TTL caches.  With
    ``shared_cache`` all users are served by one cache.
    """

    population: Population
    policies: list
    horizon: float
    mode: str = "time"
    lambdas: Sequence[float] | None = None
    seed: int = 0
    start: str = "stationary"
    warmup: float | None = None
    capacity: int | None = None
    cache_size: int | None = None
    shared_cache: bool = False
    broadcast_delay: float = 0.0
    baselines_overhear: bool = False

    @property
    def n_caches(self) -> int:
        return 1 if self.shared_cache else self.population.M

    @property
    def warmup_fraction(self) -> float:
        if self.warmup is not None:
            return float(self.warmup)
        return 0.0 if self.start == "stationary" else 0.1

    def cache_policies(self) -> list[list[ItemPolicy]]:
        pol = self.policies
        if len(pol) > 0 and not isinstance(pol[0], (list, tuple)):
            return [list(pol)] * self.n_caches
        return [list(p) for p in pol]

    def validate(self) -> None:
        pop = self.population
        if not self.horizon > 0 or math.isinf(self.horizon):
            raise ValueError("horizon must be positive and finite")
        if np.spacing(self.horizon) > 1e-9 * float(np.min(pop.s + 1.0 / pop.beta)):
            raise ValueError("horizon too long for double-precision event times")
        if self.mode not in ("time", "event"):
            raise ValueError(f"mode must be 'time' or 'event', got {self.mode!r}")
        if self.mode == "time":
            if self.lambdas is None or len(self.lambdas) != pop.N:
                raise ValueError("time-driven overhearing needs one rate per item")
            if any(not (lam >= 0) or math.isinf(lam) for lam in self.lambdas):
                raise ValueError("overhearing rates must be finite and >= 0")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup must lie in [0, 1)")
        if self.broadcast_delay < 0:
            raise ValueError("broadcast_delay must be >= 0")
        if self.start not in ("stationary", "cold"):
            raise ValueError(f"unknown start {self.start!r}")
        per_cache = self.cache_policies()
        if len(per_cache) != self.n_caches:
            raise ValueError(f"expected policies for {self.n_caches} caches, got {len(per_cache)}")
        for pols in per_cache:
            if len(pols) != pop.N:
                raise ValueError(f"expected {pop.N} item policies per cache, got {len(pols)}")
            kinds = {type(p) for p in pols}
            if kinds & {LRU, LFU}:
                if len(kinds) != 1:
                    raise ValueError("LRU/LFU must govern every item of a cache")
                if not self.cache_size or self.cache_size < 1:
                    raise ValueError("LRU/LFU caches need cache_size >= 1")
            elif not kinds <= {PolicyParams, RandomizedParams}:
                raise ValueError(f"unsupported item policies {kinds}")
        if self.capacity is not None and self.capacity < 1:
            raise ValueError("hard capacity must be >= 1")


@dataclass
class SimMetrics:
    """Counters over the metrics window ``[window_start, horizon]``."""

    requests: np.ndarray
    hits: np.ndarray
    occupancy: np.ndarray
    overheard_stores: np.ndarray
    broadcasts: np.ndarray
    item_broadcasts: np.ndarray
    first_broadcast: np.ndarray
    last_broadcast: np.ndarray
    window_start: float
    horizon: float
    seed: int
    events: int = 0

    @property
    def misses(self) -> np.ndarray:
        return self.requests - self.hits

    @property
    def elapsed(self) -> float:
        return self.horizon - self.window_start

    @property
    def hit_ratio(self) -> float:
        total = int(self.requests.sum())
        return float(self.hits.sum()) / total if total else 0.0

    def item_hit_ratio(self) -> np.ndarray:
        """Per item, pooled over caches (nan when never requested)."""
        req = self.requests.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(req > 0, self.hits.sum(axis=0) / req, np.nan)

    def occupancy_fraction(self) -> np.ndarray:
        """Per (cache, item) fraction of the window spent cached."""
        return self.occupancy / self.elapsed if self.elapsed > 0 else np.zeros_like(self.occupancy)

    def item_occupancy(self) -> np.ndarray:
        return self.occupancy_fraction().mean(axis=0)


class _Engine:
    def __init__(self, cfg: SimConfig) -> None:
        cfg.validate()
        self.cfg = cfg
        pop = cfg.population
        self.N = pop.N
        self.T = float(cfg.horizon)
        self.w0 = cfg.warmup_fraction * self.T
        self.root = streams.root_key(cfg.seed)
        self.heap: list = []
        self.seq = 0
        self.event_mode = cfg.mode == "event"
        C = cfg.n_caches
        self.heard = [[0] * self.N for _ in range(C)]
        self.item_bc = [0] * self.N
        self.first_bc = [INF] * self.N
        self.last_bc = [-INF] * self.N
        self.listeners: list[set[int]] = [set() for _ in range(self.N)]
        self.bc_times: list[list[float]] = []
        if not self.event_mode:
            self.lambdas = [float(x) for x in cfg.lambdas]
            self._materialize_broadcasts()
        self.caches: list[CacheState] = []
        for c, pols in enumerate(cfg.cache_policies()):
            if isinstance(pols[0], LRU):
                cache = LRUCache(c, self.N, self, cfg.cache_size, self.w0, cfg.baselines_overhear)
            elif isinstance(pols[0], LFU):
                cache = LFUCache(c, self.N, self, cfg.cache_size, self.w0, cfg.baselines_overhear)
            else:
                cache = TTLCache(c, pols, self, self.root, self.w0, cfg.capacity)
            self.caches.append(cache)
        self.demand = DemandStreams(pop, cfg.seed, cfg.start)

    # hooks used by the caches
    def schedule(self, time, prio, kind, cache, item, gen):
        if time <= self.T:
            self.seq += 1
            heapq.heappush(self.heap, (time, prio, self.seq, kind, cache, item, gen))

    def listen(self, cache, item, gen, time):
        if self.event_mode:
            self.listeners[item].add(cache)
        else:
            times = self.bc_times[item]
            k = bisect_left(times, time)
            if k < len(times):
                self.schedule(times[k], PRIO_BROADCAST, _OVERHEAR, cache, item, gen)

    def unlisten(self, cache, item):
        if self.event_mode:
            self.listeners[item].discard(cache)

    def preheard(self, item, duration):
        if self.event_mode:
            return 0.0
        return -math.expm1(-self.lambdas[item] * duration)

    def _materialize_broadcasts(self) -> None:
        for i, lam in enumerate(self.lambdas):
            if lam <= 0:
                self.bc_times.append([])
                continue
            g = streams.generator(self.root, streams.BROADCAST, i)
            n = int(g.poisson(lam * self.T))
            times = np.sort(g.uniform(0.0, self.T, n)).tolist()
            self.bc_times.append(times)
            inside = [t for t in times if t >= self.w0]
            self.item_bc[i] = len(inside)
            if inside:
                self.first_bc[i] = inside[0]
                self.last_bc[i] = inside[-1]

    def _note_broadcast(self, item: int, t: float) -> None:
        if t >= self.w0:
            self.item_bc[item] += 1
            if self.first_bc[item] == INF:
                self.first_bc[item] = t
            self.last_bc[item] = t

    def _deliver(self, item: int, t: float, source: int) -> None:
        heard = t >= self.w0
        for c in list(self.listeners[item]):
            if c == source:
                continue
            if heard:
                self.heard[c][item] += 1
            self.caches[c].on_overhear(item, t)

    def _initialize(self) -> None:
        cfg = self.cfg
        pop = cfg.population
        ds = self.demand
        cache_of = (lambda m: 0) if cfg.shared_cache else (lambda m: m)
        for m in range(pop.M):
            c = cache_of(m)
            for i in range(self.N):
                t = float(ds.first[m, i])
                if t < self.T:
                    self.seq += 1
                    self.heap.append((t, PRIO_REQUEST, self.seq, _REQUEST, m, i, c))
        heapq.heapify(self.heap)
        for c, cache in enumerate(self.caches):
            users = list(range(pop.M)) if cfg.shared_cache else [c]
            ages = ds.age[users].min(axis=0)
            if isinstance(cache, TTLCache):
                for i in range(self.N):
                    cache.init_from_age(i, float(ages[i]))
            else:
                if cfg.start == "stationary":
                    cache.warm(ages.tolist())
                if cache.listens_always:
                    for i in range(self.N):
                        self.listen(c, i, 0, 0.0)

    def run(self) -> SimMetrics:
        self._initialize()
        heap = self.heap
        caches = self.caches
        T = self.T
        ds = self.demand
        event_mode = self.event_mode
        delay = self.cfg.broadcast_delay
        events = 0
        pop_ = heapq.heappop
        while heap:
            t, prio, _, kind, a, item, c = pop_(heap)
            events += 1
            if kind == _REQUEST:
                cache = caches[c]
                hit = cache.on_request(item, t)
                if event_mode and not hit:
                    if delay > 0:
                        self.schedule(t + delay, PRIO_BROADCAST, _DELIVER, c, item, 0)
                    else:
                        self._note_broadcast(item, t)
                        self._deliver(item, t, c)
                nxt = t + ds.next_gap(a, item)
                if nxt < T:
                    self.seq += 1
                    heapq.heappush(heap, (nxt, PRIO_REQUEST, self.seq, _REQUEST, a, item, c))
            elif kind == _OVERHEAR:
                cache = caches[a]
                if not cache.is_listening(item, c):
                    continue
                if t >= self.w0:
                    self.heard[a][item] += 1
                stored = cache.on_overhear(item, t, c)
                if cache.listens_always or (not stored and cache.is_listening(item, c)):
                    times = self.bc_times[item]
                    k = bisect_right(times, t)
                    if k < len(times):
                        self.schedule(times[k], PRIO_BROADCAST, _OVERHEAR, a, item, c)
            elif kind == _DELIVER:
                self._note_broadcast(item, t)
                self._deliver(item, t, a)
            else:
                caches[a].on_timer(kind, item, t, c)
        for cache in caches:
            cache.finalize(T)
        return self._metrics(events)

    def _metrics(self, events: int) -> SimMetrics:
        cs = self.caches
        return SimMetrics(
            requests=np.array([c.requests for c in cs], dtype=np.int64),
            hits=np.array([c.hits for c in cs], dtype=np.int64),
            occupancy=np.array([c.occupancy for c in cs], dtype=float),
            overheard_stores=np.array([c.stores for c in cs], dtype=np.int64),
            broadcasts=np.array(self.heard, dtype=np.int64),
            item_broadcasts=np.array(self.item_bc, dtype=np.int64),
            first_broadcast=np.array(self.first_bc, dtype=float),
            last_broadcast=np.array(self.last_bc, dtype=float),
            window_start=self.w0,
            horizon=self.T,
            seed=self.cfg.seed,
            events=events,
        )


def run(config: SimConfig) -> SimMetrics:
    """Simulate one configuration; deterministic given ``config.seed``."""
    return _Engine(config).run()


@dataclass
class Replicated:
    """Mean and standard error across independent replications."""

    runs: list[SimMetrics]
    hit_ratio: float
    hit_ratio_stderr: float
    item_hit_ratio: np.ndarray
    item_hit_ratio_stderr: np.ndarray
    item_occupancy: np.ndarray
    item_occupancy_stderr: np.ndarray
    stderr_defined: bool = field(default=True)

    @property
    def n(self) -> int:
        return len(self.runs)


def _mean_se(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = values.shape[0]
    mean = np.nanmean(values, axis=0) if n else np.nan
    if n < 2:
        return mean, np.full_like(np.asarray(mean, dtype=float), np.nan)
    return mean, np.nanstd(values, axis=0, ddof=1) / math.sqrt(n)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("EDGECACHE_THREADS", "1")))
    except ValueError:
        return 1


def run_many(configs: Sequence[SimConfig], workers: int | None = None) -> list[SimMetrics]:
    """Run independent configurations, in a process pool when allowed."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(configs) <= 1:
        return [run(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, configs))


def replicate(config: SimConfig, n_reps: int, workers: int | None = None) -> Replicated:
    """``n_reps`` runs on seeds spawned from ``config.seed``.

    With a single replication the standard errors are nan and
    ``stderr_defined`` is False.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    seeds = streams.spawn_seeds(config.seed, n_reps)
    runs = run_many([replace(config, seed=s) for s in seeds], workers)
    return summarize(runs)


def summarize(runs: list[SimMetrics]) -> Replicated:
    h, h_se = _mean_se(np.array([m.hit_ratio for m in runs]))
    ih, ih_se = _mean_se(np.array([m.item_hit_ratio() for m in runs]))
    io_, io_se = _mean_se(np.array([m.item_occupancy() for m in runs]))
    return Replicated(runs, float(h), float(h_se), ih, ih_se, io_, io_se, len(runs) > 1)


def interoverhear_stats(metrics: SimMetrics) -> list[float | None]:
    """Per item mean time between successive broadcasts; None if fewer than two."""
    out: list[float | None] = []
    for n, a, b in zip(metrics.item_broadcasts, metrics.first_broadcast, metrics.last_broadcast):
        out.append(float((b - a) / (n - 1)) if n >= 2 else None)
    return out


# -- export ----------------------------------------------------------------


CSV_COLUMNS = ["cache", "item", "requests", "hits", "misses", "occupancy", "overheard_stores", "broadcasts"]


def _g(x: float) -> str:
    return f"{x:.6g}"


def metrics_csv(metrics: SimMetrics) -> str:
    """Per (cache, item) rows plus an ``all`` aggregate row; occupancy is a fraction."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    occ = metrics.occupancy_fraction()
    C, N = metrics.requests.shape
    for c in range(C):
        for i in range(N):
            w.writerow([
                c, i, int(metrics.requests[c, i]), int(metrics.hits[c, i]), int(metrics.misses[c, i]),
                _g(occ[c, i]), int(metrics.overheard_stores[c, i]), int(metrics.broadcasts[c, i]),
            ])
    w.writerow([
        "all", "all", int(metrics.requests.sum()), int(metrics.hits.sum()), int(metrics.misses.sum()),
        _g(float(occ.sum(axis=1).mean()) if C else 0.0), int(metrics.overheard_stores.sum()),
        int(metrics.item_broadcasts.sum()),
    ])
    return buf.getvalue()


def metrics_summary(metrics: SimMetrics) -> dict:
    occ = metrics.occupancy_fraction()
    return {
        "seed": metrics.seed,
        "window": [metrics.window_start, metrics.horizon],
        "requests": int(metrics.requests.sum()),
        "hits": int(metrics.hits.sum()),
        "hit_ratio": float(_g(metrics.hit_ratio)),
        "mean_cache_occupancy": float(_g(float(occ.sum(axis=1).mean()))),
        "overheard_stores": int(metrics.overheard_stores.sum()),
        "broadcasts": int(metrics.item_broadcasts.sum()),
    }


def config_policies_json(config: SimConfig) -> list:
    return [[policy_to_dict(p) for p in pols] for pols in config.cache_policies()]


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)
