"""Desk-scale experiment runners producing hit-ratio tables."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import streams
from .analytics import theorem4_gap_bound, upper_bound
from .demand import Catalog, Population, zipf_constant
from .optimizer import (
    estimation_phase,
    solve_benchmarks,
    solve_event_driven,
    solve_time_driven,
)
from .policy import LFU, LRU
from .simulator import SimConfig, SimMetrics, run_many

COLUMNS = ["sweep", "value", "policy", "hit_ratio", "stderr", "paired_stderr", "analytic", "h_upper"]


@dataclass
class ResultRow:
    sweep: str
    value: float
    policy: str
    hit_ratio: float
    stderr: float
    paired_stderr: float = math.nan
    analytic: float = math.nan
    h_upper: float = math.nan

    def check(self) -> None:
        if not 0.0 <= self.hit_ratio <= 1.0:
            raise ValueError(f"hit ratio out of range: {self}")
        if not (math.isnan(self.stderr) or self.stderr >= 0):
            raise ValueError(f"negative stderr: {self}")


@dataclass
class ResultTable:
    name: str
    rows: list[ResultRow] = field(default_factory=list)

    def add(self, row: ResultRow) -> None:
        row.check()
        self.rows.append(row)

    def get(self, sweep: str, value: float, policy: str) -> ResultRow:
        for r in self.rows:
            if r.sweep == sweep and r.value == value and r.policy == policy:
                return r
        raise KeyError((sweep, value, policy))

    def series(self, sweep: str, policy: str) -> list[ResultRow]:
        return [r for r in self.rows if r.sweep == sweep and r.policy == policy]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([r.sweep, f"{r.value:.6g}", r.policy] + [_fmt(getattr(r, c)) for c in COLUMNS[3:]])
        return buf.getvalue()

    def to_records(self) -> list[dict]:
        return [{c: _num(getattr(r, c)) for c in COLUMNS} for r in self.rows]


def _fmt(x: float) -> str:
    return "" if isinstance(x, float) and math.isnan(x) else f"{x:.6g}"


def _num(x):
    if isinstance(x, float):
        return None if math.isnan(x) else float(f"{x:.6g}")
    return x


def _mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return float(v.mean()), math.nan
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


def _summarize(table: ResultTable, sweep: str, value: float, results: dict[str, list[float]],
               reference: str, analytic: dict[str, float], h_up: float = math.nan) -> None:
    ref = np.array(results[reference])
    for name, hs in results.items():
        mean, se = _mean_se(hs)
        paired = math.nan if name == reference else _mean_se(ref - np.array(hs))[1]
        table.add(ResultRow(sweep, float(value), name, mean, se, paired, analytic.get(name, math.nan), h_up))


# -- Shared LRU with many users ---------------------------------------


@dataclass
class Fig2Spec:
    N: int = 1000
    b: int = 50
    s: float = 5000.0
    zipf_exponent: float = 1.4
    M_values: list[int] = field(default_factory=lambda: [1, 10, 100, 1000])
    target_requests: int = 200000
    reps: int = 4
    warmup: float = 0.1
    seed: int = 7

    def check(self) -> None:
        if not self.M_values:
            raise ValueError("M_values must be nonempty")
        if self.reps < 1 or self.target_requests < 1 or self.b < 1:
            raise ValueError("reps, target_requests and b must be >= 1")


def fig2(spec: Fig2Spec | None = None) -> ResultTable:
    """Hit ratio of one LRU cache shared by M users with long OFF periods."""
    spec = spec or Fig2Spec()
    spec.check()
    cat = Catalog.zipf(spec.N, spec.zipf_exponent, s_rule=spec.s)
    rate = float((1.0 / (cat.s + 1.0 / cat.beta)).sum())
    seeds = streams.spawn_seeds(spec.seed, spec.reps)
    table = ResultTable("fig2")
    for M in spec.M_values:
        pop = Population.homogeneous_from(cat, M)
        horizon = spec.target_requests / (M * rate * (1.0 - spec.warmup))
        cfgs = [
            SimConfig(pop, [LRU()] * spec.N, horizon, mode="event", seed=s, warmup=spec.warmup,
                      cache_size=spec.b, shared_cache=True)
            for s in seeds
        ]
        hs = [m.hit_ratio for m in run_many(cfgs)]
        _summarize(table, "M", M, {"LRU": hs}, "LRU", {})
    return table


def fig2_constant(spec: Fig2Spec | None = None) -> float:
    spec = spec or Fig2Spec()
    return zipf_constant(spec.N, spec.zipf_exponent)


# -- Experiment 1: time-driven overhearing ----------------------------------


ROSTER_TIME = ["pi_T", "overhearing-only", "caching-only", "LFU", "LRU"]
ROSTER_EVENT = ["pi_E", "overhearing-only", "caching-only", "LFU", "LRU"]


@dataclass
class Exp1Spec:
    N: int = 1000
    zipf_exponent: float = 0.8
    b: int = 50
    gammas: list[float] = field(default_factory=lambda: [0.1, 0.5, 1.0, 2.0, 5.0])
    gamma_for_b: float = 1.0
    b_values: list[int] = field(default_factory=lambda: [10, 50, 100, 500, 1000])
    horizon: float = 100000.0
    warmup: float = 0.1
    reps: int = 4
    seed: int = 11
    roster: list[str] = field(default_factory=lambda: list(ROSTER_TIME))

    def check(self) -> None:
        if not self.gammas or not self.b_values:
            raise ValueError("sweep values must be nonempty")
        if not self.roster or self.roster[0] != "pi_T" or set(self.roster) - set(ROSTER_TIME):
            raise ValueError(f"roster must start with pi_T and use {ROSTER_TIME}")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")


def _time_cell(spec: Exp1Spec, cat: Catalog, gamma: float, b: int, seeds) -> tuple[dict, dict]:
    lam = gamma * cat.beta
    pop = Population.homogeneous_from(cat, 1)
    pi_t = solve_time_driven(cat, lam, b)
    bench = solve_benchmarks(cat, b, lambdas=lam)
    plans = {
        "pi_T": (pi_t.policies, pi_t.objective),
        "overhearing-only": (bench["overhearing-only"].policies, bench["overhearing-only"].objective),
        "caching-only": (bench["caching-only"].policies, bench["caching-only"].objective),
        "LFU": ([LFU()] * cat.N, math.nan),
        "LRU": ([LRU()] * cat.N, math.nan),
    }
    cfgs, keys = [], []
    for name in spec.roster:
        pols = plans[name][0]
        for s in seeds:
            cfgs.append(SimConfig(pop, pols, spec.horizon, mode="time", lambdas=lam, seed=s,
                                  warmup=spec.warmup, cache_size=b))
            keys.append(name)
    results: dict[str, list[float]] = {name: [] for name in spec.roster}
    for k, m in zip(keys, run_many(cfgs)):
        results[k].append(m.hit_ratio)
    return results, {k: v[1] for k, v in plans.items() if not math.isnan(v[1])}


def exp1(spec: Exp1Spec | None = None) -> ResultTable:
    """Time-driven overhearing: sweep the overhearing intensity and the cache size."""
    spec = spec or Exp1Spec()
    spec.check()
    cat = Catalog.zipf(spec.N, spec.zipf_exponent)
    seeds = streams.spawn_seeds(spec.seed, spec.reps)
    table = ResultTable("exp1")
    for gamma in spec.gammas:
        results, analytic = _time_cell(spec, cat, gamma, spec.b, seeds)
        _summarize(table, "gamma", gamma, results, "pi_T", analytic)
    for b in spec.b_values:
        results, analytic = _time_cell(spec, cat, spec.gamma_for_b, b, seeds)
        _summarize(table, "b", b, results, "pi_T", analytic)
    return table


# -- Experiment 2: event-driven overhearing ---------------------------------


@dataclass
class Exp2Spec:
    N: int = 1000
    zipf_exponent: float = 0.8
    b: int = 50
    M_values: list[int] = field(default_factory=lambda: [10, 25, 50, 100])
    M_for_b: int = 50
    b_values: list[int] = field(default_factory=lambda: [10, 50, 100, 500, 1000])
    estimation_horizon: float = 10000.0
    horizon: float = 4000.0
    warmup: float = 0.1
    reps: int = 3
    seed: int = 23
    roster: list[str] = field(default_factory=lambda: list(ROSTER_EVENT))

    def check(self) -> None:
        if not self.M_values and not self.b_values:
            raise ValueError("at least one sweep must be nonempty")
        if not self.roster or self.roster[0] != "pi_E" or set(self.roster) - set(ROSTER_EVENT):
            raise ValueError(f"roster must start with pi_E and use {ROSTER_EVENT}")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")


@dataclass
class EstimationRun:
    """Overhearing-only run (deaf TTL = OFF period) used to fit the breakpoints."""

    M: int
    metrics: SimMetrics
    r_bar: np.ndarray

    def miss_fraction(self) -> tuple[np.ndarray, np.ndarray]:
        """Per item miss fraction pooled over caches, and its request count."""
        req = self.metrics.requests.sum(axis=0)
        miss = self.metrics.misses.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(req > 0, miss / req, np.nan), req


@dataclass
class Exp2Result:
    table: ResultTable
    estimation: dict[int, EstimationRun]
    h_upper: dict[int, float]
    gap_bound: dict[int, float]


def _event_cell(spec: Exp2Spec, cat: Catalog, M: int, b: int, est: EstimationRun, seeds) -> tuple[dict, dict]:
    pop = Population.homogeneous_from(cat, M)
    pi_e = solve_event_driven(cat, b, est.r_bar)
    bench = solve_benchmarks(cat, b, estimates=est.r_bar)
    plans = {
        "pi_E": (pi_e.policies, pi_e.objective),
        "overhearing-only": (bench["overhearing-only"].policies, bench["overhearing-only"].objective),
        "caching-only": (bench["caching-only"].policies, bench["caching-only"].objective),
        "LFU": ([LFU()] * cat.N, math.nan),
        "LRU": ([LRU()] * cat.N, math.nan),
    }
    cfgs, keys = [], []
    for name in spec.roster:
        for s in seeds:
            cfgs.append(SimConfig(pop, plans[name][0], spec.horizon, mode="event", seed=s,
                                  warmup=spec.warmup, cache_size=b))
            keys.append(name)
    results: dict[str, list[float]] = {name: [] for name in spec.roster}
    for k, m in zip(keys, run_many(cfgs)):
        results[k].append(m.hit_ratio)
    return results, {k: v[1] for k, v in plans.items() if not math.isnan(v[1])}


def exp2(spec: Exp2Spec | None = None) -> Exp2Result:
    """Event-driven overhearing: sweep the number of caches and the cache size."""
    spec = spec or Exp2Spec()
    spec.check()
    cat = Catalog.zipf(spec.N, spec.zipf_exponent)
    seeds = streams.spawn_seeds(spec.seed, spec.reps)
    est_seed = streams.spawn_seeds(spec.seed + 1, 1)[0]
    estimation: dict[int, EstimationRun] = {}

    def estimate(M: int) -> EstimationRun:
        if M not in estimation:
            pop = Population.homogeneous_from(cat, M)
            ests, metrics = estimation_phase(pop, spec.estimation_horizon, est_seed, spec.warmup)
            estimation[M] = EstimationRun(M, metrics, np.array([e.r_bar for e in ests]))
        return estimation[M]

    table = ResultTable("exp2")
    h_up: dict[int, float] = {}
    bound: dict[int, float] = {}
    for M in spec.M_values:
        h, _ = upper_bound(cat, spec.b)
        h_up[M] = h
        bound[M] = theorem4_gap_bound(cat, M, spec.b)
        results, analytic = _event_cell(spec, cat, M, spec.b, estimate(M), seeds)
        _summarize(table, "M", M, results, "pi_E", analytic, h)
    for b in spec.b_values:
        h, _ = upper_bound(cat, b)
        results, analytic = _event_cell(spec, cat, spec.M_for_b, b, estimate(spec.M_for_b), seeds)
        _summarize(table, "b", b, results, "pi_E", analytic, h)
    return Exp2Result(table, estimation, h_up, bound)
