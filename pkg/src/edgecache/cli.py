"""Command-line entry point.

Every command prints one JSON document that embeds the fully resolved
config (defaults filled in, seed included).  Feeding the ``config`` part
back through ``--config`` reproduces the output byte for byte.

Exit codes: 0 success, 1 invariant failure, 2 configuration error.
"""

from __future__ import annotations

import json
import logging
import math
import os
import sys
from dataclasses import dataclass, replace
from typing import Any

import click
import numpy as np

from . import config as cfgmod
from .analytics import theorem5_gap_bound, upper_bound
from .config import CatalogSpec, ConfigError, PopulationSpec
from .demand import Catalog, Population
from .experiments import Exp1Spec, Exp2Spec, Fig2Spec, exp1, exp2, fig2
from .optimizer import (
    estimate_occupancies,
    solve_benchmarks,
    solve_event_driven,
    solve_heterogeneous,
    solve_time_driven,
)
from .policy import policy_from_dict, policy_to_dict
from .simulator import SimConfig, SimMetrics, dumps, metrics_csv, metrics_summary, replicate

EXIT_INVARIANT = 1
EXIT_CONFIG = 2


@dataclass
class OptimizeSpec:
    """Optimal item policies for a catalog (or per-user population).

    ``overhearing`` is "time" (broadcast rates ``lambdas`` or
    ``gamma * beta``) or "event" (breakpoints from ``r_bar`` or from an
    estimation run with ``M`` caches).
    """

    b: float
    catalog: CatalogSpec | None = None
    population: PopulationSpec | None = None
    overhearing: str = "time"
    gamma: float | None = None
    lambdas: list[float] | None = None
    M: int = 1
    r_bar: list[float] | None = None
    estimation_horizon: float = 10000.0
    warmup: float = 0.1
    seed: int = 0

    def check(self) -> None:
        if (self.catalog is None) == (self.population is None):
            raise ValueError("give exactly one of catalog or population")
        if self.overhearing not in ("time", "event"):
            raise ValueError("overhearing must be 'time' or 'event'")
        if not self.b > 0:
            raise ValueError("b must be positive")
        if self.overhearing == "time" and self.catalog is not None:
            if (self.gamma is None) == (self.lambdas is None):
                raise ValueError("time-driven overhearing needs exactly one of gamma or lambdas")
        if self.M < 1:
            raise ValueError("M must be >= 1")


@dataclass
class SimulateSpec:
    """One replicated simulation.

    ``policies`` is a list of item policies shared by every cache, or one
    such list per cache.  Item indices follow the input order of the
    catalog, as printed by ``optimize``.
    """

    horizon: float
    policies: list[Any]
    catalog: CatalogSpec | None = None
    population: PopulationSpec | None = None
    M: int = 1
    overhearing: str = "time"
    gamma: float | None = None
    lambdas: list[float] | None = None
    reps: int = 1
    seed: int = 0
    start: str = "stationary"
    warmup: float | None = None
    capacity: int | None = None
    cache_size: int | None = None
    shared_cache: bool = False
    broadcast_delay: float = 0.0
    baselines_overhear: bool = False

    def check(self) -> None:
        if (self.catalog is None) == (self.population is None):
            raise ValueError("give exactly one of catalog or population")
        if self.overhearing == "time" and (self.gamma is None) == (self.lambdas is None):
            raise ValueError("time-driven overhearing needs exactly one of gamma or lambdas")
        if self.reps < 1 or self.M < 1:
            raise ValueError("reps and M must be >= 1")
        if not self.policies:
            raise ValueError("policies must be nonempty")


def _emit(doc: dict, out: str | None, files: dict[str, str] | None = None) -> None:
    text = dumps(doc)
    click.echo(text)
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "result.json"), "w") as fh:
            fh.write(text + "\n")
        with open(os.path.join(out, "config.json"), "w") as fh:
            fh.write(dumps(doc["config"]) + "\n")
        for name, body in (files or {}).items():
            with open(os.path.join(out, name), "w") as fh:
                fh.write(body)


def _load(path: str | None, cls):
    return cls() if path is None else cfgmod.load(path, cls)


def _catalog_and_lambdas(spec) -> tuple[Catalog, np.ndarray | None]:
    cat = spec.catalog.build()
    lam = None
    if spec.overhearing == "time":
        if spec.lambdas is not None:
            if len(spec.lambdas) != cat.N:
                raise ConfigError(f"lambdas has {len(spec.lambdas)} entries, catalog has {cat.N}")
            lam = np.asarray(spec.lambdas, dtype=float)[cat.order]
        else:
            lam = spec.gamma * cat.beta
    return cat, lam


def _to_input_order(values: list, cat: Catalog) -> list:
    out: list = [None] * cat.N
    for k, j in enumerate(cat.order):
        out[int(j)] = values[k]
    return out


def _round(x: float) -> float:
    return float(f"{x:.12g}")


def _optimize(spec: OptimizeSpec) -> dict:
    if spec.population is not None:
        pop = spec.population.build()
        lam = None
        if spec.overhearing == "time":
            if spec.lambdas is None or len(spec.lambdas) != pop.N:
                raise ConfigError("heterogeneous time-driven optimization needs one rate per item in lambdas")
            lam = spec.lambdas
        sol = solve_heterogeneous(pop, spec.b, lam)
        res = sol.to_dict()
        res["gap_bound"] = _round(theorem5_gap_bound(pop, spec.b))
        return res
    cat, lam = _catalog_and_lambdas(spec)
    if spec.overhearing == "time":
        alloc = solve_time_driven(cat, lam, spec.b)
        bench = solve_benchmarks(cat, spec.b, lambdas=lam)
    else:
        if spec.r_bar is not None:
            if len(spec.r_bar) != cat.N:
                raise ConfigError(f"r_bar has {len(spec.r_bar)} entries, catalog has {cat.N}")
            r_bar = list(np.asarray(spec.r_bar, dtype=float)[cat.order])
        else:
            pop = Population.homogeneous_from(cat, spec.M)
            ests = estimate_occupancies(pop, spec.estimation_horizon, spec.seed, spec.warmup)
            r_bar = [e.r_bar for e in ests]
        alloc = solve_event_driven(cat, spec.b, r_bar)
        bench = solve_benchmarks(cat, spec.b, estimates=r_bar)
    h_up, K = upper_bound(cat, spec.b)
    return {
        "kind": alloc.kind,
        "objective": _round(alloc.objective),
        "r_star": _to_input_order([_round(x) for x in alloc.r_star], cat),
        "policies": _to_input_order([policy_to_dict(p) for p in alloc.policies], cat),
        "h_upper": _round(h_up),
        "K": int(K),
        "benchmarks": {k: _round(a.objective) for k, a in sorted(bench.items())},
    }


def _reindex(m: SimMetrics, inv: np.ndarray) -> SimMetrics:
    """Metrics with item columns back in input order."""
    return replace(
        m,
        requests=m.requests[:, inv], hits=m.hits[:, inv], occupancy=m.occupancy[:, inv],
        overheard_stores=m.overheard_stores[:, inv], broadcasts=m.broadcasts[:, inv],
        item_broadcasts=m.item_broadcasts[inv], first_broadcast=m.first_broadcast[inv],
        last_broadcast=m.last_broadcast[inv],
    )


def _sim_config(spec: SimulateSpec, seed: int) -> tuple[SimConfig, np.ndarray]:
    """Simulation config in internal item order, and the map from input to internal index."""
    if spec.population is not None:
        pop = spec.population.build()
        order = np.arange(pop.N)
        if spec.overhearing == "time":
            if len(spec.lambdas or []) != pop.N:
                raise ConfigError("lambdas must give one rate per item")
            lam = list(spec.lambdas)
        else:
            lam = None
    else:
        cat, lam_arr = _catalog_and_lambdas(spec)
        pop = Population.homogeneous_from(cat, spec.M)
        order = cat.order
        lam = None if lam_arr is None else list(lam_arr)

    def parse(row: list) -> list:
        if len(row) != pop.N:
            raise ConfigError(f"expected {pop.N} item policies, got {len(row)}")
        try:
            items = [policy_from_dict(d) for d in row]
        except (ValueError, TypeError, AttributeError, KeyError) as e:
            raise ConfigError(f"policies: {e}") from e
        return [items[int(j)] for j in order]

    pols = spec.policies
    if isinstance(pols[0], list):
        policies: list = [parse(row) for row in pols]
    else:
        policies = parse(pols)
    cfg = SimConfig(
        pop, policies, spec.horizon, mode=spec.overhearing, lambdas=lam, seed=seed, start=spec.start,
        warmup=spec.warmup, capacity=spec.capacity, cache_size=spec.cache_size,
        shared_cache=spec.shared_cache, broadcast_delay=spec.broadcast_delay,
        baselines_overhear=spec.baselines_overhear,
    )
    try:
        cfg.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return cfg, np.argsort(order, kind="stable")


def _nan_to_none(x: float):
    return None if math.isnan(x) else _round(x)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Caching with overhearing: analysis, optimization and simulation."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _guard(fn):
    """Map configuration errors to exit code 2."""
    import functools

    @functools.wraps(fn)
    def wrapper(*a, **kw):
        try:
            return fn(*a, **kw)
        except ConfigError as e:
            click.echo(f"config error: {e}", err=True)
            sys.exit(EXIT_CONFIG)

    return wrapper


@main.command()
@click.option("--quick", is_flag=True, help="Smaller Monte-Carlo budget.")
def validate(quick: bool) -> None:
    """Run the invariant suites; exit 1 naming the first failure."""
    from . import validate as v

    def report(res) -> None:
        click.echo(f"{'PASS' if res.ok else 'FAIL'} {res.name}" + (f": {res.detail}" if res.detail else ""))

    results = v.run_all(quick=quick, report=report)
    failed = [r for r in results if not r.ok]
    if failed:
        click.echo(f"invariant violated: {failed[0].name}", err=True)
        sys.exit(EXIT_INVARIANT)


def _experiment(name: str, spec_cls, runner, summary: str, extra=None):
    @main.command(name=name, help=summary)
    @click.option("--config", "config_path", type=click.Path(), default=None, help="JSON config file.")
    @click.option("--out", type=click.Path(), default=None, help="Directory for result files.")
    @_guard
    def cmd(config_path: str | None, out: str | None) -> None:
        spec = _load(config_path, spec_cls)
        result = runner(spec)
        table = result if extra is None else result.table
        doc = {"command": name, "config": cfgmod.to_dict(spec), "table": table.to_records()}
        if extra is not None:
            doc.update(extra(result))
        _emit(doc, out, {"results.csv": table.to_csv()})

    return cmd


def _exp2_extra(result) -> dict:
    return {
        "h_upper": {str(k): _round(v) for k, v in sorted(result.h_upper.items())},
        "gap_bound": {str(k): _round(v) for k, v in sorted(result.gap_bound.items())},
    }


_experiment("fig2", Fig2Spec, fig2, "Shared LRU cache hit ratio as the number of users grows.")
_experiment("exp1", Exp1Spec, exp1, "Time-driven overhearing: sweep broadcast intensity and cache size.")
_experiment("exp2", Exp2Spec, exp2, "Event-driven overhearing: sweep cache count and cache size.", _exp2_extra)


@main.command()
@click.option("--config", "config_path", type=click.Path(), required=True, help="JSON config file.")
@click.option("--out", type=click.Path(), default=None, help="Directory for result files.")
@_guard
def optimize(config_path: str, out: str | None) -> None:
    """Solve for the optimal per-item policies."""
    spec = cfgmod.load(config_path, OptimizeSpec)
    _emit({"command": "optimize", "config": cfgmod.to_dict(spec), "result": _optimize(spec)}, out)


@main.command()
@click.option("--config", "config_path", type=click.Path(), required=True, help="JSON config file.")
@click.option("--out", type=click.Path(), default=None, help="Directory for result files.")
@_guard
def simulate(config_path: str, out: str | None) -> None:
    """Simulate given policies; per (cache, item) CSV per replication goes to --out."""
    spec = cfgmod.load(config_path, SimulateSpec)
    cfg, inv = _sim_config(spec, spec.seed)
    rep = replicate(cfg, spec.reps)
    runs = [_reindex(m, inv) for m in rep.runs]
    doc = {
        "command": "simulate",
        "config": cfgmod.to_dict(spec),
        "result": {
            "hit_ratio": _round(rep.hit_ratio),
            "hit_ratio_stderr": _nan_to_none(rep.hit_ratio_stderr),
            "item_hit_ratio": [_nan_to_none(x) for x in rep.item_hit_ratio[inv]],
            "runs": [metrics_summary(m) for m in runs],
        },
    }
    files = {f"metrics_{k}.csv": metrics_csv(m) for k, m in enumerate(runs)}
    _emit(doc, out, files)


if __name__ == "__main__":
    main()
