"""Strict JSON configuration parsing.

Every config object is a dataclass; unknown keys are rejected so typos in
sweep definitions surface instead of silently falling back to defaults.
"""

from __future__ import annotations

import dataclasses
import json
import math
import types
import typing
from typing import Any

import numpy as np

from .demand import Catalog, Population


class ConfigError(ValueError):
    pass


def _coerce(value: Any, tp: Any, where: str) -> Any:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if tp is Any:
        return value
    if origin is typing.Union or origin is types.UnionType:
        if value is None and type(None) in args:
            return None
        errors = []
        for a in args:
            if a is type(None):
                continue
            try:
                return _coerce(value, a, where)
            except ConfigError as e:
                errors.append(str(e))
        if len(errors) == 1:
            raise ConfigError(errors[0])
        raise ConfigError(f"{where}: {value!r} does not match {tp}")
    if origin in (list, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        inner = args[0] if args else Any
        return [_coerce(v, inner, f"{where}[{k}]") for k, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected an object, got {value!r}")
        return dict(value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, str) and value.lower() in ("inf", "infinity"):
            return math.inf
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, where)
    raise ConfigError(f"{where}: unsupported type {tp}")


def from_dict(cls, data: Any, where: str = "config"):
    """Build dataclass ``cls`` from a JSON object, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {data!r}")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
    kwargs = {}
    for name, f in fields.items():
        if name in data:
            kwargs[name] = _coerce(data[name], hints[name], f"{where}.{name}")
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError(f"{where}: missing required field {name!r}")
    try:
        obj = cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e
    check = getattr(obj, "check", None)
    if check is not None:
        try:
            check()
        except ValueError as e:
            raise ConfigError(f"{where}: {e}") from e
    return obj


def _jsonable(x: Any) -> Any:
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, np.generic):
        return x.item()
    return x


def to_dict(obj) -> dict:
    """Fully resolved config (defaults filled in) as plain JSON data."""
    return _jsonable(dataclasses.asdict(obj))


def load(path: str, cls):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
    return from_dict(cls, data, path)


@dataclasses.dataclass
class CatalogSpec:
    """Either explicit ``s``/``beta`` arrays or a Zipf generator.

    Generator: ``beta_i = c * i**-zipf_exponent`` where ``c_normalized``
    true means ``c = 1/sum_i i**-zipf_exponent`` and a number sets c
    directly; ``s_rule`` is "inverse" (s = 1/beta) or a constant.
    """

    N: int | None = None
    zipf_exponent: float | None = None
    c_normalized: bool | float = True
    s_rule: str | float = "inverse"
    s: list[float] | None = None
    beta: list[float] | None = None

    def check(self) -> None:
        explicit = self.s is not None or self.beta is not None
        if explicit:
            if self.s is None or self.beta is None or len(self.s) != len(self.beta):
                raise ValueError("explicit catalogs need s and beta of equal length")
            if self.zipf_exponent is not None:
                raise ValueError("give either explicit arrays or zipf_exponent, not both")
            if self.N is not None and self.N != len(self.s):
                raise ValueError("N does not match the explicit arrays")
        else:
            if self.N is None or self.N < 1 or self.zipf_exponent is None:
                raise ValueError("a generated catalog needs N >= 1 and zipf_exponent")
        if isinstance(self.s_rule, str) and self.s_rule != "inverse":
            raise ValueError(f"s_rule must be 'inverse' or a number, got {self.s_rule!r}")

    def build(self) -> Catalog:
        if self.s is not None:
            return Catalog.from_arrays(self.s, self.beta)
        c = None if self.c_normalized is True else float(self.c_normalized)
        if self.c_normalized is False:
            raise ValueError("c_normalized must be true or a number")
        return Catalog.zipf(self.N, self.zipf_exponent, self.s_rule, c)


@dataclasses.dataclass
class UserSpec:
    s: list[float]
    beta: list[float]


@dataclasses.dataclass
class PopulationSpec:
    """``M`` identical users of ``catalog``, or explicit per-user ``users``.

    For explicit users item indices are shared: entry i of every user
    refers to the same data item.
    """

    M: int | None = None
    catalog: CatalogSpec | None = None
    users: list[UserSpec] | None = None

    def check(self) -> None:
        if self.users is not None:
            if self.M is not None or self.catalog is not None:
                raise ValueError("give either users or M with catalog")
            if not self.users:
                raise ValueError("users must be nonempty")
        elif self.M is None or self.M < 1 or self.catalog is None:
            raise ValueError("a homogeneous population needs M >= 1 and a catalog")

    def build(self) -> Population:
        if self.users is not None:
            return Population(np.array([u.s for u in self.users]), np.array([u.beta for u in self.users]))
        return Population.homogeneous_from(self.catalog.build(), self.M)
