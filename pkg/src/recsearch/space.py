"""Hyperparameter domains, conditional search spaces and assignment encoding."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Any, Dict, Iterator, Optional, Tuple

import numpy as np

Assignment = Dict[str, Any]


class ConfigError(ValueError):
    """Invalid search-space, graph or experiment configuration."""


@dataclass(frozen=True)
class Choice:
    values: Tuple[Any, ...]

    def __init__(self, values):
        values = tuple(values)
        if not values:
            raise ConfigError("Choice needs at least one value")
        if len(set(map(repr, values))) != len(values):
            raise ConfigError(f"Choice has repeated values: {values}")
        object.__setattr__(self, "values", values)

    @property
    def width(self) -> int:
        return len(self.values) if len(self.values) > 1 else 0

    @property
    def cardinality(self) -> Optional[int]:
        return len(self.values)

    def sample(self, rng: np.random.Generator):
        if len(self.values) == 1:
            return self.values[0]
        return self.values[int(rng.integers(len(self.values)))]

    def contains(self, value) -> bool:
        return value in self.values

    def encode(self, value) -> list[float]:
        if self.width == 0:
            return []
        return [1.0 if value == v else 0.0 for v in self.values]


@dataclass(frozen=True)
class IntRange:
    lo: int
    hi: int
    step: int = 1

    def __post_init__(self):
        if self.hi < self.lo or self.step < 1:
            raise ConfigError(f"empty IntRange({self.lo}, {self.hi}, {self.step})")

    @property
    def n_values(self) -> int:
        return (self.hi - self.lo) // self.step + 1

    @property
    def width(self) -> int:
        return 1 if self.n_values > 1 else 0

    @property
    def cardinality(self) -> Optional[int]:
        return self.n_values

    def sample(self, rng):
        return self.lo + self.step * int(rng.integers(self.n_values))

    def contains(self, value) -> bool:
        return (
            isinstance(value, (int, np.integer))
            and not isinstance(value, bool)
            and self.lo <= value <= self.hi
            and (value - self.lo) % self.step == 0
        )

    def encode(self, value) -> list[float]:
        if self.width == 0:
            return []
        return [(value - self.lo) / (self.hi - self.lo)]


@dataclass(frozen=True)
class FloatRange:
    lo: float
    hi: float
    log: bool = False

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ConfigError(f"empty FloatRange({self.lo}, {self.hi})")
        if self.log and self.lo <= 0:
            raise ConfigError("log-scaled FloatRange needs a positive lower bound")

    width = 1
    cardinality = None

    def sample(self, rng):
        if self.log:
            return float(math.exp(rng.uniform(math.log(self.lo), math.log(self.hi))))
        return float(rng.uniform(self.lo, self.hi))

    def contains(self, value) -> bool:
        return isinstance(value, (int, float)) and not isinstance(value, bool) and self.lo <= value <= self.hi

    def encode(self, value) -> list[float]:
        if self.log:
            lo, hi = math.log(self.lo), math.log(self.hi)
            return [(math.log(value) - lo) / (hi - lo)]
        return [(value - self.lo) / (self.hi - self.lo)]


@dataclass(frozen=True)
class Bool:
    width = 1
    cardinality = 2

    def sample(self, rng):
        return bool(rng.random() < 0.5)

    def contains(self, value) -> bool:
        return isinstance(value, bool)

    def encode(self, value) -> list[float]:
        return [1.0 if value else 0.0]


@dataclass(frozen=True)
class Fixed:
    value: Any

    width = 0
    cardinality = 1

    def sample(self, rng):
        return self.value

    def contains(self, value) -> bool:
        return value == self.value

    def encode(self, value) -> list[float]:
        return []


Domain = Choice | IntRange | FloatRange | Bool | Fixed


def as_domain(value) -> Domain:
    """Wrap a bare value as ``Fixed``; domains pass through."""
    if isinstance(value, (Choice, IntRange, FloatRange, Bool, Fixed)):
        return value
    return Fixed(value)


@dataclass(frozen=True)
class HyperParam:
    name: str
    domain: Domain
    condition: Optional[Tuple[str, Any]] = None

    @property
    def searchable(self) -> bool:
        return self.domain.width > 0


class HyperSpace:
    """Ordered collection of hyperparameter declarations.

    Iteration follows declaration order, which is also the order in which
    conditions are resolved: a conditional hyperparameter's parent is always
    declared before it.
    """

    def __init__(self):
        self._params: dict[str, HyperParam] = {}

    def declare(self, name: str, domain, condition: Optional[Tuple[str, Any]] = None) -> HyperParam:
        if name in self._params:
            raise ConfigError(f"hyperparameter {name!r} declared twice")
        domain = as_domain(domain)
        if condition is not None:
            parent, required = condition
            if parent not in self._params:
                raise ConfigError(f"condition parent {parent!r} of {name!r} is not declared before it")
            if not self._params[parent].domain.contains(required):
                raise ConfigError(f"condition value {required!r} is outside the domain of {parent!r}")
            condition = (parent, required)
        hp = HyperParam(name, domain, condition)
        self._params[name] = hp
        return hp

    def __iter__(self) -> Iterator[HyperParam]:
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name) -> HyperParam:
        return self._params[name]

    @property
    def names(self) -> list[str]:
        return list(self._params)

    @property
    def dimension(self) -> int:
        return sum(hp.domain.width for hp in self)

    def is_active(self, hp: HyperParam, assignment: Assignment) -> bool:
        if hp.condition is None:
            return True
        parent, required = hp.condition
        return parent in assignment and assignment[parent] == required

    def resolve(self, partial: Assignment, rng: np.random.Generator) -> Assignment:
        """Complete ``partial`` top-down: keep values of active names, sample
        missing active ones, drop inactive ones."""
        out: Assignment = {}
        for hp in self:
            if not self.is_active(hp, out):
                continue
            if hp.name in partial:
                out[hp.name] = partial[hp.name]
            else:
                out[hp.name] = hp.domain.sample(rng)
        return out

    def sample(self, rng: np.random.Generator) -> Assignment:
        return self.resolve({}, rng)

    def active_names(self, assignment: Assignment) -> list[str]:
        active: Assignment = {}
        for hp in self:
            if self.is_active(hp, active) and hp.name in assignment:
                active[hp.name] = assignment[hp.name]
        return list(active)

    def validate(self, assignment: Assignment) -> None:
        expected: Assignment = {}
        for hp in self:
            if not self.is_active(hp, expected):
                continue
            if hp.name not in assignment:
                raise ConfigError(f"active hyperparameter {hp.name!r} is missing")
            value = assignment[hp.name]
            if not hp.domain.contains(value):
                raise ConfigError(f"value {value!r} is outside the domain of {hp.name!r}")
            expected[hp.name] = value
        extra = set(assignment) - set(expected)
        if extra:
            raise ConfigError(f"inactive or unknown hyperparameters present: {sorted(extra)}")

    def vectorize(self, assignment: Assignment) -> np.ndarray:
        """Fixed-width real encoding; inactive hyperparameters fill their slots with 0.5."""
        parts: list[float] = []
        for hp in self:
            w = hp.domain.width
            if w == 0:
                continue
            if hp.name in assignment:
                parts.extend(hp.domain.encode(assignment[hp.name]))
            else:
                parts.extend([0.5] * w)
        return np.asarray(parts, dtype=np.float64)

    def size(self) -> Optional[int]:
        """Number of distinct assignments, or None when a float range is present."""

        def count(prefix: Assignment, remaining: list[HyperParam]) -> Optional[int]:
            if not remaining:
                return 1
            hp, rest = remaining[0], remaining[1:]
            if not self.is_active(hp, prefix):
                return count(prefix, rest)
            card = hp.domain.cardinality
            if card is None:
                return None
            if isinstance(hp.domain, Choice):
                values = list(hp.domain.values)
            elif isinstance(hp.domain, IntRange):
                values = [hp.domain.lo + i * hp.domain.step for i in range(card)]
            elif isinstance(hp.domain, Bool):
                values = [False, True]
            else:
                values = [hp.domain.value]
            n = 0
            for v in values:
                c = count({**prefix, hp.name: v}, rest)
                if c is None:
                    return None
                n += c
            return n

        return count({}, list(self))


def canonical_text(assignment: Assignment) -> str:
    """Stable ``name=value`` text, sorted by name, joined with ``;``."""
    return ";".join(f"{k}={assignment[k]!r}" for k in sorted(assignment))


def fingerprint(assignment: Assignment) -> str:
    return hashlib.sha256(canonical_text(assignment).encode()).hexdigest()
