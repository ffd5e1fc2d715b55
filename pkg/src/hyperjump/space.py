"""Search-space definitions, uniform sampling, and numeric encoding.

A search space is an ordered list of dimensions (continuous, integer, or
categorical).  Configurations are points in that space; they are encoded
into a fixed-layout numeric vector (scaled hyper-parameters, one-hot
categoricals, normalized budget last) for consumption by the surrogate.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np

__all__ = [
    "Continuous",
    "Integer",
    "Categorical",
    "Dimension",
    "SearchSpace",
    "Configuration",
    "sample_uniform",
    "encode",
]


@dataclass(frozen=True)
class Continuous:
    name: str
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"dimension {self.name!r}: lower must be < upper")

    @property
    def width(self) -> int:
        return 1

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(self.lower, self.upper))

    def contains(self, value) -> bool:
        return isinstance(value, (int, float)) and self.lower <= value <= self.upper

    def encode(self, value) -> list[float]:
        return [(float(value) - self.lower) / (self.upper - self.lower)]


@dataclass(frozen=True)
class Integer:
    name: str
    lower: int
    upper: int

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"dimension {self.name!r}: lower must be < upper")

    @property
    def width(self) -> int:
        return 1

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.lower, self.upper + 1))

    def contains(self, value) -> bool:
        return isinstance(value, (int, np.integer)) and self.lower <= value <= self.upper

    def encode(self, value) -> list[float]:
        return [(float(value) - self.lower) / (self.upper - self.lower)]


@dataclass(frozen=True)
class Categorical:
    name: str
    levels: tuple

    def __post_init__(self):
        levels = tuple(self.levels)
        object.__setattr__(self, "levels", levels)
        if len(levels) < 1:
            raise ValueError(f"dimension {self.name!r}: needs at least one level")
        if len(set(levels)) != len(levels):
            raise ValueError(f"dimension {self.name!r}: levels must be distinct")

    @property
    def width(self) -> int:
        return len(self.levels)

    def sample(self, rng: np.random.Generator):
        return self.levels[int(rng.integers(len(self.levels)))]

    def contains(self, value) -> bool:
        return value in self.levels

    def encode(self, value) -> list[float]:
        out = [0.0] * len(self.levels)
        out[self.levels.index(value)] = 1.0
        return out


Dimension = Union[Continuous, Integer, Categorical]


@dataclass(frozen=True)
class SearchSpace:
    """Ordered, immutable list of dimensions.

    Dimension order is fixed and determines the encoding layout.
    """

    dimensions: tuple

    def __post_init__(self):
        dims = tuple(self.dimensions)
        object.__setattr__(self, "dimensions", dims)
        if not dims:
            raise ValueError("search space needs at least one dimension")
        names = [d.name for d in dims]
        if len(set(names)) != len(names):
            raise ValueError("dimension names must be unique")

    @property
    def encoded_width(self) -> int:
        """Number of encoded hyper-parameter coordinates (budget excluded)."""
        return sum(d.width for d in self.dimensions)

    def validate(self, values: Sequence) -> None:
        if len(values) != len(self.dimensions):
            raise ValueError(
                f"expected {len(self.dimensions)} values, got {len(values)}"
            )
        for dim, v in zip(self.dimensions, values):
            if not dim.contains(v):
                raise ValueError(f"value {v!r} outside dimension {dim.name!r}")

    def sample_values(self, rng: np.random.Generator) -> tuple:
        return tuple(d.sample(rng) for d in self.dimensions)

    def encode_values(self, values: Sequence) -> np.ndarray:
        coords: list[float] = []
        for dim, v in zip(self.dimensions, values):
            coords.extend(dim.encode(v))
        return np.asarray(coords, dtype=float)


_GLOBAL_IDS = itertools.count()


@dataclass(frozen=True)
class Configuration:
    """A point in a search space.

    Equality and hashing are value-based: two configurations with equal
    values compare equal regardless of id.  The id is a creation-time
    tag used for logging and deterministic tie-breaking.
    """

    values: tuple
    id: int = field(default=-1, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))

    def __hash__(self):
        return hash(self.values)


def sample_uniform(
    space: SearchSpace,
    rng: np.random.Generator,
    ids: Iterator[int] | None = None,
) -> Configuration:
    """Draw one configuration, each dimension independent and uniform.

    Deterministic given the rng state.  `ids` supplies creation ids;
    callers that need run-scoped ids (engine, baselines) pass their own
    counter, otherwise a process-wide counter is used.
    """
    values = space.sample_values(rng)
    return Configuration(values, next(ids if ids is not None else _GLOBAL_IDS))


def encode(
    config: Configuration,
    space: SearchSpace,
    budget: float,
    max_budget: float,
) -> np.ndarray:
    """Encode (configuration, budget) for the surrogate.

    Continuous/integer dimensions are min-max scaled to [0, 1],
    categoricals one-hot encoded, and the final coordinate is the
    normalized budget in (0, 1].
    """
    if not 0 < budget <= max_budget:
        raise ValueError(f"budget {budget} outside (0, {max_budget}]")
    coords = space.encode_values(config.values)
    return np.append(coords, budget / max_budget)
