"""Benchmarks: budgeted objective functions under a simulated cost model.

Two families are provided.  Synthetic benchmarks compute accuracy as a
saturating-exponential curve in the normalized budget with a
configuration-dependent plateau and rate; any measurement noise is
drawn deterministically per (configuration, budget) so every optimizer
faces the same landscape for a given benchmark seed.  Tabular
benchmarks replay a dense lookup table of (configuration, budget rung)
pairs loaded from a plain-text delimited file.

Evaluations support pause-resume cost accounting (only the incremental
cost between the resume point and the requested budget is charged) and
report opportunistic snapshots: the accuracies at every budget rung
strictly between the resume point and the requested budget.
"""
from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .space import Categorical, Configuration, Integer, SearchSpace

__all__ = [
    "EvaluationResult",
    "Benchmark",
    "SyntheticBenchmark",
    "TabularBenchmark",
    "TabularFormatError",
    "evaluate",
    "load_tabular",
    "save_tabular",
    "toy_suite",
]


@dataclass(frozen=True)
class EvaluationResult:
    accuracy: float
    incremental_cost: float
    snapshots: tuple = ()  # (budget, accuracy) pairs, ascending, below the requested budget

    def __post_init__(self):
        if self.incremental_cost < 0:
            raise ValueError("cost must be non-negative")
        budgets = [b for b, _ in self.snapshots]
        if budgets != sorted(budgets) or len(set(budgets)) != len(budgets):
            raise ValueError("snapshot budgets must be strictly ascending")


def _rung_ladder(max_budget: float, eta: int) -> tuple[float, ...]:
    rungs = []
    b = float(max_budget)
    while b >= 1.0 or math.isclose(b, 1.0):
        rungs.append(b)
        b /= eta
    return tuple(sorted(rungs))


def _noise_draw(values: tuple, budget: float, seed: int, stddev: float) -> float:
    if stddev <= 0:
        return 0.0
    key = hashlib.sha256(repr((seed, values, float(budget))).encode()).digest()
    sub = np.random.default_rng(int.from_bytes(key[:8], "little"))
    return float(sub.normal(0.0, stddev))


class SyntheticBenchmark:
    """accuracy(c, b) = a_max(c) * (1 - exp(-kappa(c) * b / R)) + noise.

    ``a_max`` is the asymptote; the noiseless accuracy is non-decreasing
    in budget and clamped to [0, 1].  ``cost_fn(values, budget)`` must be
    non-decreasing in budget.
    """

    def __init__(
        self,
        name: str,
        space: SearchSpace,
        a_max: Callable[[tuple], float],
        kappa: Callable[[tuple], float],
        cost_fn: Callable[[tuple, float], float],
        max_budget: float,
        eta: int = 3,
        noise_stddev: float = 0.0,
        noise_seed: int = 0,
    ):
        self.name = name
        self.space = space
        self.a_max = a_max
        self.kappa = kappa
        self.cost_fn = cost_fn
        self.max_budget = float(max_budget)
        self.noise_stddev = float(noise_stddev)
        self.noise_seed = noise_seed
        self.rungs = _rung_ladder(max_budget, eta)

    def loss_transform(self, accuracy: float) -> float:
        return 1.0 - accuracy

    def accuracy_at(self, values: tuple, budget: float) -> float:
        k = self.kappa(values)
        if k <= 0:
            raise ValueError("rate function must be strictly positive")
        base = self.a_max(values) * (1.0 - math.exp(-k * budget / self.max_budget))
        base += _noise_draw(values, budget, self.noise_seed, self.noise_stddev)
        return min(max(base, 0.0), 1.0)

    def cumulative_cost(self, values: tuple, budget: float) -> float:
        return float(self.cost_fn(values, budget))

    def grid(self):
        """All configurations of an enumerable (integer/categorical) space."""
        axes = []
        for dim in self.space.dimensions:
            if isinstance(dim, Integer):
                axes.append(range(dim.lower, dim.upper + 1))
            elif isinstance(dim, Categorical):
                axes.append(dim.levels)
            else:
                raise ValueError("continuous dimensions are not grid-enumerable")
        return itertools.product(*axes)

    def optimum(self) -> tuple[tuple, float]:
        """Grid argmax of full-budget accuracy (exhaustive enumeration)."""
        best_vals, best_acc = None, -math.inf
        for values in self.grid():
            acc = self.accuracy_at(tuple(values), self.max_budget)
            if acc > best_acc:
                best_vals, best_acc = tuple(values), acc
        return best_vals, best_acc


class TabularFormatError(ValueError):
    pass


class TabularBenchmark:
    """Dense lookup of (configuration values, budget rung) -> (accuracy, cost).

    ``table`` maps (values tuple, rung) to (accuracy, cumulative_cost);
    every declared configuration must cover every rung.
    """

    def __init__(self, name: str, space: SearchSpace, rungs: Sequence[float], table: dict):
        self.name = name
        self.space = space
        self.rungs = tuple(sorted(rungs))
        self.table = dict(table)
        self.max_budget = self.rungs[-1]
        configs = sorted({vals for vals, _ in self.table}, key=repr)
        for vals in configs:
            for rung in self.rungs:
                if (vals, rung) not in self.table:
                    raise TabularFormatError(
                        f"sparse table: configuration {vals!r} missing rung {rung!r}"
                    )
        self.configurations = tuple(configs)

    def loss_transform(self, accuracy: float) -> float:
        return 1.0 - accuracy

    def accuracy_at(self, values: tuple, budget: float) -> float:
        return self.table[self._key(values, budget)][0]

    def cumulative_cost(self, values: tuple, budget: float) -> float:
        if budget == 0:
            return 0.0
        return self.table[self._key(values, budget)][1]

    def _key(self, values: tuple, budget: float):
        key = (tuple(values), float(budget))
        if key not in self.table:
            raise KeyError(f"unknown configuration or rung: {key!r}")
        return key

    def grid(self):
        return iter(self.configurations)

    def optimum(self) -> tuple[tuple, float]:
        best_vals, best_acc = None, -math.inf
        for values in self.configurations:
            acc = self.accuracy_at(values, self.max_budget)
            if acc > best_acc:
                best_vals, best_acc = values, acc
        return best_vals, best_acc


Benchmark = SyntheticBenchmark  # documentation alias; both classes share the surface


def evaluate(
    benchmark,
    config: Configuration,
    budget: float,
    resume_from: float | None = None,
) -> EvaluationResult:
    """Measure a configuration at a budget, optionally resuming.

    The incremental cost is cost(c, budget) - cost(c, resume_from or 0);
    snapshots cover every benchmark rung strictly inside
    (resume_from, budget).
    """
    if isinstance(benchmark, TabularBenchmark):
        if float(budget) not in benchmark.rungs:
            raise KeyError(f"unknown configuration or rung: budget {budget!r}")
    elif not 0 < budget <= benchmark.max_budget:
        raise ValueError(f"budget {budget} outside (0, {benchmark.max_budget}]")
    if resume_from is not None and not resume_from < budget:
        raise ValueError("resume point must lie below the requested budget")
    values = config.values
    start = resume_from if resume_from is not None else 0.0
    accuracy = benchmark.accuracy_at(values, budget)
    cost = benchmark.cumulative_cost(values, budget) - (
        benchmark.cumulative_cost(values, start) if start > 0 else 0.0
    )
    snapshots = tuple(
        (rung, benchmark.accuracy_at(values, rung))
        for rung in benchmark.rungs
        if start < rung < budget
    )
    return EvaluationResult(accuracy, cost, snapshots)


# ---------------------------------------------------------------------------
# tabular file format: header then rows
#   config_id,<one column per dimension>,budget,accuracy,cumulative_cost
# UTF-8, newline-terminated, '.' decimal separator.
# ---------------------------------------------------------------------------

def _parse_cell(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def load_tabular(path, name: str | None = None, space: SearchSpace | None = None) -> TabularBenchmark:
    """Load and validate a dense tabular benchmark file."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        cols = [c.strip() for c in header.split(",")]
        if len(cols) < 4 or cols[0] != "config_id" or cols[-3:] != ["budget", "accuracy", "cumulative_cost"]:
            raise TabularFormatError(
                "header must be: config_id,<dimensions...>,budget,accuracy,cumulative_cost"
            )
        dim_names = cols[1:-3]
        if not dim_names:
            raise TabularFormatError("table declares no dimensions")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cells = [c.strip() for c in line.split(",")]
            if len(cells) != len(cols):
                raise TabularFormatError(f"line {lineno}: expected {len(cols)} fields, got {len(cells)}")
            try:
                budget = float(cells[-3])
                accuracy = float(cells[-2])
                cost = float(cells[-1])
            except ValueError as err:
                raise TabularFormatError(f"line {lineno}: {err}") from None
            values = tuple(_parse_cell(c) for c in cells[1:-3])
            rows.append((lineno, cells[0], values, budget, accuracy, cost))
    if not rows:
        raise TabularFormatError("table has no data rows")

    table: dict = {}
    ids: dict = {}
    for lineno, cid, values, budget, accuracy, cost in rows:
        key = (values, budget)
        if key in table:
            raise TabularFormatError(f"line {lineno}: duplicate key {key!r}")
        if values in ids and ids[values] != cid:
            raise TabularFormatError(
                f"line {lineno}: configuration {values!r} listed under two ids"
            )
        ids[values] = cid
        table[key] = (accuracy, cost)
    rungs = sorted({b for _, b in table})

    if space is None:
        space = _infer_space(dim_names, [vals for vals, _ in table])
    else:
        if len(space.dimensions) != len(dim_names):
            raise TabularFormatError("declared space does not match table dimensions")
        for vals in {v for v, _ in table}:
            space.validate(vals)
    bench_name = name if name is not None else str(path)
    return TabularBenchmark(bench_name, space, rungs, table)


def _infer_space(dim_names: Sequence[str], all_values) -> SearchSpace:
    dims = []
    for i, dim_name in enumerate(dim_names):
        levels = sorted({vals[i] for vals in all_values}, key=lambda v: (str(type(v)), v))
        dims.append(Categorical(dim_name, tuple(levels)))
    return SearchSpace(tuple(dims))


def save_tabular(path, benchmark: TabularBenchmark) -> None:
    """Write a tabular benchmark back to its file format."""
    dim_names = [d.name for d in benchmark.space.dimensions]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["config_id", *dim_names, "budget", "accuracy", "cumulative_cost"]) + "\n")
        for idx, values in enumerate(benchmark.configurations):
            for rung in benchmark.rungs:
                acc, cost = benchmark.table[(values, rung)]
                cells = [f"c{idx}", *[repr(v) for v in values], repr(rung), repr(acc), repr(cost)]
                fh.write(",".join(cells) + "\n")


# ---------------------------------------------------------------------------
# shipped toy benchmarks (desk-scale, grid-enumerable optima)
# ---------------------------------------------------------------------------

def toy_suite(max_budget: float = 81.0, eta: int = 3, noise_stddev: float = 0.0,
              noise_seed: int = 0) -> dict[str, SyntheticBenchmark]:
    """Named synthetic benchmarks with exhaustively enumerable optima.

    quad-exp   two-dimensional quadratic bowl (peak plateau 0.95) with a
               mildly budget-sensitive rate; rankings are close to
               budget-consistent.
    deceptive  one-dimensional; the accuracy ranking at the smallest
               rung is anti-correlated with the full-budget ranking.
    plateau    a 3x3 block of configurations ties at the optimum,
               so many near-optimal survivors exist at full budget.
    """
    proportional = lambda values, budget: float(budget)

    quad_space = SearchSpace((Integer("x", 0, 12), Integer("y", 0, 12)))

    def quad_amax(v):
        return 0.95 - 0.7 * ((v[0] - 8) ** 2 + (v[1] - 4) ** 2) / 128.0

    def quad_kappa(v):
        return 12.0 + v[1] / 12.0

    dec_space = SearchSpace((Integer("x", 0, 24),))

    # plateau rises with x while the rate falls just enough that the
    # low-rung ranking is exactly inverted (Spearman -1 between the
    # smallest rung and full budget); truth emerges from the middle rungs
    def dec_amax(v):
        return 0.85 + 0.1 * v[0] / 24.0

    def dec_kappa(v):
        return 4.8 - 0.8 * v[0] / 24.0

    plat_space = SearchSpace((Integer("x", 0, 10), Integer("y", 0, 10)))

    def plat_amax(v):
        ring = max(abs(v[0] - 5), abs(v[1] - 5))
        return 0.9 - 0.5 * max(0, ring - 1) / 4.0

    return {
        "quad-exp": SyntheticBenchmark(
            "quad-exp", quad_space, quad_amax, quad_kappa, proportional,
            max_budget, eta, noise_stddev, noise_seed,
        ),
        "deceptive": SyntheticBenchmark(
            "deceptive", dec_space, dec_amax, dec_kappa, proportional,
            max_budget, eta, noise_stddev, noise_seed,
        ),
        "plateau": SyntheticBenchmark(
            "plateau", plat_space, plat_amax, lambda v: 3.0, proportional,
            max_budget, eta, noise_stddev, noise_seed,
        ),
    }
