"""Experiment runner and persistence.

An experiment is a benchmark, an optimizer, its knobs, a worker count,
seeds, and stop conditions.  Each seed produces one newline-delimited
event log and one trajectory table (sim_time, incumbent_loss,
wall_overhead_cumulative); a manifest records the resolved experiment
and code version.  Separate commands aggregate trajectories onto a
shared time grid and sweep one parameter across several values.

Flags mirror the experiment-file keys; flags override the file.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import json
import math
import os
from dataclasses import dataclass, field, replace, asdict
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import (
    BoEiOptimizer,
    RandomSearchOptimizer,
    hyperband_optimizer,
    successive_halving_optimizer,
)
from .bench import SyntheticBenchmark, load_tabular, toy_suite
from .engine import HyperJumpOptimizer, OptimizerPolicy, plan_brackets
from .executor import StopCondition, run_parallel
from .space import Categorical, Continuous, Integer, SearchSpace

__all__ = [
    "ExperimentSpec",
    "SpecError",
    "run_experiment",
    "aggregate",
    "sweep",
    "main",
]

OPTIMIZERS = ("hyperjump", "hb", "sh", "rs", "bo-ei")
SEQUENTIAL_ONLY = ("rs", "bo-ei")
SWEEPABLE = {"lambda": "lam", "p_nj": "p_nj", "p_u": "p_u", "eta": "eta",
             "W": "workers", "workers": "workers"}


class SpecError(ValueError):
    """Invalid experiment field; the message names the field."""


@dataclass(frozen=True)
class ExperimentSpec:
    benchmark: str = "synthetic:quad-exp"
    optimizer: str = "hyperjump"
    max_budget: float | None = None
    eta: int = 3
    lam: float = 0.10
    p_nj: float = 0.3
    p_u: float = 0.3
    no_jump: bool = False
    no_ord: bool = False
    no_opt: bool = False
    no_bw: bool = False
    workers: int = 1
    seeds: tuple = (0,)
    time_limit: float | None = None
    max_evals: int | None = None
    out: str = "runs"
    jobs: int = 1
    noise_stddev: float = 0.0
    noise_seed: int = 0
    space: tuple | None = None  # optional dimension declarations for tabular files

    def resolved(self) -> "ExperimentSpec":
        spec = self
        if spec.max_budget is None:
            bench = build_benchmark(replace(spec, max_budget=-1.0), probe=True)
            spec = replace(spec, max_budget=float(bench.max_budget))
        validate_spec(spec)
        return spec


def parse_seeds(raw) -> tuple:
    if isinstance(raw, (list, tuple)):
        return tuple(int(s) for s in raw)
    text = str(raw)
    if "," in text:
        return tuple(int(s) for s in text.split(",") if s.strip() != "")
    return tuple(range(int(text)))


def validate_spec(spec: ExperimentSpec) -> None:
    if spec.optimizer not in OPTIMIZERS:
        raise SpecError(f"optimizer: unknown value {spec.optimizer!r}")
    if not 0.0 <= spec.lam <= 1.0:
        raise SpecError("lambda: must be a fraction in [0, 1] (10% is 0.10)")
    if not 0.0 <= spec.p_nj <= 1.0:
        raise SpecError("p_nj: must lie in [0, 1]")
    if not 0.0 <= spec.p_u <= 1.0:
        raise SpecError("p_u: must lie in [0, 1]")
    if int(spec.eta) != spec.eta or spec.eta < 2:
        raise SpecError("eta: must be an integer >= 2")
    if spec.workers < 1:
        raise SpecError("workers: must be at least 1")
    if spec.optimizer in SEQUENTIAL_ONLY and spec.workers != 1:
        raise SpecError(f"workers: optimizer {spec.optimizer!r} is sequential-only")
    if spec.time_limit is None and spec.max_evals is None:
        raise SpecError("stop condition: set time_limit and/or max_evals")
    if spec.time_limit is not None and spec.time_limit <= 0:
        raise SpecError("time_limit: must be positive")
    if spec.max_evals is not None and spec.max_evals < 1:
        raise SpecError("max_evals: must be at least 1")
    if not spec.seeds:
        raise SpecError("seeds: at least one seed is required")
    if spec.noise_stddev < 0:
        raise SpecError("noise_stddev: must be non-negative")
    if spec.optimizer in ("hyperjump", "hb", "sh") and spec.max_budget is not None:
        if spec.max_budget < spec.eta:
            raise SpecError("max_budget: must be at least eta")


def _space_from_decls(decls) -> SearchSpace:
    dims = []
    for d in decls:
        kind = d["kind"]
        if kind == "continuous":
            dims.append(Continuous(d["name"], float(d["domain"][0]), float(d["domain"][1])))
        elif kind == "integer":
            dims.append(Integer(d["name"], int(d["domain"][0]), int(d["domain"][1])))
        elif kind == "categorical":
            dims.append(Categorical(d["name"], tuple(d["domain"])))
        else:
            raise SpecError(f"space: unknown dimension kind {kind!r}")
    return SearchSpace(tuple(dims))


def build_benchmark(spec: ExperimentSpec, probe: bool = False):
    """Instantiate the benchmark named by the selector string."""
    selector = spec.benchmark
    if selector.startswith("synthetic:"):
        name = selector.split(":", 1)[1]
        max_budget = spec.max_budget if spec.max_budget and spec.max_budget > 0 else 81.0
        suite = toy_suite(max_budget, int(spec.eta), spec.noise_stddev, spec.noise_seed)
        if name not in suite:
            raise SpecError(f"benchmark: unknown synthetic benchmark {name!r}")
        return suite[name]
    if selector.startswith("tabular:"):
        path = selector.split(":", 1)[1]
        declared = _space_from_decls(spec.space) if spec.space else None
        bench = load_tabular(path, name=selector, space=declared)
        if not probe and spec.optimizer in ("hyperjump", "hb", "sh"):
            budgets = {
                b for plan in plan_brackets(spec.max_budget or bench.max_budget, int(spec.eta))
                for b in plan.budgets
            }
            missing = sorted(b for b in budgets if b not in bench.rungs)
            if missing:
                raise SpecError(f"benchmark: table lacks bracket rungs {missing}")
        return bench
    raise SpecError(f"benchmark: selector must be synthetic:<name> or tabular:<path>")


def build_scheduler(spec: ExperimentSpec, benchmark, seed: int, sink=None):
    lt = benchmark.loss_transform
    if spec.optimizer == "hyperjump":
        policy = OptimizerPolicy(spec.lam, spec.p_nj, spec.p_u, spec.no_jump,
                                 spec.no_ord, spec.no_opt, spec.no_bw)
        return HyperJumpOptimizer(benchmark.space, spec.max_budget, int(spec.eta),
                                  policy=policy, seed=seed, loss_transform=lt, sink=sink)
    if spec.optimizer == "hb":
        return hyperband_optimizer(benchmark.space, spec.max_budget, int(spec.eta),
                                   seed=seed, loss_transform=lt, sink=sink)
    if spec.optimizer == "sh":
        return successive_halving_optimizer(benchmark.space, spec.max_budget,
                                            int(spec.eta), seed=seed,
                                            loss_transform=lt, sink=sink)
    if spec.optimizer == "rs":
        return RandomSearchOptimizer(benchmark.space, spec.max_budget, seed=seed,
                                     loss_transform=lt, sink=sink)
    if spec.optimizer == "bo-ei":
        return BoEiOptimizer(benchmark.space, spec.max_budget, seed=seed,
                             loss_transform=lt, sink=sink)
    raise SpecError(f"optimizer: unknown value {spec.optimizer!r}")


def run_one_seed(spec_dict: dict, seed: int) -> dict:
    """Run a single seed of an experiment and write its artifacts."""
    spec = ExperimentSpec(**spec_dict)
    benchmark = build_benchmark(spec)
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    events_path = out / f"events_{seed}.ndjson"
    traj_path = out / f"trajectory_{seed}.csv"
    with open(events_path, "w", encoding="utf-8", newline="\n") as fh:
        def sink(record: dict) -> None:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        scheduler = build_scheduler(spec, benchmark, seed, sink)
        stop = StopCondition(spec.time_limit, spec.max_evals)
        result = run_parallel(scheduler, benchmark, spec.workers, stop, sink)
    with open(traj_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("sim_time,incumbent_loss,wall_overhead_cumulative\n")
        for t, loss, overhead in result.trajectory:
            fh.write(f"{t!r},{loss!r},{overhead:.6f}\n")
    return {
        "seed": seed,
        "final_time": result.final_time,
        "final_loss": result.final_loss,
        "started": result.started,
        "completed": result.completed,
        "cancelled": result.cancelled,
        "failed": result.failed,
        "mean_recommendation_overhead": (
            scheduler.cumulative_overhead / max(1, scheduler.n_recommendations)
        ),
    }


def run_experiment(spec: ExperimentSpec) -> Path:
    """Run every seed; writes per-seed logs/trajectories and one manifest."""
    spec = spec.resolved()
    build_benchmark(spec)  # fail fast on benchmark problems
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    spec_dict = asdict(spec)
    summaries = []
    if spec.jobs > 1 and len(spec.seeds) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            futures = [pool.submit(run_one_seed, spec_dict, s) for s in spec.seeds]
            summaries = [f.result() for f in futures]
    else:
        summaries = [run_one_seed(spec_dict, s) for s in spec.seeds]
    summaries.sort(key=lambda s: s["seed"])
    manifest = {
        "version": __version__,
        "spec": spec_dict,
        "seeds": list(spec.seeds),
        "runs": summaries,
    }
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return out


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

@dataclass
class AggregateResult:
    times: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    median: np.ndarray
    n_runs: int
    targets: dict = field(default_factory=dict)  # target -> per-run times (inf = unreached)


def read_trajectory(path) -> tuple[np.ndarray, np.ndarray]:
    times, losses = [], []
    with open(path, "r", encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            cells = line.strip().split(",")
            if len(cells) >= 2:
                times.append(float(cells[0]))
                losses.append(float(cells[1]))
    return np.asarray(times), np.asarray(losses)


def step_values(times: np.ndarray, losses: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Step-function (hold last) interpolation of a trajectory onto a grid."""
    idx = np.searchsorted(times, grid, side="right") - 1
    out = np.where(idx >= 0, losses[np.maximum(idx, 0)], 1.0)
    return out


def time_to_target(times: np.ndarray, losses: np.ndarray, target: float) -> float:
    hit = np.nonzero(losses <= target)[0]
    return float(times[hit[0]]) if len(hit) else math.inf


def aggregate(run_dir, targets=()) -> AggregateResult:
    """Align trajectories on a shared grid and summarize across runs."""
    run_dir = Path(run_dir)
    paths = sorted(run_dir.glob("trajectory_*.csv"))
    if not paths:
        raise FileNotFoundError(f"no trajectory files in {run_dir}")
    runs = [read_trajectory(p) for p in paths]
    grid = np.unique(np.concatenate([t for t, _ in runs]))
    matrix = np.vstack([step_values(t, l, grid) for t, l in runs])
    n = len(runs)
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0, ddof=1) if n > 1 else np.zeros_like(mean)
    median = np.median(matrix, axis=0)
    result = AggregateResult(grid, mean, std, median, n)
    for target in targets:
        result.targets[target] = [time_to_target(t, l, target) for t, l in runs]
    with open(run_dir / "summary.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("sim_time,mean_loss,std_loss,median_loss\n")
        for i, t in enumerate(grid):
            fh.write(f"{t!r},{mean[i]!r},{std[i]!r},{median[i]!r}\n")
    if targets:
        with open(run_dir / "targets.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("target,n_runs,n_reached,median_time\n")
            for target, per_run in result.targets.items():
                reached = [t for t in per_run if math.isfinite(t)]
                med = float(np.median(per_run))
                med_text = repr(med) if math.isfinite(med) else "unreached"
                fh.write(f"{target!r},{n},{len(reached)},{med_text}\n")
    return result


def sweep(spec: ExperimentSpec, parameter: str, values) -> list[Path]:
    """Run one experiment per value of a swept parameter."""
    if parameter not in SWEEPABLE:
        raise SpecError(f"sweep parameter: unknown parameter {parameter!r}")
    field_name = SWEEPABLE[parameter]
    out_dirs = []
    for value in values:
        cast = int(value) if field_name in ("eta", "workers") else float(value)
        sub = replace(spec, **{field_name: cast},
                      out=str(Path(spec.out) / f"{parameter}={value}"))
        out_dirs.append(run_experiment(sub))
    return out_dirs


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment file (JSON); flags override it")
    p.add_argument("--benchmark")
    p.add_argument("--optimizer", choices=OPTIMIZERS)
    p.add_argument("--max-budget", type=float, dest="max_budget")
    p.add_argument("--eta", type=int)
    p.add_argument("--lambda", type=float, dest="lam")
    p.add_argument("--p-nj", type=float, dest="p_nj")
    p.add_argument("--p-u", type=float, dest="p_u")
    p.add_argument("--workers", type=int)
    p.add_argument("--seeds", help="count (e.g. 30) or comma list (e.g. 0,3,7)")
    p.add_argument("--time-limit", type=float, dest="time_limit")
    p.add_argument("--max-evals", type=int, dest="max_evals")
    p.add_argument("--no-jump", action="store_true", dest="no_jump", default=None)
    p.add_argument("--no-ord", action="store_true", dest="no_ord", default=None)
    p.add_argument("--no-opt", action="store_true", dest="no_opt", default=None)
    p.add_argument("--no-bw", action="store_true", dest="no_bw", default=None)
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, help="seeds to run in parallel processes")
    p.add_argument("--noise-stddev", type=float, dest="noise_stddev")
    p.add_argument("--noise-seed", type=int, dest="noise_seed")


def spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    data: dict = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            file_data = json.load(fh)
        if "lambda" in file_data:
            file_data["lam"] = file_data.pop("lambda")
        if "space" in file_data and file_data["space"] is not None:
            file_data["space"] = tuple(
                {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
                for d in file_data["space"]
            )
        data.update(file_data)
    for key in ("benchmark", "optimizer", "max_budget", "eta", "lam", "p_nj", "p_u",
                "workers", "seeds", "time_limit", "max_evals", "no_jump", "no_ord",
                "no_opt", "no_bw", "out", "jobs", "noise_stddev", "noise_seed"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if "seeds" in data:
        data["seeds"] = parse_seeds(data["seeds"])
    unknown = set(data) - set(ExperimentSpec.__dataclass_fields__)
    if unknown:
        raise SpecError(f"experiment file: unknown fields {sorted(unknown)}")
    return ExperimentSpec(**data)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hyperjump",
        description="Multi-fidelity hyper-parameter optimization harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    _add_run_flags(p_run)

    p_agg = sub.add_parser("aggregate", help="summarize a run directory")
    p_agg.add_argument("--dir", required=True)
    p_agg.add_argument("--target", type=float, action="append", default=[],
                       help="loss target for time-to-target reporting (repeatable)")

    p_sweep = sub.add_parser("sweep", help="run one experiment per parameter value")
    p_sweep.add_argument("--param", required=True)
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    _add_run_flags(p_sweep)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            out = run_experiment(spec_from_args(args))
            print(f"wrote {out}")
        elif args.command == "aggregate":
            result = aggregate(args.dir, tuple(args.target))
            print(f"aggregated {result.n_runs} runs -> {Path(args.dir) / 'summary.csv'}")
            for target, per_run in result.targets.items():
                reached = [t for t in per_run if math.isfinite(t)]
                med = np.median(per_run) if per_run else math.inf
                med_text = f"{med:g}" if math.isfinite(med) else "unreached"
                print(f"target {target:g}: reached {len(reached)}/{result.n_runs}, "
                      f"median time {med_text}")
        elif args.command == "sweep":
            values = [v for v in str(args.values).split(",") if v != ""]
            dirs = sweep(spec_from_args(args), args.param, values)
            for d in dirs:
                print(f"wrote {d}")
    except (SpecError, FileNotFoundError) as err:
        parser.exit(2, f"error: {err}\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
