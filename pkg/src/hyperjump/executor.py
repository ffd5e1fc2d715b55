"""Deterministic discrete-event execution of optimizer schedules.

The simulation owns a virtual clock.  Starting an evaluation resolves
its result and duration immediately (the benchmark is a lookup or a
closed form); completion events are processed in (time, worker id)
order, so observation ingestion order is reproducible.  Worker pools
are simulated: at most W evaluations overlap, idle workers pull the
next scheduled evaluation, and a jump decision cancels the in-flight
evaluations of the stage it abandons, charging only the simulated time
they had consumed.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from typing import Callable

from .bench import evaluate
from .engine import EvalRequest

__all__ = ["StopCondition", "RunResult", "run_parallel", "run_sequential"]


@dataclass(frozen=True)
class StopCondition:
    """Simulated-time and/or evaluation-count limits; at least one is required."""

    time_limit: float | None = None
    max_evals: int | None = None

    def __post_init__(self):
        if self.time_limit is None and self.max_evals is None:
            raise ValueError("at least one stop condition is required")
        if self.time_limit is not None and self.time_limit <= 0:
            raise ValueError("time limit must be positive")
        if self.max_evals is not None and self.max_evals < 1:
            raise ValueError("evaluation limit must be at least 1")


@dataclass
class RunResult:
    """Trajectory rows are (sim_time, incumbent_loss, wall_overhead_cumulative)."""

    trajectory: list
    final_time: float
    started: int
    completed: int
    cancelled: int
    failed: int = 0

    @property
    def final_loss(self) -> float:
        return self.trajectory[-1][1]


def run_parallel(
    scheduler,
    benchmark,
    workers: int,
    stop: StopCondition,
    sink: Callable[[dict], None] | None = None,
) -> RunResult:
    """Drive a scheduler against a benchmark on a W-worker simulated pool."""
    if workers < 1:
        raise ValueError("worker pool needs at least one worker")
    emit = sink if sink is not None else (lambda record: None)
    now = 0.0
    heap: list = []  # (completion time, worker, seq, request, result)
    idle = list(range(workers))
    heapq.heapify(idle)
    seq = itertools.count()
    start_info: dict[int, tuple[float, int]] = {}  # request id -> (start, worker)
    cancelled_ids: set[int] = set()
    started = completed = cancelled = failed = 0
    trajectory = [(0.0, scheduler.incumbent_loss, 0.0)]

    def may_start() -> bool:
        if stop.time_limit is not None and now >= stop.time_limit:
            return False
        if stop.max_evals is not None and started >= stop.max_evals:
            return False
        return True

    def handle_cancels(cancels) -> None:
        nonlocal cancelled
        for req in cancels:
            if req.request_id in cancelled_ids or req.request_id not in start_info:
                continue
            cancelled_ids.add(req.request_id)
            t_start, w = start_info.pop(req.request_id)
            cancelled += 1
            emit({"t": now, "event": "eval_cancelled", "bracket": req.bracket,
                  "stage": req.stage, "config": req.config.id,
                  "budget": req.budget, "cost": now - t_start})
            heapq.heappush(idle, w)

    def note_incumbent() -> None:
        loss = scheduler.incumbent_loss
        if loss < trajectory[-1][1]:
            trajectory.append((now, loss, scheduler.cumulative_overhead))

    while True:
        while idle and may_start():
            request = scheduler.next_evaluation(now)
            if request is None:
                break
            worker = heapq.heappop(idle)
            started += 1
            emit({"t": now, "event": "eval_start", "bracket": request.bracket,
                  "stage": request.stage, "config": request.config.id,
                  "budget": request.budget, "resume_from": request.resume_from})
            try:
                result = evaluate(benchmark, request.config, request.budget,
                                  request.resume_from)
            except Exception as err:
                # failed evaluation: logged, ranked as worst, kept out of the model
                failed += 1
                completed += 1
                emit({"t": now, "event": "eval_end", "bracket": request.bracket,
                      "stage": request.stage, "config": request.config.id,
                      "budget": request.budget, "failed": True,
                      "error": str(err), "cost": 0.0})
                heapq.heappush(idle, worker)
                handle_cancels(scheduler.report_failure(request, now))
                continue
            start_info[request.request_id] = (now, worker)
            heapq.heappush(heap, (now + result.incremental_cost, worker,
                                  next(seq), request, result))
        if not heap:
            break
        t, worker, _, request, result = heapq.heappop(heap)
        if request.request_id in cancelled_ids:
            continue
        now = t
        start_info.pop(request.request_id, None)
        completed += 1
        emit({"t": now, "event": "eval_end", "bracket": request.bracket,
              "stage": request.stage, "config": request.config.id,
              "budget": request.budget, "accuracy": result.accuracy,
              "cost": result.incremental_cost})
        cancels = scheduler.report_result(
            request, result.accuracy, result.snapshots, result.incremental_cost, now
        )
        heapq.heappush(idle, worker)
        handle_cancels(cancels)
        note_incumbent()

    return RunResult(trajectory, now, started, completed, cancelled, failed)


def run_sequential(scheduler, benchmark, stop: StopCondition,
                   sink: Callable[[dict], None] | None = None) -> RunResult:
    """Strictly serialized execution: one evaluation at a time."""
    return run_parallel(scheduler, benchmark, 1, stop, sink)
