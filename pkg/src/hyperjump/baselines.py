"""Reference optimizers sharing the executor and benchmark harness.

HyperBand and Successive Halving reuse the bracket engine with every
model-driven mechanism disabled, so the equivalence between the engine
in plain-halving mode and the HyperBand baseline is a shared-code
guarantee rather than a coincidence.  Random search and full-budget
expected-improvement search evaluate only at the maximum budget.
"""
from __future__ import annotations

import itertools
import math
import time
from typing import Callable

import numpy as np

from .engine import (
    EvalRequest,
    HyperJumpOptimizer,
    Incumbent,
    OptimizerPolicy,
    plan_brackets,
    update_incumbent,
    FULL_OPT_MAX_N,
    REOPT_GROWTH,
)
from .space import SearchSpace, sample_uniform
from .surrogate import Observation, ei_values, fit

__all__ = [
    "hyperband_optimizer",
    "successive_halving_optimizer",
    "RandomSearchOptimizer",
    "BoEiOptimizer",
    "HB_POLICY",
]

# plain halving: never jump, random order, full costs, uniform sampling
HB_POLICY = OptimizerPolicy(p_nj=1.0, no_jump=True, no_ord=True, no_opt=True, no_bw=True)


def hyperband_optimizer(space: SearchSpace, max_budget: float, eta: int = 3,
                        seed: int = 0, loss_transform=None, sink=None) -> HyperJumpOptimizer:
    """Pure HyperBand: the bracket engine with all mechanisms disabled."""
    kwargs = {} if loss_transform is None else {"loss_transform": loss_transform}
    return HyperJumpOptimizer(space, max_budget, eta, policy=HB_POLICY,
                              seed=seed, sink=sink, **kwargs)


def successive_halving_optimizer(space: SearchSpace, max_budget: float, eta: int = 3,
                                 seed: int = 0, loss_transform=None, sink=None) -> HyperJumpOptimizer:
    """Successive Halving: the most exploratory bracket, cycled."""
    plans = [plan_brackets(max_budget, eta)[0]]
    kwargs = {} if loss_transform is None else {"loss_transform": loss_transform}
    return HyperJumpOptimizer(space, max_budget, eta, policy=HB_POLICY,
                              seed=seed, plans=plans, sink=sink, **kwargs)


class RandomSearchOptimizer:
    """Uniform random configurations, always evaluated at full budget."""

    def __init__(self, space: SearchSpace, max_budget: float, seed: int = 0,
                 loss_transform: Callable[[float], float] | None = None, sink=None):
        self.space = space
        self.max_budget = float(max_budget)
        self.loss_transform = loss_transform if loss_transform else (lambda a: 1.0 - a)
        self.sink = sink
        self._rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
        self._ids = itertools.count()
        self._request_ids = itertools.count()
        self.incumbent = Incumbent()
        self.cumulative_overhead = 0.0
        self.n_recommendations = 0

    @property
    def incumbent_loss(self) -> float:
        return self.incumbent.loss

    def next_evaluation(self, now: float) -> EvalRequest:
        config = sample_uniform(self.space, self._rng, self._ids)
        self.n_recommendations += 1
        return EvalRequest(next(self._request_ids), -1, 0, config, self.max_budget)

    def report_result(self, request, accuracy, snapshots, cost, now) -> list:
        obs = Observation(request.config, request.budget, float(accuracy), cost)
        before = self.incumbent
        self.incumbent = update_incumbent(self.incumbent, obs, self.max_budget,
                                          self.loss_transform)
        if self.incumbent is not before and self.sink is not None:
            self.sink({"t": now, "event": "incumbent", "config": request.config.id,
                       "accuracy": self.incumbent.accuracy, "loss": self.incumbent.loss})
        return []

    def report_failure(self, request, now) -> list:
        return []


class BoEiOptimizer:
    """Full-budget Bayesian optimization with expected improvement.

    Proposals are inherently serial: after d+1 uniform full-budget
    evaluations, each step refits the surrogate and evaluates the
    EI-maximizing configuration from a fresh uniform candidate pool.
    """

    def __init__(self, space: SearchSpace, max_budget: float, seed: int = 0,
                 loss_transform: Callable[[float], float] | None = None,
                 pool_size: int = 1000, sink=None):
        self.space = space
        self.max_budget = float(max_budget)
        self.loss_transform = loss_transform if loss_transform else (lambda a: 1.0 - a)
        self.pool_size = pool_size
        self.sink = sink
        streams = np.random.SeedSequence(seed).spawn(2)
        self._rng = np.random.default_rng(streams[0])
        self._fit_rng = np.random.default_rng(streams[1])
        self._ids = itertools.count()
        self._request_ids = itertools.count()
        self._obs: dict = {}
        self._model = None
        self._n_at_opt = 0
        self._in_flight = False
        self.incumbent = Incumbent()
        self.cumulative_overhead = 0.0
        self.n_recommendations = 0

    @property
    def incumbent_loss(self) -> float:
        return self.incumbent.loss

    @property
    def n_initial(self) -> int:
        return self.space.encoded_width + 1

    def next_evaluation(self, now: float) -> EvalRequest | None:
        if self._in_flight:
            return None
        if len(self._obs) < self.n_initial:
            config = sample_uniform(self.space, self._rng, self._ids)
        else:
            t0 = time.perf_counter()
            self._refit(now)
            pool = [sample_uniform(self.space, self._rng, self._ids)
                    for _ in range(self.pool_size)]
            mus, sigmas = self._model.predict_batch(pool, self.max_budget)
            scores = ei_values(mus, sigmas, self.incumbent.accuracy)
            config = pool[int(np.argmax(scores))]
            self.cumulative_overhead += time.perf_counter() - t0
        self._in_flight = True
        self.n_recommendations += 1
        return EvalRequest(next(self._request_ids), -1, 0, config, self.max_budget)

    def _refit(self, now: float) -> None:
        obs = list(self._obs.values())
        n = len(obs)
        if self._model is None:
            self._model = fit(obs, self.space, self.max_budget,
                              n_restarts=8, rng=self._fit_rng)
        elif n <= FULL_OPT_MAX_N or n >= math.ceil(self._n_at_opt * REOPT_GROWTH):
            self._model = fit(obs, self.space, self.max_budget, n_restarts=3,
                              rng=self._fit_rng, params=self._model.params)
        else:
            self._model = fit(obs, self.space, self.max_budget,
                              n_restarts=0, params=self._model.params)
            return
        self._n_at_opt = n
        if self.sink is not None:
            p = self._model.params
            self.sink({"t": now, "event": "model_fit", "n_obs": n,
                       "signal_variance": p.signal_variance,
                       "length_scales": list(p.length_scales),
                       "budget_decay_rate": p.budget_decay_rate,
                       "budget_basis_weights": [list(r) for r in p.budget_basis_weights],
                       "noise_variance": p.noise_variance})

    def report_result(self, request, accuracy, snapshots, cost, now) -> list:
        self._in_flight = False
        obs = Observation(request.config, request.budget, float(accuracy), cost)
        self._obs[(request.config.values, float(request.budget))] = obs
        before = self.incumbent
        self.incumbent = update_incumbent(self.incumbent, obs, self.max_budget,
                                          self.loss_transform)
        if self.incumbent is not before and self.sink is not None:
            self.sink({"t": now, "event": "incumbent", "config": request.config.id,
                       "accuracy": self.incumbent.accuracy, "loss": self.incumbent.loss})
        return []

    def report_failure(self, request, now) -> list:
        self._in_flight = False
        return []
