"""Bracket-based multi-fidelity optimizer with model-driven jump analysis.

The optimizer runs successive-halving brackets.  Within a stage it
re-evaluates the jump risk after every ingested result and, when the
accumulated relative expected accuracy reduction stays within the
threshold, skips ahead by promoting the chosen set directly.  Ordering
of evaluations inside a stage favours the configuration whose simulated
result enables the longest safe jump.  New brackets are seeded by
expected improvement at full budget, with a uniformly random fraction
preserved; a per-bracket coin can force plain successive-halving
behaviour.  All of these mechanisms can be disabled individually, and
with everything disabled the evaluation sequence is exactly the
HyperBand baseline's.

The optimizer is a scheduler: an executor repeatedly asks for the next
evaluation and reports results back.  State updates (model refits,
incumbent updates, jump decisions) are serialized through those two
entry points; a jump reported back to the executor cancels the
in-flight evaluations of the stage it leaves behind.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .risk import _stage_arrays, evaluate_jump_risk
from .space import Configuration, SearchSpace, sample_uniform
from .surrogate import Observation, SurrogateModel, ei_values, fit

__all__ = [
    "BracketPlan",
    "plan_brackets",
    "OptimizerPolicy",
    "Incumbent",
    "update_incumbent",
    "EvalRequest",
    "CachedPredictor",
    "warm_start_bracket",
    "next_conf_to_test",
    "HyperJumpOptimizer",
    "default_loss",
]

LOSS_FLOOR = 1e-9
WARM_POOL_SIZE = 1000
FULL_OPT_MAX_N = 20
REOPT_GROWTH = 1.25


def default_loss(accuracy: float) -> float:
    """Loss for bounded accuracy metrics in [0, 1]."""
    return 1.0 - accuracy


def _int_log(eta: int, value: float) -> int:
    count, v = 0, eta
    while v <= value:
        count += 1
        v *= eta
    return count


@dataclass(frozen=True)
class BracketPlan:
    """Stage ladder of one successive-halving bracket.

    A bracket with S stages starts n0 configurations at budget
    R * eta**-(S-1); stage i runs floor(n_{i-1}/eta) survivors (minimum
    one) at eta times the previous budget, finishing at exactly R.
    """

    max_budget: float
    eta: int
    num_stages: int
    n0: int
    budgets: tuple = field(init=False, compare=False)
    sizes: tuple = field(init=False, compare=False)

    def __post_init__(self):
        if self.eta < 2:
            raise ValueError("eta must be an integer >= 2")
        if self.num_stages < 1 or self.n0 < 1:
            raise ValueError("bracket needs at least one stage and one configuration")
        budgets = tuple(
            self.max_budget / self.eta ** (self.num_stages - 1 - i)
            for i in range(self.num_stages)
        )
        sizes = [self.n0]
        for _ in range(self.num_stages - 1):
            sizes.append(max(1, sizes[-1] // self.eta))
        object.__setattr__(self, "budgets", budgets)
        object.__setattr__(self, "sizes", tuple(sizes))
        if any(b > self.max_budget * (1 + 1e-12) for b in budgets):
            raise ValueError("stage budget exceeds the maximum budget")

    @property
    def s_max(self) -> int:
        return _int_log(self.eta, self.max_budget)


def plan_brackets(max_budget: float, eta: int) -> list[BracketPlan]:
    """One iteration of bracket plans, largest stage count first.

    Bracket k (k = 0..s_max) has S = s_max + 1 - k stages and starts
    ceil((s_max + 1) / S * eta**(S-1)) configurations.  Engines cycle
    the returned list indefinitely.
    """
    if eta < 2:
        raise ValueError("eta must be an integer >= 2")
    if max_budget < eta:
        raise ValueError("max budget must be at least eta")
    s_max = _int_log(eta, max_budget)
    plans = []
    for num_stages in range(s_max + 1, 0, -1):
        n0 = math.ceil((s_max + 1) / num_stages * eta ** (num_stages - 1))
        plans.append(BracketPlan(float(max_budget), eta, num_stages, n0))
    return plans


@dataclass(frozen=True)
class OptimizerPolicy:
    """Risk threshold, robustness knobs, and ablation switches."""

    lam: float = 0.10
    p_nj: float = 0.3
    p_u: float = 0.3
    no_jump: bool = False
    no_ord: bool = False
    no_opt: bool = False
    no_bw: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("risk threshold must be non-negative")
        if not 0 <= self.p_nj <= 1 or not 0 <= self.p_u <= 1:
            raise ValueError("p_nj and p_u must lie in [0, 1]")

    @property
    def plain_halving(self) -> bool:
        """True when no mechanism ever consults the model."""
        return self.no_bw and self.no_ord and (self.no_jump or self.p_nj >= 1.0)


@dataclass(frozen=True)
class Incumbent:
    """Best configuration observed at exactly the full budget."""

    config: Configuration | None = None
    accuracy: float = -math.inf
    loss: float = 1.0


def update_incumbent(
    incumbent: Incumbent,
    observation: Observation,
    max_budget: float,
    loss_transform: Callable[[float], float] = default_loss,
) -> Incumbent:
    """Fold one observation into the incumbent.

    Only full-budget observations are eligible, and only strict
    accuracy improvements replace the incumbent.  The loss is floored
    at a tiny positive value so relative risk stays defined.
    """
    if observation.budget != max_budget:
        return incumbent
    if incumbent.config is not None and observation.accuracy <= incumbent.accuracy:
        return incumbent
    loss = max(loss_transform(observation.accuracy), LOSS_FLOOR)
    return Incumbent(observation.config, observation.accuracy, loss)


@dataclass(frozen=True)
class EvalRequest:
    request_id: int
    bracket: int
    stage: int
    config: Configuration
    budget: float
    resume_from: float | None = None


class CachedPredictor:
    """Memoizing view of a fitted model, keyed by (config id, budget).

    One instance is valid for exactly one model value; the engine
    replaces it on every refit.
    """

    def __init__(self, model: SurrogateModel):
        self.model = model
        self._cache: dict = {}

    def predict(self, config: Configuration, budget: float) -> tuple[float, float]:
        key = (config.id, budget)
        hit = self._cache.get(key)
        if hit is None:
            mu, sigma = self.model.predict(config, budget)
            hit = self._cache[key] = (mu, sigma)
        return hit

    def predict_batch(self, configs: Sequence[Configuration], budget: float):
        missing = [c for c in configs if (c.id, budget) not in self._cache]
        if missing:
            mus, sigmas = self.model.predict_batch(missing, budget)
            for c, mu, sigma in zip(missing, mus, sigmas):
                self._cache[(c.id, budget)] = (float(mu), float(sigma))
        pairs = [self._cache[(c.id, budget)] for c in configs]
        return (np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))


def warm_start_bracket(
    n: int,
    model: SurrogateModel | None,
    space: SearchSpace,
    policy: OptimizerPolicy,
    rng: np.random.Generator,
    ids: Iterable[int],
    best_accuracy: float = -math.inf,
    pool_size: int = WARM_POOL_SIZE,
) -> list[Configuration]:
    """Choose the configurations of a new bracket.

    With a cold model (or the warm-start ablation) all n are uniform.
    Otherwise ceil(p_u * n) are uniform and the rest are the top
    full-budget expected-improvement candidates from a uniform pool,
    skipping value-duplicates of already chosen configurations.
    """
    if n < 1:
        raise ValueError("bracket needs at least one configuration")
    cold = model is None or not model.is_usable
    if cold or policy.no_bw:
        return [sample_uniform(space, rng, ids) for _ in range(n)]
    n_random = math.ceil(policy.p_u * n)
    chosen = [sample_uniform(space, rng, ids) for _ in range(min(n_random, n))]
    if len(chosen) == n:
        return chosen
    pool = [sample_uniform(space, rng, ids) for _ in range(pool_size)]
    mus, sigmas = model.predict_batch(pool, model.max_budget)
    scores = ei_values(mus, sigmas, best_accuracy)
    seen = {c.values for c in chosen}
    for idx in np.argsort(-scores, kind="stable"):
        if len(chosen) == n:
            break
        cand = pool[int(idx)]
        if cand.values in seen:
            continue
        seen.add(cand.values)
        chosen.append(cand)
    while len(chosen) < n:
        # tiny spaces can exhaust the pool's distinct values
        chosen.append(sample_uniform(space, rng, ids))
    return chosen


def next_conf_to_test(
    untested: Sequence[Configuration],
    tested: Sequence[tuple[Configuration, float]],
    stage: int,
    model,
    plan: BracketPlan,
    policy: OptimizerPolicy,
    incumbent_loss: float,
    rng: np.random.Generator,
    available: Sequence[Configuration] | None = None,
) -> Configuration:
    """Pick the stage's next configuration to evaluate.

    Each candidate is simulated as tested at its posterior mean (no
    refit) and scored by the jump it would enable: longest target stage
    first, then smallest accumulated risk, then smallest id.  With the
    ordering ablation or a cold model the choice is uniformly random.
    """
    avail = sorted(available if available is not None else untested, key=lambda c: c.id)
    if not avail:
        raise ValueError("no untested configuration available")
    if len(avail) == 1:
        return avail[0]
    usable = model is not None and getattr(model, "is_usable", True)
    if policy.no_ord or not usable:
        return avail[int(rng.integers(len(avail)))]
    predictor = model if isinstance(model, CachedPredictor) else CachedPredictor(model)
    memo: dict = {}
    budget = plan.budgets[stage]
    base = _stage_arrays(tested, untested, predictor, budget)
    ids, by_id, mu_base, sd_base = base
    pos = {cid: i for i, cid in enumerate(ids.tolist())}
    # value-duplicates are exchangeable under simulation: swapping two
    # equal-valued untested configurations is an isomorphism of the
    # decision problem, so one lowest-id representative per value suffices
    reps: dict = {}
    for u in avail:
        reps.setdefault(u.values, u)
    best_key, best_conf = None, None
    for u in reps.values():
        mu_u = float(mu_base[pos[u.id]])
        sim_tested = list(tested) + [(u, mu_u)]
        sim_untested = [c for c in untested if c.id != u.id]
        sim_sd = sd_base.copy()
        sim_sd[pos[u.id]] = 0.0  # simulated measurement collapses u's belief
        decision = evaluate_jump_risk(
            stage, sim_tested, sim_untested, predictor, plan,
            policy.lam, incumbent_loss, _memo=memo,
            _hop0_arrays=(ids, by_id, mu_base, sim_sd),
        )
        key = (decision.target_stage, -decision.accumulated_rear, -u.id)
        if best_key is None or key > best_key:
            best_key, best_conf = key, u
    return best_conf


class _BracketState:
    def __init__(self, bid: int, plan: BracketPlan, members: Sequence[Configuration],
                 jumping_allowed: bool):
        self.bid = bid
        self.plan = plan
        self.stage = 0
        self.members = list(members)
        self.tested: dict[int, tuple[Configuration, float]] = {}
        self.untested: dict[int, Configuration] = {c.id: c for c in members}
        self.in_flight: dict[int, EvalRequest] = {}
        self.jumping_allowed = jumping_allowed
        self.done = False

    def enter_stage(self, stage: int, members: Sequence[Configuration]) -> None:
        self.stage = stage
        self.members = list(members)
        self.tested = {}
        self.untested = {c.id: c for c in members}

    @property
    def budget(self) -> float:
        return self.plan.budgets[self.stage]

    def tested_pairs(self) -> list[tuple[Configuration, float]]:
        return [self.tested[cid] for cid in sorted(self.tested)]

    def untested_list(self) -> list[Configuration]:
        return [self.untested[cid] for cid in sorted(self.untested)]


class HyperJumpOptimizer:
    """Scheduler for bracket-based optimization with jump analysis.

    Drives any executor through ``next_evaluation`` / ``report_result``;
    one instance owns its model, incumbent and random streams, so all
    ingestion and decisions are serialized by construction.
    """

    def __init__(
        self,
        space: SearchSpace,
        max_budget: float,
        eta: int = 3,
        policy: OptimizerPolicy | None = None,
        seed: int = 0,
        plans: Sequence[BracketPlan] | None = None,
        loss_transform: Callable[[float], float] = default_loss,
        initial_observations: Sequence[Observation] = (),
        warm_pool_size: int = WARM_POOL_SIZE,
        sink: Callable[[dict], None] | None = None,
    ):
        self.space = space
        self.max_budget = float(max_budget)
        self.eta = eta
        self.policy = policy if policy is not None else OptimizerPolicy()
        self.loss_transform = loss_transform
        self.warm_pool_size = warm_pool_size
        self.sink = sink
        self.plans = list(plans) if plans is not None else plan_brackets(max_budget, eta)
        streams = np.random.SeedSequence(seed).spawn(4)
        self._sample_rng = np.random.default_rng(streams[0])
        self._policy_rng = np.random.default_rng(streams[1])
        self._order_rng = np.random.default_rng(streams[2])
        self._fit_rng = np.random.default_rng(streams[3])
        self._ids = itertools.count()
        self._request_ids = itertools.count()
        self._bracket_counter = 0
        self._brackets: list[_BracketState] = []
        self._first_bracket_done = False
        self._obs: dict = {}
        self._model: SurrogateModel | None = None
        self._predictor: CachedPredictor | None = None
        self._n_at_opt = 0
        self._resume_ledger: dict = {}
        self._worst_accuracy: float | None = None
        self.incumbent = Incumbent()
        self.cumulative_overhead = 0.0
        self.n_recommendations = 0
        for obs in initial_observations:
            self._store_observation(obs)
            self.incumbent = update_incumbent(
                self.incumbent, obs, self.max_budget, self.loss_transform
            )
        if self._obs:
            self._refit(now=0.0)

    # ------------------------------------------------------------------
    # scheduler surface
    # ------------------------------------------------------------------
    def next_evaluation(self, now: float) -> EvalRequest | None:
        """Next evaluation to start, or None if the caller should wait.

        None is returned while the first bracket is still running and
        cannot feed another worker; afterwards an idle worker activates
        a new parallel bracket.  A confident model may jump-complete
        every fresh bracket instantly; after a run of such activations
        the optimizer declares itself idle instead of churning forever.
        """
        for _ in range(50):
            for br in self._brackets:
                req = self._issue_from(br, now)
                if req is not None:
                    return req
            if self._brackets and not self._first_bracket_done:
                return None
            self._activate_bracket(now)
        return None

    def report_result(self, request: EvalRequest, accuracy: float,
                      snapshots: Sequence[tuple[float, float]], cost: float,
                      now: float) -> list[EvalRequest]:
        """Ingest a completed evaluation; returns requests to cancel."""
        br = self._find_bracket(request)
        self._settle(br, request)
        br.tested[request.config.id] = (request.config, float(accuracy))
        self._resume_ledger[request.config.values] = max(
            self._resume_ledger.get(request.config.values, 0.0), request.budget
        )
        if self._worst_accuracy is None or accuracy < self._worst_accuracy:
            self._worst_accuracy = float(accuracy)
        obs = Observation(request.config, request.budget, float(accuracy), cost)
        self._store_observation(obs)
        if not self.policy.no_opt:
            for b, a in snapshots:
                self._store_observation(Observation(request.config, b, float(a), 0.0))
        before = self.incumbent
        self.incumbent = update_incumbent(
            self.incumbent, obs, self.max_budget, self.loss_transform
        )
        if self.incumbent is not before:
            self._emit({"t": now, "event": "incumbent", "config": request.config.id,
                        "accuracy": self.incumbent.accuracy, "loss": self.incumbent.loss})
        self._refit(now)
        return self._after_ingest(br, now)

    def report_failure(self, request: EvalRequest, now: float) -> list[EvalRequest]:
        """Ingest a failed evaluation.

        The configuration is ranked with the worst accuracy seen so far
        minus a tie-breaking epsilon; nothing enters the model.
        """
        br = self._find_bracket(request)
        self._settle(br, request)
        sentinel = (self._worst_accuracy if self._worst_accuracy is not None else 0.0) - 1e-6
        self._worst_accuracy = sentinel
        br.tested[request.config.id] = (request.config, sentinel)
        return self._after_ingest(br, now)

    @property
    def incumbent_loss(self) -> float:
        return self.incumbent.loss

    @property
    def mean_recommendation_overhead(self) -> float:
        return self.cumulative_overhead / max(1, self.n_recommendations)

    @property
    def model(self) -> SurrogateModel | None:
        return self._model

    # ------------------------------------------------------------------
    # internals
    # ------------------------------------------------------------------
    def _emit(self, record: dict) -> None:
        if self.sink is not None:
            self.sink(record)

    def _find_bracket(self, request: EvalRequest) -> _BracketState:
        for br in self._brackets:
            if br.bid == request.bracket:
                return br
        raise KeyError(f"unknown bracket {request.bracket}")

    @staticmethod
    def _settle(br: _BracketState, request: EvalRequest) -> None:
        if request.request_id not in br.in_flight or request.stage != br.stage:
            raise ValueError("result reported for an evaluation not in flight")
        del br.in_flight[request.request_id]
        del br.untested[request.config.id]

    def _store_observation(self, obs: Observation) -> None:
        self._obs[(obs.config.values, float(obs.budget))] = obs

    def _model_usable(self) -> bool:
        return self._model is not None and self._model.is_usable

    def _refit(self, now: float) -> None:
        if self.policy.plain_halving or not self._obs:
            return
        t0 = time.perf_counter()
        obs = list(self._obs.values())
        n = len(obs)
        if self._model is None:
            self._model = fit(obs, self.space, self.max_budget,
                              n_restarts=8, rng=self._fit_rng)
            reoptimized = True
        elif n <= FULL_OPT_MAX_N or n >= math.ceil(self._n_at_opt * REOPT_GROWTH):
            self._model = fit(obs, self.space, self.max_budget, n_restarts=3,
                              rng=self._fit_rng, params=self._model.params)
            reoptimized = True
        else:
            self._model = fit(obs, self.space, self.max_budget,
                              n_restarts=0, params=self._model.params)
            reoptimized = False
        self._predictor = CachedPredictor(self._model)
        self.cumulative_overhead += time.perf_counter() - t0
        if reoptimized:
            self._n_at_opt = n
            p = self._model.params
            self._emit({
                "t": now, "event": "model_fit", "n_obs": n,
                "signal_variance": p.signal_variance,
                "length_scales": list(p.length_scales),
                "budget_decay_rate": p.budget_decay_rate,
                "budget_basis_weights": [list(r) for r in p.budget_basis_weights],
                "noise_variance": p.noise_variance,
            })

    def _best_accuracy_seen(self) -> float:
        if self.incumbent.config is not None:
            return self.incumbent.accuracy
        if self._obs:
            return max(o.accuracy for o in self._obs.values())
        return -math.inf

    def _activate_bracket(self, now: float) -> None:
        plan = self.plans[self._bracket_counter % len(self.plans)]
        bid = self._bracket_counter
        self._bracket_counter += 1
        jumping_allowed = float(self._policy_rng.random()) >= self.policy.p_nj
        t0 = time.perf_counter()
        members = warm_start_bracket(
            plan.sizes[0], self._model, self.space, self.policy,
            self._sample_rng, self._ids, self._best_accuracy_seen(),
            self.warm_pool_size,
        )
        self.cumulative_overhead += time.perf_counter() - t0
        br = _BracketState(bid, plan, members, jumping_allowed)
        self._brackets.append(br)
        self._emit({"t": now, "event": "bracket_start", "bracket": bid,
                    "stages": plan.num_stages, "n0": plan.sizes[0],
                    "initial_budget": plan.budgets[0]})
        self._risk_loop(br, now)

    def _issue_from(self, br: _BracketState, now: float) -> EvalRequest | None:
        if br.done:
            return None
        available = [c for cid, c in sorted(br.untested.items())
                     if cid not in {r.config.id for r in br.in_flight.values()}]
        if not available:
            return None
        t0 = time.perf_counter()
        config = next_conf_to_test(
            br.untested_list(), br.tested_pairs(), br.stage,
            self._predictor if self._model_usable() else None,
            br.plan, self.policy, self.incumbent.loss, self._order_rng,
            available=available,
        )
        self.cumulative_overhead += time.perf_counter() - t0
        resume = None
        if not self.policy.no_opt:
            prev = self._resume_ledger.get(config.values)
            if prev is not None and 0.0 < prev < br.budget:
                resume = prev
        req = EvalRequest(next(self._request_ids), br.bid, br.stage,
                          config, br.budget, resume)
        br.in_flight[req.request_id] = req
        self.n_recommendations += 1
        return req

    def _after_ingest(self, br: _BracketState, now: float) -> list[EvalRequest]:
        if br.untested:
            return self._risk_loop(br, now)
        return self._advance_stage(br, now)

    def _advance_stage(self, br: _BracketState, now: float) -> list[EvalRequest]:
        if br.stage >= br.plan.num_stages - 1:
            self._finish_bracket(br, now)
            return []
        ranked = sorted(br.tested.values(), key=lambda ca: (-ca[1], ca[0].id))
        keep = max(1, len(br.members) // br.plan.eta)
        survivors = [c for c, _ in ranked[:keep]]
        br.enter_stage(br.stage + 1, survivors)
        return self._risk_loop(br, now)

    def _risk_loop(self, br: _BracketState, now: float) -> list[EvalRequest]:
        """Evaluate jump risk until no further jump is authorized.

        Chained jumps are possible: each decision starts a fresh risk
        budget, mirroring one re-entry of the stage loop per decision.
        """
        cancels: list[EvalRequest] = []
        if self.policy.plain_halving or self.policy.no_jump or not br.jumping_allowed:
            return cancels
        while not br.done and br.untested and self._model_usable():
            t0 = time.perf_counter()
            decision = evaluate_jump_risk(
                br.stage, br.tested_pairs(), br.untested_list(),
                self._predictor, br.plan, self.policy.lam, self.incumbent.loss,
            )
            self.cumulative_overhead += time.perf_counter() - t0
            self._emit({
                "t": now, "event": "risk_eval", "bracket": br.bid,
                "stage": br.stage, "target": decision.target_stage,
                "hop_rears": [h.min_rear for h in decision.hops],
                "hop_selected": [list(h.selected_ids) for h in decision.hops],
            })
            if decision.target_stage == br.stage:
                break
            cancels.extend(
                br.in_flight[rid] for rid in sorted(br.in_flight)
            )
            br.in_flight.clear()
            self._emit({
                "t": now, "event": "jump", "bracket": br.bid,
                "stage": br.stage, "target": decision.target_stage,
                "rear": decision.accumulated_rear,
                "selected": sorted(c.id for c in decision.selected),
            })
            if decision.target_stage >= br.plan.num_stages or not decision.selected:
                self._finish_bracket(br, now)
            else:
                br.enter_stage(decision.target_stage, decision.selected)
        return cancels

    def _finish_bracket(self, br: _BracketState, now: float) -> None:
        br.done = True
        self._emit({"t": now, "event": "bracket_end", "bracket": br.bid,
                    "stage": br.stage})
        if br.bid == 0:
            self._first_bracket_done = True
        self._brackets = [b for b in self._brackets if not b.done]
