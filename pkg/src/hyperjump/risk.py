"""Jump-risk analysis: expected accuracy reduction and set selection.

A jump skips the remaining evaluations of a stage (and possibly later
stages) by promoting a selected subset directly.  Its risk is the
expected positive gap between the best discarded and the best selected
configuration's accuracy at the stage budget, computed from per-member
accuracy beliefs (point masses for tested configurations, Gaussians
from the surrogate for untested ones).

The expected gap E[(max_D - max_S)+] for independent members equals
the one-dimensional integral of F_S(t) * (1 - F_D(t)), which is
evaluated with a vectorized adaptive Gauss-Kronrod rule split at every
point-mass atom so the quadrature never straddles a CDF discontinuity.
Members whose support lies entirely below the integration interval
contribute a CDF factor of one and are pruned; identical pruned
integrands are memoized within one decision pass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.special import ndtr

from .space import Configuration

__all__ = [
    "PointMass",
    "Gaussian",
    "belief",
    "MaxDistribution",
    "max_distribution",
    "ear",
    "rear",
    "candidate_sets",
    "JumpDecision",
    "HopRecord",
    "evaluate_jump_risk",
]

# stddev below which a Gaussian belief collapses to a point mass
COLLAPSE_STDDEV = 1e-9
# one-sided 90% normal quantile used for the confidence-bound set variants
Z90 = 1.2815515655446004
EAR_ABS_TOL = 1e-6
SUPPORT_SIGMAS = 8.0
INCUMBENT_LOSS_FLOOR = 1e-9


@dataclass(frozen=True)
class PointMass:
    value: float


@dataclass(frozen=True)
class Gaussian:
    mean: float
    stddev: float

    def __post_init__(self):
        if not self.stddev > 0:
            raise ValueError("Gaussian stddev must be strictly positive")


AccuracyDistribution = Union[PointMass, Gaussian]


def belief(mean: float, stddev: float) -> AccuracyDistribution:
    """Accuracy belief from a posterior (mean, stddev) pair.

    Near-zero stddev collapses to a point mass.
    """
    if stddev < COLLAPSE_STDDEV:
        return PointMass(mean)
    return Gaussian(mean, stddev)


@dataclass(frozen=True)
class MaxDistribution:
    """Distribution of the maximum over independent members.

    CDF(x) = [x >= atom] * prod_i Phi((x - mu_i) / sigma_i); the atom is
    the maximum over the point-mass members and is absent if there are
    none.
    """

    atom: float | None
    means: np.ndarray = field(default_factory=lambda: np.empty(0))
    stddevs: np.ndarray = field(default_factory=lambda: np.empty(0))

    def cdf(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if len(self.means):
            z = (x[:, None] - self.means[None, :]) / self.stddevs[None, :]
            out = np.prod(ndtr(z), axis=1)
        else:
            out = np.ones_like(x)
        if self.atom is not None:
            out = np.where(x >= self.atom, out, 0.0)
        return out

    @property
    def lower_edge(self) -> float:
        """Effective lower support edge of the maximum (max over members)."""
        edges = []
        if self.atom is not None:
            edges.append(self.atom)
        if len(self.means):
            edges.append(float(np.max(self.means - SUPPORT_SIGMAS * self.stddevs)))
        return max(edges)

    @property
    def upper_edge(self) -> float:
        edges = []
        if self.atom is not None:
            edges.append(self.atom)
        if len(self.means):
            edges.append(float(np.max(self.means + SUPPORT_SIGMAS * self.stddevs)))
        return max(edges)


def max_distribution(members: Sequence[AccuracyDistribution]) -> MaxDistribution:
    """Distribution of the maximum of a non-empty set of beliefs."""
    if not members:
        raise ValueError("empty member list")
    atom = None
    means, stds = [], []
    for m in members:
        if isinstance(m, PointMass):
            atom = m.value if atom is None else max(atom, m.value)
        else:
            means.append(m.mean)
            stds.append(m.stddev)
    return MaxDistribution(atom, np.asarray(means, dtype=float), np.asarray(stds, dtype=float))


# 15-point Kronrod rule with embedded 7-point Gauss rule on [-1, 1]
_XK = np.array([
    -0.991455371120813, -0.949107912342759, -0.864864423359769,
    -0.741531185599394, -0.586087235467691, -0.405845151377397,
    -0.207784955007898, 0.0, 0.207784955007898, 0.405845151377397,
    0.586087235467691, 0.741531185599394, 0.864864423359769,
    0.949107912342759, 0.991455371120813,
])
_WK = np.array([
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728, 0.204432940075298,
    0.190350578064785, 0.169004726639267, 0.140653259715525,
    0.104790010322250, 0.063092092629979, 0.022935322010529,
])
_GAUSS_IDX = np.array([1, 3, 5, 7, 9, 11, 13])
_WG = np.array([
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469, 0.381830050505119, 0.279705391489277,
    0.129484966168870,
])
_MAX_SPLIT_ROUNDS = 24
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _norm_pdf(z: float) -> float:
    return math.exp(-0.5 * z * z) * _INV_SQRT_2PI


def _norm_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / _SQRT2))


def _expected_excess(mu: float, sigma: float, threshold: float) -> float:
    """E[(X - threshold)+] for X ~ N(mu, sigma^2)."""
    z = (mu - threshold) / sigma
    return max(sigma * _norm_pdf(z) + (mu - threshold) * _norm_cdf(z), 0.0)


def _cdf_integral(mu: float, sigma: float, a: float, b: float) -> float:
    """Integral of Phi((t - mu) / sigma) dt over [a, b]."""

    def anti(t: float) -> float:
        z = (t - mu) / sigma
        return sigma * (z * _norm_cdf(z) + _norm_pdf(z))

    return max(anti(b) - anti(a), 0.0)


def _adaptive_quad(f, edges: Sequence[float], tol: float) -> float:
    """Integrate a vectorized scalar function over piecewise segments.

    ``edges`` are sorted breakpoints; each consecutive pair forms an
    initial segment.  Segments are bisected until the per-segment
    Gauss-Kronrod error estimate fits a length-proportional share of
    ``tol``.
    """
    pts = np.asarray(edges, dtype=float)
    a, b = pts[:-1], pts[1:]
    keep = b > a
    a, b = a[keep], b[keep]
    if not len(a):
        return 0.0
    total_len = float(np.sum(b - a))
    total = 0.0
    for _ in range(_MAX_SPLIT_ROUNDS):
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        nodes = mid[:, None] + half[:, None] * _XK[None, :]
        fv = f(nodes.ravel()).reshape(nodes.shape)
        i15 = half * (fv @ _WK)
        i7 = half * (fv[:, _GAUSS_IDX] @ _WG)
        err = np.abs(i15 - i7)
        ok = err <= tol * (b - a) / total_len
        total += float(np.sum(i15[ok]))
        if np.all(ok):
            return total
        bad = ~ok
        a_bad, b_bad, m_bad = a[bad], b[bad], mid[bad]
        a = np.concatenate([a_bad, m_bad])
        b = np.concatenate([m_bad, b_bad])
    # fell through the depth guard: accept the remaining estimates
    return total + float(np.sum(i15[bad]))


def _ear_arrays(
    d_atom: float | None, d_mu: np.ndarray, d_sd: np.ndarray,
    s_atom: float | None, s_mu: np.ndarray, s_sd: np.ndarray,
    memo: dict | None = None,
) -> float:
    """E[(max_D - max_S)+] from raw member arrays (sd > 0 throughout)."""
    lo = -math.inf
    if s_atom is not None:
        lo = s_atom
    if len(s_mu):
        lo = max(lo, float(np.max(s_mu - SUPPORT_SIGMAS * s_sd)))
    hi = -math.inf
    if d_atom is not None:
        hi = d_atom
    if len(d_mu):
        hi = max(hi, float(np.max(d_mu + SUPPORT_SIGMAS * d_sd)))
    if hi <= lo:
        return 0.0
    if not len(s_mu) and not len(d_mu):
        return max(d_atom - s_atom, 0.0)

    keep = s_mu + SUPPORT_SIGMAS * s_sd > lo
    s_mu, s_sd = s_mu[keep], s_sd[keep]
    keep = d_mu + SUPPORT_SIGMAS * d_sd > lo
    d_mu, d_sd = d_mu[keep], d_sd[keep]
    atom = d_atom if (d_atom is not None and d_atom > lo) else None

    # closed forms once pruning has reduced each side to (at most) one
    # component; the selected side must be bounded below by its own
    # surviving member for the unrestricted-domain formulas to apply
    if atom is None and len(d_mu) == 1:
        if not len(s_mu):
            return _expected_excess(float(d_mu[0]), float(d_sd[0]), lo)
        if len(s_mu) == 1 and lo <= s_mu[0] - SUPPORT_SIGMAS * s_sd[0] + 1e-12:
            gap = float(d_mu[0]) - float(s_mu[0])
            spread = math.hypot(float(d_sd[0]), float(s_sd[0]))
            z = gap / spread
            return max(spread * _norm_pdf(z) + gap * _norm_cdf(z), 0.0)
    if atom is not None and not len(d_mu) and len(s_mu) <= 1:
        if not len(s_mu):
            return atom - lo
        return _cdf_integral(float(s_mu[0]), float(s_sd[0]), lo, atom)

    key = None
    if memo is not None:
        key = ("ear", lo, atom, d_mu.tobytes(), d_sd.tobytes(),
               s_mu.tobytes(), s_sd.tobytes())
        hit = memo.get(key)
        if hit is not None:
            return hit

    edges = [lo, hi] if not (atom is not None and lo < atom < hi) else [lo, atom, hi]
    ns = len(s_mu)
    both_mu = np.concatenate([s_mu, d_mu])
    inv_sd = 1.0 / np.concatenate([s_sd, d_sd])

    def integrand(t: np.ndarray) -> np.ndarray:
        if len(both_mu):
            phi = ndtr((t[:, None] - both_mu[None, :]) * inv_sd[None, :])
            fs = np.prod(phi[:, :ns], axis=1) if ns else 1.0
            fd = np.prod(phi[:, ns:], axis=1) if len(d_mu) else np.ones_like(t)
        else:
            fs, fd = 1.0, np.ones_like(t)
        if atom is not None:
            fd = np.where(t >= atom, fd, 0.0)
        return fs * (1.0 - fd)

    total = _adaptive_quad(integrand, edges, EAR_ABS_TOL)
    if not math.isfinite(total):
        raise FloatingPointError("non-finite value in risk integral")
    total = max(total, 0.0)
    if memo is not None:
        memo[key] = total
    return total


def ear(discarded: MaxDistribution, selected: MaxDistribution) -> float:
    """Expected accuracy reduction of keeping `selected` over `discarded`.

    E[(max_D - max_S)+] for independent maxima, via the CDF identity
    integral of F_S(t) * (1 - F_D(t)) dt; always >= 0 and exactly 0
    whenever the discarded support lies below the selected support.
    """
    return _ear_arrays(
        discarded.atom, discarded.means, discarded.stddevs,
        selected.atom, selected.means, selected.stddevs,
    )


def rear(ear_value: float, incumbent_loss: float) -> float:
    """Relative expected accuracy reduction: EAR over the incumbent loss."""
    if incumbent_loss <= 0:
        raise ValueError("incumbent loss must be strictly positive")
    return ear_value / incumbent_loss


def _int_log(eta: int, k: int) -> int:
    """Largest L with eta**L <= k (exact integer arithmetic)."""
    count, v = 0, eta
    while v <= k:
        count += 1
        v *= eta
    return count


def _candidate_index_sets(
    ids: np.ndarray, acc: np.ndarray, lcb: np.ndarray, ucb: np.ndarray, eta: int,
    dedupe: bool = True,
) -> list[np.ndarray]:
    """Candidate subsets as index arrays into the stage arrays.

    Generates the top-k by accuracy, the accuracy-swap variants, and
    the confidence-bound swap variants, in that order.  All rankings
    break ties by id ascending.  With ``dedupe`` (the default),
    duplicate sets are returned once.
    """
    n = len(ids)
    k = max(1, n // eta)
    order = np.lexsort((ids, -acc))
    top = order[:k]
    rest = order[k:]
    raw = [top]
    depth = _int_log(eta, k)
    for i in range(1, depth + 1):
        m = min(max(1, k // eta**i), len(rest))
        raw.append(np.concatenate([top[: k - m], rest[:m]]) if m else top)
    if depth and len(rest):
        top_by_lcb = top[np.lexsort((ids[top], lcb[top]))]
        rest_by_ucb = rest[np.lexsort((ids[rest], -ucb[rest]))]
        for i in range(1, depth + 1):
            m = min(max(1, k // eta**i), len(rest))
            dropped = set(top_by_lcb[:m].tolist())
            kept = np.array([j for j in top if j not in dropped], dtype=top.dtype)
            raw.append(np.concatenate([kept, rest_by_ucb[:m]]))
    else:
        raw.extend([top] * depth)
    if not dedupe:
        return [np.sort(idx) for idx in raw]
    out, seen = [], set()
    for idx in raw:
        key = frozenset(idx.tolist())
        if key in seen:
            continue
        seen.add(key)
        out.append(np.sort(idx))
    return out


def _stage_arrays(tested, untested, predictor, budget):
    """Unified per-stage arrays: ids (ascending), beliefs, configs by id.

    Tested members carry their measured accuracy with zero stddev;
    untested members carry the predictor's posterior, with near-zero
    stddevs collapsed to point masses.
    """
    if untested and predictor is None:
        raise ValueError("a usable model is required while untested configurations remain")
    by_id: dict[int, Configuration] = {}
    for c, _ in tested:
        by_id[c.id] = c
    for c in untested:
        by_id[c.id] = c
    ids = np.array(sorted(by_id), dtype=np.int64)
    index = {cid: i for i, cid in enumerate(ids.tolist())}
    mu = np.zeros(len(ids))
    sd = np.zeros(len(ids))
    for c, measured in tested:
        mu[index[c.id]] = measured
    if untested:
        mus, sigmas = _predict_each(predictor, untested, budget)
        for c, m_i, s_i in zip(untested, mus, sigmas):
            mu[index[c.id]] = m_i
            sd[index[c.id]] = s_i if s_i >= COLLAPSE_STDDEV else 0.0
    return ids, by_id, mu, sd


def candidate_sets(
    tested: Sequence[tuple[Configuration, float]],
    untested: Sequence[Configuration],
    predictor,
    stage_budget: float,
    eta: int,
    *,
    dedupe: bool = True,
) -> list[tuple[Configuration, ...]]:
    """Candidate subsets to retain when jumping out of a stage.

    Produces 1 + 2*floor(log_eta(k)) sets of size k = floor(|C|/eta)
    (minimum 1): the top-k by measured-or-predicted accuracy, variants
    swapping the worst accuracy-ranked tail for the next-best outsiders,
    and variants swapping the lowest-LCB members for the highest-UCB
    outsiders at a 90% confidence bound.  Tested configurations have
    LCB = UCB = measured accuracy.  Duplicate sets are returned once
    unless ``dedupe`` is false.
    """
    if not tested and not untested:
        raise ValueError("stage has no configurations")
    ids, by_id, mu, sd = _stage_arrays(tested, untested, predictor, stage_budget)
    lcb = mu - Z90 * sd
    ucb = mu + Z90 * sd
    index_sets = _candidate_index_sets(ids, mu, lcb, ucb, eta, dedupe=dedupe)
    return [tuple(by_id[cid] for cid in ids[idx].tolist()) for idx in index_sets]


def _predict_each(predictor, configs, budget):
    if hasattr(predictor, "predict_batch"):
        mu, sigma = predictor.predict_batch(configs, budget)
        return np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float)
    pairs = [predictor.predict(c, budget) for c in configs]
    return (np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))


@dataclass(frozen=True)
class HopRecord:
    stage: int
    min_rear: float
    selected_ids: tuple


@dataclass(frozen=True)
class JumpDecision:
    """Outcome of a jump-risk evaluation.

    ``selected`` is empty iff ``target_stage`` equals the bracket's
    stage count, meaning the whole bracket is skipped and a new one
    starts.  ``hops`` records the minimum rEAR of every evaluated hop,
    the last entry being the blocking hop when no further jump was
    authorized.
    """

    target_stage: int
    selected: tuple
    accumulated_rear: float
    hops: tuple = ()


def evaluate_jump_risk(
    stage: int,
    tested: Sequence[tuple[Configuration, float]],
    untested: Sequence[Configuration],
    predictor,
    plan,
    lam: float,
    incumbent_loss: float,
    _memo: dict | None = None,
    _hop0_arrays=None,
) -> JumpDecision:
    """Decide how many stages can be skipped within the risk budget.

    Per hop: build the candidate sets, score each by the rEAR of
    discarding its complement at the hop's source budget, and take the
    minimizer.  If the accumulated rEAR plus the hop minimum exceeds
    ``lam`` the decision stops at the current hop; otherwise the chosen
    set is carried (as all-untested) into the next stage and the loop
    repeats.  Clearing every stage returns (num_stages, empty set).
    """
    num_stages = plan.num_stages
    if stage >= num_stages:
        raise ValueError("bracket already finished")
    loss = max(incumbent_loss, INCUMBENT_LOSS_FLOOR)
    memo = _memo if _memo is not None else {}
    s = stage
    cur_tested = list(tested)
    cur_untested = list(untested)
    acc_rear = 0.0
    hops: list[HopRecord] = []
    while s < num_stages:
        budget = plan.budgets[s]
        set_memo_ok = not cur_tested
        hop_key = None
        if s == stage and _hop0_arrays is not None:
            ids, by_id, mu, sd = _hop0_arrays
            id_key = ids.tobytes()
            index_sets = _candidate_index_sets(
                ids, mu, mu - Z90 * sd, mu + Z90 * sd, plan.eta
            )
        else:
            if set_memo_ok:
                hop_key = ("hop", s, tuple(c.id for c in cur_untested))
                cached = memo.get(hop_key)
                if cached is not None:
                    ids, by_id, mu, sd, index_sets, id_key = cached
            if hop_key is None or hop_key not in memo:
                ids, by_id, mu, sd = _stage_arrays(
                    cur_tested, cur_untested, predictor, budget
                )
                id_key = ids.tobytes()
                index_sets = _candidate_index_sets(
                    ids, mu, mu - Z90 * sd, mu + Z90 * sd, plan.eta
                )
                if hop_key is not None:
                    memo[hop_key] = (ids, by_id, mu, sd, index_sets, id_key)
        gauss = sd > 0.0
        best_idx, best_risk = None, math.inf
        for idx in index_sets:
            set_key = (s, id_key, idx.tobytes()) if set_memo_ok else None
            risk = memo.get(set_key) if set_key is not None else None
            if risk is None:
                sel = np.zeros(len(ids), dtype=bool)
                sel[idx] = True
                if np.all(sel):
                    risk = 0.0  # nothing discarded
                else:
                    s_pm = sel & ~gauss
                    d_pm = ~sel & ~gauss
                    risk = rear(
                        _ear_arrays(
                            float(np.max(mu[d_pm])) if np.any(d_pm) else None,
                            mu[~sel & gauss], sd[~sel & gauss],
                            float(np.max(mu[s_pm])) if np.any(s_pm) else None,
                            mu[sel & gauss], sd[sel & gauss],
                            memo,
                        ),
                        loss,
                    )
                if set_key is not None:
                    memo[set_key] = risk
            if risk < best_risk:
                best_idx, best_risk = idx, risk
        best_ids = ids[best_idx].tolist()
        hops.append(HopRecord(s, best_risk, tuple(best_ids)))
        best_set = tuple(by_id[cid] for cid in best_ids)
        if acc_rear + best_risk > lam:
            if s == stage:
                # no jump; the set reports the hop's safest candidate
                return JumpDecision(s, best_set, acc_rear, tuple(hops))
            # land on the population whose discard risk was already paid;
            # the blocking hop's halving stays subject to real evaluations
            return JumpDecision(s, tuple(cur_untested), acc_rear, tuple(hops))
        acc_rear += best_risk
        s += 1
        cur_tested = []
        cur_untested = list(best_set)
    return JumpDecision(num_stages, (), acc_rear, tuple(hops))
