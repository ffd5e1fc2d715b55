"""Gaussian-process surrogate over (configuration, budget) pairs.

The kernel is a product of a Matérn 5/2 kernel on the scaled
hyper-parameter coordinates and a low-rank budget kernel
phi(b)^T W phi(b') with basis phi(b) = (1, exp(-rho*b)) on the
normalized budget, encoding the expectation that accuracy saturates
exponentially as budget grows.  Kernel hyper-parameters are chosen by
maximizing the log marginal likelihood with a gradient-free multi-start
coordinate search on log-parameters.

Accuracy targets are standardized before fitting; the prior mean is the
training-set mean.  Observations are treated as noise-free by default
(noise variance floored at 1e-6 in standardized units).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import ndtr

from .space import Configuration, SearchSpace, encode

__all__ = [
    "Observation",
    "KernelParams",
    "SurrogateModel",
    "kernel_eval",
    "kernel_matrix",
    "log_marginal_likelihood",
    "fit",
    "expected_improvement",
    "ei_values",
]

SQRT5 = math.sqrt(5.0)
NOISE_FLOOR = 1e-6
PARAM_LO, PARAM_HI = 1e-3, 1e3
JITTER_START_REL = 1e-6
JITTER_MAX_REL = 1e-2


@dataclass(frozen=True)
class Observation:
    """One measured (configuration, budget, accuracy) triple with its cost."""

    config: Configuration
    budget: float
    accuracy: float
    cost: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.accuracy):
            raise ValueError("accuracy must be finite")
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if self.cost < 0:
            raise ValueError("cost must be non-negative")


@dataclass(frozen=True)
class KernelParams:
    signal_variance: float
    length_scales: tuple
    budget_decay_rate: float
    budget_basis_weights: tuple  # 2x2 symmetric PSD, row-major
    noise_variance: float = NOISE_FLOOR

    def __post_init__(self):
        object.__setattr__(self, "length_scales", tuple(self.length_scales))
        w = np.asarray(self.budget_basis_weights, dtype=float).reshape(2, 2)
        object.__setattr__(
            self, "budget_basis_weights", tuple(map(tuple, w.tolist()))
        )
        if self.signal_variance <= 0 or self.budget_decay_rate <= 0:
            raise ValueError("scale parameters must be strictly positive")
        if any(l <= 0 for l in self.length_scales):
            raise ValueError("length scales must be strictly positive")
        if self.noise_variance < 0:
            raise ValueError("noise variance must be non-negative")
        if abs(w[0, 1] - w[1, 0]) > 1e-12 or np.any(np.linalg.eigvalsh(w) < -1e-9):
            raise ValueError("budget basis weight block must be symmetric PSD")

    @property
    def weights(self) -> np.ndarray:
        return np.asarray(self.budget_basis_weights, dtype=float)


def _matern52(r: np.ndarray) -> np.ndarray:
    sr = SQRT5 * r
    return (1.0 + sr + (5.0 / 3.0) * r * r) * np.exp(-sr)


def _budget_factor(b1: np.ndarray, b2: np.ndarray, params: KernelParams) -> np.ndarray:
    w = params.weights
    e1 = np.exp(-params.budget_decay_rate * b1)
    e2 = np.exp(-params.budget_decay_rate * b2)
    return w[0, 0] + w[0, 1] * (e1 + e2) + w[1, 1] * e1 * e2


def kernel_matrix(X1: np.ndarray, X2: np.ndarray, params: KernelParams) -> np.ndarray:
    """Kernel Gram matrix between two encoded point sets (budget last)."""
    d = len(params.length_scales)
    if X1.shape[1] != d + 1 or X2.shape[1] != d + 1:
        raise ValueError("encoded vector layout does not match kernel parameters")
    ls = np.asarray(params.length_scales)
    h1 = X1[:, :d] / ls
    h2 = X2[:, :d] / ls
    sq = (
        np.sum(h1 * h1, axis=1)[:, None]
        + np.sum(h2 * h2, axis=1)[None, :]
        - 2.0 * h1 @ h2.T
    )
    r = np.sqrt(np.maximum(sq, 0.0))
    kb = _budget_factor(X1[:, -1][:, None], X2[:, -1][None, :], params)
    return params.signal_variance * _matern52(r) * kb


def kernel_eval(p1: Sequence[float], p2: Sequence[float], params: KernelParams) -> float:
    """Kernel value between two encoded vectors with identical layout."""
    a = np.atleast_2d(np.asarray(p1, dtype=float))
    b = np.atleast_2d(np.asarray(p2, dtype=float))
    if a.shape != b.shape:
        raise ValueError("encoded vectors must share one layout")
    return float(kernel_matrix(a, b, params)[0, 0])


def _factorize(X: np.ndarray, params: KernelParams):
    """Cholesky of K + (noise + jitter) I, escalating jitter on failure.

    Returns (cho, jitter).  Raises LinAlgError after the jitter ladder
    is exhausted.
    """
    K = kernel_matrix(X, X, params)
    n = K.shape[0]
    jitter = JITTER_START_REL * params.signal_variance
    last_err = None
    while jitter <= JITTER_MAX_REL * params.signal_variance * (1 + 1e-12):
        try:
            cho = cho_factor(
                K + (params.noise_variance + jitter) * np.eye(n), lower=True
            )
            return cho, jitter
        except np.linalg.LinAlgError as err:  # pragma: no cover - rare path
            last_err = err
            jitter *= 10.0
    raise np.linalg.LinAlgError(
        f"kernel matrix not positive definite after jitter escalation: {last_err}"
    )


def log_marginal_likelihood(X: np.ndarray, y: np.ndarray, params: KernelParams) -> float:
    """Gaussian-process log marginal likelihood of targets y at inputs X."""
    try:
        cho, _ = _factorize(X, params)
    except np.linalg.LinAlgError:
        return -np.inf
    alpha = cho_solve(cho, y)
    logdet = 2.0 * np.sum(np.log(np.diag(cho[0])))
    n = len(y)
    return float(-0.5 * y @ alpha - 0.5 * logdet - 0.5 * n * math.log(2 * math.pi))


class SurrogateModel:
    """Fitted GP posterior over accuracy as a function of (config, budget).

    Immutable after construction; prediction queries are safe to issue
    concurrently.  Refitting produces a new model value.
    """

    def __init__(
        self,
        observations: Sequence[Observation],
        space: SearchSpace,
        max_budget: float,
        params: KernelParams,
    ):
        self.observations = tuple(observations)
        self.space = space
        self.max_budget = float(max_budget)
        self.params = params
        self._X = np.array(
            [encode(o.config, space, o.budget, max_budget) for o in self.observations]
        )
        y_raw = np.array([o.accuracy for o in self.observations])
        self.y_mean = float(np.mean(y_raw))
        std = float(np.std(y_raw))
        self.y_std = std if std > 1e-12 else 1.0
        self._y = (y_raw - self.y_mean) / self.y_std
        self._cho, self.jitter = _factorize(self._X, params)
        self._alpha = cho_solve(self._cho, self._y)

    @property
    def n_observations(self) -> int:
        return len(self.observations)

    @property
    def min_observations(self) -> int:
        """Observations needed before callers may rely on the model."""
        return self.space.encoded_width + 1

    @property
    def is_usable(self) -> bool:
        return self.n_observations >= self.min_observations

    def log_marginal_likelihood(self) -> float:
        return log_marginal_likelihood(self._X, self._y, self.params)

    def predict_encoded(self, Xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        Xq = np.atleast_2d(Xq)
        ks = kernel_matrix(Xq, self._X, self.params)
        mean = self.y_mean + self.y_std * (ks @ self._alpha)
        L = self._cho[0]
        v = solve_triangular(L, ks.T, lower=True)
        b = Xq[:, -1]
        prior = self.params.signal_variance * _budget_factor(b, b, self.params)
        var = np.maximum(prior - np.sum(v * v, axis=0), 0.0)
        return mean, self.y_std * np.sqrt(var)

    def predict(self, config: Configuration, budget: float) -> tuple[float, float]:
        """Posterior mean and stddev at (config, budget); stddev >= 0."""
        x = encode(config, self.space, budget, self.max_budget)
        mean, std = self.predict_encoded(x[None, :])
        return float(mean[0]), float(std[0])

    def predict_batch(
        self, configs: Sequence[Configuration], budget: float
    ) -> tuple[np.ndarray, np.ndarray]:
        X = np.array(
            [encode(c, self.space, budget, self.max_budget) for c in configs]
        )
        return self.predict_encoded(X)

    def prior_stddev(self, config: Configuration, budget: float) -> float:
        x = encode(config, self.space, budget, self.max_budget)
        return self.y_std * math.sqrt(kernel_eval(x, x, self.params))


def _dedup_latest(observations: Sequence[Observation]) -> list[Observation]:
    seen: dict = {}
    for obs in observations:
        seen[(obs.config.values, float(obs.budget))] = obs
    return list(seen.values())


def _params_from_log(theta: np.ndarray, d: int, learn_noise: bool) -> KernelParams:
    vals = np.exp(theta)
    sig = vals[0]
    ls = vals[1 : 1 + d]
    rho = vals[1 + d]
    l11, l21, l22 = vals[2 + d : 5 + d]
    w = np.array([[l11 * l11, l11 * l21], [l11 * l21, l21 * l21 + l22 * l22]])
    noise = vals[5 + d] if learn_noise else NOISE_FLOOR
    return KernelParams(sig, tuple(ls), rho, tuple(map(tuple, w)), max(noise, NOISE_FLOOR))


def _log_from_params(params: KernelParams, learn_noise: bool) -> np.ndarray:
    w = params.weights
    l11 = math.sqrt(max(w[0, 0], PARAM_LO**2))
    l21 = w[0, 1] / l11
    l22 = math.sqrt(max(w[1, 1] - l21 * l21, PARAM_LO**2))
    vals = [params.signal_variance, *params.length_scales, params.budget_decay_rate,
            l11, max(l21, PARAM_LO), l22]
    if learn_noise:
        vals.append(max(params.noise_variance, NOISE_FLOOR))
    return np.log(np.clip(vals, PARAM_LO, PARAM_HI))


def _coordinate_search(objective, theta0: np.ndarray, lo: float, hi: float,
                       max_evals: int = 120) -> tuple[np.ndarray, float]:
    """Maximize objective by cyclic coordinate moves in log-space.

    Gradient-free: per coordinate, tries one step each way (riding an
    improving direction once), then shrinks the step.  Bounded to
    [lo, hi] with a hard cap on objective evaluations.
    """
    theta = np.clip(theta0, lo, hi)
    best = objective(theta)
    evals = 1
    for step in (1.0, 0.3):
        for _ in range(2):
            improved = False
            for i in range(len(theta)):
                for sign in (1.0, -1.0):
                    moves = 0
                    while moves < 2 and evals < max_evals:
                        cand = theta.copy()
                        cand[i] = np.clip(cand[i] + sign * step, lo, hi)
                        if cand[i] == theta[i]:
                            break
                        val = objective(cand)
                        evals += 1
                        if val > best + 1e-10:
                            theta, best = cand, val
                            improved = True
                            moves += 1
                        else:
                            break
                    if improved and moves:
                        break  # took this direction; skip the opposite one
            if not improved or evals >= max_evals:
                break
        if evals >= max_evals:
            break
    return theta, best


def fit(
    observations: Sequence[Observation],
    space: SearchSpace,
    max_budget: float,
    *,
    n_restarts: int = 8,
    rng: np.random.Generator | None = None,
    params: KernelParams | None = None,
    learn_noise: bool = False,
) -> SurrogateModel:
    """Fit a GP to the observations.

    Kernel parameters maximize the log marginal likelihood via
    multi-start coordinate search on log-parameters bounded to
    [1e-3, 1e3].  With ``n_restarts=0`` and explicit ``params`` the
    parameters are kept as-is and only the factorization is rebuilt.
    Duplicate (config, budget) observations keep the latest.
    """
    obs = _dedup_latest(observations)
    if not obs:
        raise ValueError("empty training set")
    if any(not (0 < o.budget <= max_budget) for o in obs):
        raise ValueError("observation budget outside (0, max_budget]")
    d = space.encoded_width
    if params is not None and n_restarts == 0:
        return SurrogateModel(obs, space, max_budget, params)

    rng = rng if rng is not None else np.random.default_rng(0)
    X = np.array([encode(o.config, space, o.budget, max_budget) for o in obs])
    y_raw = np.array([o.accuracy for o in obs])
    std = float(np.std(y_raw))
    y = (y_raw - float(np.mean(y_raw))) / (std if std > 1e-12 else 1.0)

    def objective(theta: np.ndarray) -> float:
        return log_marginal_likelihood(X, y, _params_from_log(theta, d, learn_noise))

    n_par = 5 + d + (1 if learn_noise else 0)
    lo, hi = math.log(PARAM_LO), math.log(PARAM_HI)
    start = (
        _log_from_params(params, learn_noise)
        if params is not None
        else np.log(np.array([1.0] + [0.5] * d + [3.0, 1.0, 0.5, 0.5]
                             + ([1e-3] if learn_noise else [])))
    )
    starts = [start]
    for _ in range(max(0, n_restarts - 1)):
        starts.append(rng.uniform(math.log(1e-2), math.log(1e2), size=n_par))

    best_theta, best_val = None, -np.inf
    for theta0 in starts:
        theta, val = _coordinate_search(objective, theta0, lo, hi)
        if val > best_val:
            best_theta, best_val = theta, val
    if best_theta is None or not np.isfinite(best_val):
        raise np.linalg.LinAlgError("no kernel parameters produced a valid factorization")
    return SurrogateModel(obs, space, max_budget, _params_from_log(best_theta, d, learn_noise))


def ei_values(mu: np.ndarray, sigma: np.ndarray, best: float) -> np.ndarray:
    """Expected improvement above ``best`` for accuracy maximization."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    out = np.maximum(mu - best, 0.0)
    pos = sigma > 0
    if np.any(pos):
        z = (mu[pos] - best) / sigma[pos]
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
        out[pos] = sigma[pos] * (z * ndtr(z) + pdf)
    return out


def expected_improvement(
    model: SurrogateModel, config: Configuration, budget: float, best_accuracy: float
) -> float:
    """EI of (config, budget) over the given best accuracy; always >= 0."""
    mu, sigma = model.predict(config, budget)
    return float(ei_values(np.array([mu]), np.array([sigma]), best_accuracy)[0])
