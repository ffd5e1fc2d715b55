"""Shared fixtures and independent oracles for the test suite.

Oracles deliberately re-derive results through a different route than
the package (dense solves, Monte Carlo, exhaustive enumeration) so they
stay independent of the code paths they check.
"""
from __future__ import annotations

import math

import numpy as np
import pytest

from hyperjump.risk import Gaussian, PointMass
from hyperjump.space import Configuration


def mc_ear(discarded, selected, n_samples=1_000_000, seed=0):
    """Monte-Carlo estimate of E[(max_D - max_S)+] with paired sampling."""
    rng = np.random.default_rng(seed)

    def draw(members):
        cols = [
            np.full(n_samples, m.value)
            if isinstance(m, PointMass)
            else rng.normal(m.mean, m.stddev, n_samples)
            for m in members
        ]
        return np.max(np.vstack(cols), axis=0)

    return float(np.mean(np.clip(draw(discarded) - draw(selected), 0.0, None)))


def oracle_kernel_value(x1, x2, params) -> float:
    """Kernel recomputed element-wise with scalar math."""
    d = len(params.length_scales)
    r2 = sum(((x1[i] - x2[i]) / params.length_scales[i]) ** 2 for i in range(d))
    r = math.sqrt(r2)
    m52 = (1.0 + math.sqrt(5) * r + 5.0 * r2 / 3.0) * math.exp(-math.sqrt(5) * r)
    w = np.asarray(params.budget_basis_weights)
    phi1 = np.array([1.0, math.exp(-params.budget_decay_rate * x1[-1])])
    phi2 = np.array([1.0, math.exp(-params.budget_decay_rate * x2[-1])])
    return params.signal_variance * m52 * float(phi1 @ w @ phi2)


def oracle_posterior(X, y, params, jitter, Xq):
    """Dense-solve GP posterior with the same standardization convention."""
    n = len(y)
    y_mean = float(np.mean(y))
    y_std = float(np.std(y)) or 1.0
    ys = (np.asarray(y) - y_mean) / y_std
    K = np.array([[oracle_kernel_value(a, b, params) for b in X] for a in X])
    A = K + (params.noise_variance + jitter) * np.eye(n)
    A_inv = np.linalg.inv(A)
    means, stds = [], []
    for q in Xq:
        ks = np.array([oracle_kernel_value(q, b, params) for b in X])
        mu = y_mean + y_std * float(ks @ A_inv @ ys)
        var = oracle_kernel_value(q, q, params) - float(ks @ A_inv @ ks)
        means.append(mu)
        stds.append(y_std * math.sqrt(max(var, 0.0)))
    return np.array(means), np.array(stds)


def oracle_lml(X, y, params, jitter) -> float:
    """Log marginal likelihood via slogdet/solve on the dense matrix."""
    n = len(y)
    K = np.array([[oracle_kernel_value(a, b, params) for b in X] for a in X])
    A = K + (params.noise_variance + jitter) * np.eye(n)
    sign, logdet = np.linalg.slogdet(A)
    assert sign > 0
    alpha = np.linalg.solve(A, y)
    return float(-0.5 * np.asarray(y) @ alpha - 0.5 * logdet - 0.5 * n * math.log(2 * math.pi))


def sh_survivor(table: dict, configs, rungs, eta: int):
    """Brute-force Successive Halving on a dense (values, rung) table."""
    alive = list(configs)
    for rung in rungs[:-1]:
        ranked = sorted(alive, key=lambda v: (-table[(v, rung)], repr(v)))
        alive = ranked[: max(1, len(alive) // eta)]
    ranked = sorted(alive, key=lambda v: (-table[(v, rungs[-1])], repr(v)))
    return ranked[0]


def hb_ladder(max_budget: float, eta: int):
    """Original bracket formulas: (n0, b0) per bracket of one iteration."""
    s_max = int(math.floor(math.log(max_budget) / math.log(eta) + 1e-12))
    out = []
    for s in range(s_max, -1, -1):
        n = math.ceil((s_max + 1) / (s + 1) * eta**s)
        out.append((n, max_budget * eta ** (-s)))
    return out


class TablePredictor:
    """Deterministic stand-in for a fitted model in risk/engine tests."""

    is_usable = True

    def __init__(self, table: dict):
        self.table = dict(table)  # (config id, budget) -> (mean, stddev)

    def predict(self, config: Configuration, budget: float):
        return self.table[(config.id, float(budget))]

    def predict_batch(self, configs, budget: float):
        pairs = [self.table[(c.id, float(budget))] for c in configs]
        return (np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))


def make_configs(values_list):
    return [Configuration(tuple(v) if isinstance(v, (tuple, list)) else (v,), i)
            for i, v in enumerate(values_list)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
