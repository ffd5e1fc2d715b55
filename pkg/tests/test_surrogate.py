import math

import numpy as np
import pytest

from conftest import oracle_lml, oracle_posterior
from hyperjump.space import Categorical, Configuration, Continuous, Integer, SearchSpace, encode
from hyperjump.surrogate import (
    KernelParams,
    Observation,
    ei_values,
    expected_improvement,
    fit,
    kernel_eval,
    log_marginal_likelihood,
)

SPACE_1D = SearchSpace((Continuous("x", 0.0, 1.0),))
UNIT_PARAMS = KernelParams(
    signal_variance=1.0,
    length_scales=(1.0,),
    budget_decay_rate=1.0,
    budget_basis_weights=((1.0, 0.0), (0.0, 0.0)),  # budget factor constant 1
)


def _obs(values, budget, acc, space=SPACE_1D, oid=None):
    cfg = Configuration(values, oid if oid is not None else 0)
    return Observation(cfg, budget, acc)


def test_matern_value_at_unit_scaled_distance():
    k = kernel_eval([0.0, 1.0], [1.0, 1.0], UNIT_PARAMS)
    expected = (1 + math.sqrt(5) + 5 / 3) * math.exp(-math.sqrt(5))
    assert k == pytest.approx(expected, abs=1e-12)
    assert k == pytest.approx(0.52399, abs=1e-5)


def test_kernel_positive_at_zero_distance_and_symmetric(rng):
    params = KernelParams(2.0, (0.5, 0.3), 2.0, ((1.0, 0.4), (0.4, 0.8)))
    for _ in range(20):
        p1 = rng.uniform(0, 1, 3)
        p2 = rng.uniform(0, 1, 3)
        assert kernel_eval(p1, p1, params) > 0
        assert kernel_eval(p1, p2, params) == pytest.approx(
            kernel_eval(p2, p1, params), rel=1e-12
        )


def test_kernel_layout_mismatch_rejected():
    with pytest.raises(ValueError):
        kernel_eval([0.0, 0.5, 1.0], [0.0, 1.0], UNIT_PARAMS)
    with pytest.raises(ValueError):
        kernel_eval([0.0, 0.5, 1.0], [0.0, 0.5, 1.0], UNIT_PARAMS)


def test_kernel_params_validation():
    with pytest.raises(ValueError):
        KernelParams(0.0, (1.0,), 1.0, ((1, 0), (0, 1)))
    with pytest.raises(ValueError):
        KernelParams(1.0, (-1.0,), 1.0, ((1, 0), (0, 1)))
    with pytest.raises(ValueError):
        KernelParams(1.0, (1.0,), 1.0, ((1.0, 2.0), (2.0, 1.0)))  # not PSD


def test_fit_rejects_empty_training_set():
    with pytest.raises(ValueError, match="empty training set"):
        fit([], SPACE_1D, 81.0)


def test_noise_free_interpolation():
    obs = [
        _obs((x,), b, math.sin(3 * x) * 0.4 + 0.5, oid=i)
        for i, (x, b) in enumerate([(0.1, 81.0), (0.3, 27.0), (0.5, 81.0),
                                    (0.7, 9.0), (0.9, 81.0)])
    ]
    model = fit(obs, SPACE_1D, 81.0, rng=np.random.default_rng(3))
    for o in obs:
        mu, sd = model.predict(o.config, o.budget)
        assert mu == pytest.approx(o.accuracy, abs=1e-4)
        assert sd <= 1e-3


def test_lml_matches_dense_oracle():
    X = np.array([[0.1, 1.0], [0.4, 1.0 / 3], [0.9, 1.0]])
    y = np.array([0.2, -0.1, 0.5])
    params = KernelParams(1.3, (0.4,), 2.0, ((0.8, 0.2), (0.2, 0.5)), 1e-6)
    jitter = 1e-6 * params.signal_variance
    ours = log_marginal_likelihood(X, y, params)
    assert ours == pytest.approx(oracle_lml(X, y, params, jitter), abs=1e-8)


def test_posterior_matches_dense_oracle(rng):
    space = SearchSpace((Continuous("x", 0.0, 1.0), Integer("n", 0, 4)))
    for trial in range(10):
        n = int(rng.integers(2, 21))
        obs = []
        for i in range(n):
            vals = space.sample_values(rng)
            budget = float(rng.choice([1.0, 3.0, 9.0, 27.0, 81.0]))
            obs.append(Observation(Configuration(vals, i), budget,
                                   float(rng.normal(0.5, 0.2))))
        model = fit(obs, space, 81.0, n_restarts=2, rng=np.random.default_rng(trial))
        X = np.array([encode(o.config, space, o.budget, 81.0) for o in obs])
        y = np.array([o.accuracy for o in obs])
        queries = [Configuration(space.sample_values(rng), 1000 + j) for j in range(5)]
        budgets = [float(rng.choice([1.0, 9.0, 81.0])) for _ in range(5)]
        Xq = np.array([encode(c, space, b, 81.0) for c, b in zip(queries, budgets)])
        om, os_ = oracle_posterior(X, y, model.params, model.jitter, Xq)
        for j, (c, b) in enumerate(zip(queries, budgets)):
            mu, sd = model.predict(c, b)
            assert mu == pytest.approx(om[j], abs=1e-6)
            assert sd == pytest.approx(os_[j], abs=1e-6)


def test_far_query_reverts_to_prior():
    params = KernelParams(1.0, (0.01,), 1.0, ((1.0, 0.0), (0.0, 0.0)), 1e-6)
    obs = [_obs((0.01 * i,), 81.0, 0.3 + 0.05 * i, oid=i) for i in range(4)]
    model = fit(obs, SPACE_1D, 81.0, params=params, n_restarts=0)
    far = Configuration((1.0,), 99)
    mu, sd = model.predict(far, 81.0)
    prior_mean = np.mean([o.accuracy for o in obs])
    prior_sd = model.prior_stddev(far, 81.0)
    assert mu == pytest.approx(prior_mean, rel=0.01)
    assert sd == pytest.approx(prior_sd, rel=0.01)


def test_posterior_stddev_never_negative(rng):
    obs = [_obs((float(x),), 81.0, float(a), oid=i)
           for i, (x, a) in enumerate(zip(rng.uniform(0, 1, 8), rng.normal(0, 1, 8)))]
    model = fit(obs, SPACE_1D, 81.0, n_restarts=2, rng=rng)
    for _ in range(50):
        c = Configuration((float(rng.uniform(0, 1)),), 0)
        _, sd = model.predict(c, float(rng.uniform(0.5, 81.0)))
        assert sd >= 0.0


def test_ei_closed_forms():
    phi0 = 1.0 / math.sqrt(2 * math.pi)
    assert ei_values(np.array([0.5]), np.array([0.1]), 0.5)[0] == pytest.approx(
        0.1 * phi0, abs=1e-9
    )
    assert ei_values(np.array([0.4]), np.array([0.0]), 0.5)[0] == 0.0
    assert ei_values(np.array([0.7]), np.array([0.0]), 0.5)[0] == pytest.approx(0.2)


def test_ei_nonnegative_and_increasing_in_mean():
    mus = np.linspace(-1.0, 1.0, 41)
    ei = ei_values(mus, np.full_like(mus, 0.2), 0.3)
    assert np.all(ei >= 0.0)
    assert np.all(np.diff(ei) > 0.0)


def test_expected_improvement_uses_model_posterior():
    obs = [_obs((0.2,), 81.0, 0.4, oid=0), _obs((0.8,), 81.0, 0.6, oid=1)]
    model = fit(obs, SPACE_1D, 81.0, rng=np.random.default_rng(0))
    val = expected_improvement(model, Configuration((0.5,), 2), 81.0, 0.6)
    assert val >= 0.0


def test_added_observation_collapses_uncertainty():
    obs = [_obs((0.1,), 81.0, 0.3, oid=0), _obs((0.9,), 81.0, 0.7, oid=1)]
    model = fit(obs, SPACE_1D, 81.0, rng=np.random.default_rng(1))
    q = Configuration((0.55,), 7)
    _, sd_before = model.predict(q, 81.0)
    assert sd_before > 1e-3
    refit = fit(obs + [Observation(q, 81.0, 0.5)], SPACE_1D, 81.0,
                params=model.params, n_restarts=0)
    _, sd_after = refit.predict(q, 81.0)
    assert sd_after <= 1e-3


def test_factorization_succeeds_on_random_sets(rng):
    space = SearchSpace((Continuous("x", 0.0, 1.0), Categorical("k", ("a", "b"))))
    for trial in range(5):
        obs = [
            Observation(Configuration((float(rng.uniform(0, 1)),
                                       "ab"[int(rng.integers(2))]), i),
                        float(rng.choice([1.0, 3.0, 81.0])), float(rng.normal()))
            for i in range(12)
        ]
        model = fit(obs, space, 81.0, n_restarts=2, rng=rng)
        assert model.n_observations <= 12  # value-duplicates collapse


def test_duplicate_observation_keeps_latest():
    cfg = Configuration((0.5,), 0)
    obs = [Observation(cfg, 81.0, 0.2), Observation(cfg, 81.0, 0.9)]
    model = fit(obs, SPACE_1D, 81.0, rng=np.random.default_rng(0))
    assert model.n_observations == 1
    mu, _ = model.predict(cfg, 81.0)
    assert mu == pytest.approx(0.9, abs=1e-3)


def test_predict_rejects_budget_out_of_range():
    model = fit([_obs((0.5,), 81.0, 0.5)], SPACE_1D, 81.0, params=UNIT_PARAMS, n_restarts=0)
    with pytest.raises(ValueError):
        model.predict(Configuration((0.5,), 0), 0.0)
    with pytest.raises(ValueError):
        model.predict(Configuration((0.5,), 0), 100.0)


def test_usable_after_d_plus_one_observations():
    space = SearchSpace((Integer("a", 0, 3), Categorical("k", ("x", "y"))))
    # encoded width = 1 + 2 = 3, so 4 observations are needed
    obs = [Observation(Configuration((i, "x"), i), 81.0, 0.1 * i) for i in range(3)]
    model = fit(obs, space, 81.0, n_restarts=1, rng=np.random.default_rng(0))
    assert not model.is_usable
    obs.append(Observation(Configuration((3, "y"), 3), 81.0, 0.5))
    model = fit(obs, space, 81.0, n_restarts=1, rng=np.random.default_rng(0))
    assert model.is_usable
