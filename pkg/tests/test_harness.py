"""Simulation, hyperparameter selection, initialization, and run pipelines."""

import math

import numpy as np
import pytest

from bobgmm.bayes_opt import BoBudget
from bobgmm.errors import EmFailure
from bobgmm.gmm_core import NiwDirichletPrior, log_likelihood
from bobgmm.harness import (
    RunConfig,
    SimSetting,
    TABLE_SETTINGS,
    compare_methods,
    cv_select_lambda_nu,
    default_box,
    default_prior,
    generate_simulation,
    init_params,
    run_bob,
    run_wbb,
    standardize,
    worker_count,
)
from bobgmm.conjugate_oracle import posterior_hyper, sample_bayes_posterior
from bobgmm.random_weighting import SeededRng, WeightScheme
from bobgmm.weighted_em import EmSettings, WeightDraw, run_weighted_em


FAST_EM = EmSettings(max_iter=200, tol=1e-7)


# ---------------------------------------------------------------- simulation

def test_setting_table_and_lookup():
    assert TABLE_SETTINGS[1] == (50, 5, 2)
    setting = SimSetting.from_id(9)
    assert (setting.n, setting.d, setting.K) == (150, 15, 4)
    with pytest.raises(ValueError):
        SimSetting.from_id(10)


def test_generate_simulation_mean_structure():
    setting = SimSetting(4000, 5, 2)
    Y, Z = generate_simulation(setting, SeededRng(0))
    assert Y.shape == (4000, 5) and Z.shape == (4000, 2)
    np.testing.assert_array_equal(Z.sum(axis=1), np.ones(4000))
    informative = math.ceil(0.6 * 5)
    for k in range(2):
        members = Y[Z[:, k] == 1]
        target = 5 * (k + 1) - 4
        assert np.all(np.abs(members[:, :informative].mean(axis=0) - target) < 0.2)
        assert np.all(np.abs(members[:, informative:].mean(axis=0)) < 0.2)


def test_generate_simulation_reproducible():
    setting = SimSetting.from_id(1)
    Y1, Z1 = generate_simulation(setting, SeededRng(3))
    Y2, Z2 = generate_simulation(setting, SeededRng(3))
    np.testing.assert_array_equal(Y1, Y2)
    np.testing.assert_array_equal(Z1, Z2)


# ----------------------------------------------------------- standardization

def test_standardize_two_point_example():
    Ys, transform = standardize(np.array([[0.0], [2.0]]))
    np.testing.assert_allclose(Ys[:, 0], [-math.sqrt(0.5), math.sqrt(0.5)], atol=1e-12)
    np.testing.assert_allclose(transform.invert(Ys), [[0.0], [2.0]], atol=1e-12)


def test_standardize_columns_and_errors():
    rng = np.random.default_rng(1)
    Y = rng.normal(size=(30, 3)) * [1.0, 5.0, 0.2] + [0.0, 3.0, -1.0]
    Ys, _ = standardize(Y)
    np.testing.assert_allclose(Ys.mean(axis=0), np.zeros(3), atol=1e-12)
    np.testing.assert_allclose(Ys.std(axis=0, ddof=1), np.ones(3), atol=1e-12)
    Y[:, 1] = 2.0
    with pytest.raises(ValueError):
        standardize(Y)


# ----------------------------------------------------------- prior and box

def test_default_prior_values():
    prior = default_prior(3, 2, 0.5, 4.0)
    np.testing.assert_array_equal(prior.concentrations, np.full(3, 1.1))
    np.testing.assert_array_equal(prior.prior_means, np.zeros((3, 2)))
    np.testing.assert_array_equal(prior.precisions_scale, np.full(3, 0.5))
    np.testing.assert_array_equal(prior.scale_mats[1], np.eye(2))


def test_default_box():
    lower, upper = default_box(2)
    assert lower.shape == upper.shape == (6,)
    assert lower[0] == 1.0 and upper[0] == 1.5
    assert np.all(lower[1:] == 1e-5) and np.all(upper[1:] == 1.5)


# -------------------------------------------------------------- initializer

def test_init_params_recovers_separated_clusters():
    rng = np.random.default_rng(2)
    centers = np.array([[-4.0, -4.0], [4.0, 4.0]])
    labels = rng.integers(0, 2, size=100)
    Y = centers[labels] + rng.standard_normal((100, 2))
    Ys, transform = standardize(Y)
    prior = default_prior(2, 2, 1.0, 4.0)
    init = init_params(Ys, 2, 5, SeededRng(4), prior)
    true_std = transform.apply(centers)
    # canonical ordering sorts components by mean vector
    assert np.all(np.diff(init.means[:, 0]) > 0)
    for k in range(2):
        assert np.linalg.norm(init.means[k] - true_std[k]) < 0.5


def test_init_params_deterministic():
    rng = np.random.default_rng(5)
    Y = rng.normal(size=(40, 2)) + rng.integers(0, 2, size=(40, 1)) * 5.0
    prior = default_prior(2, 2, 1.0, 4.0)
    a = init_params(Y, 2, 4, SeededRng(6), prior)
    b = init_params(Y, 2, 4, SeededRng(6), prior)
    np.testing.assert_array_equal(a.means, b.means)
    np.testing.assert_array_equal(a.covs, b.covs)


def test_init_params_needs_distinct_points():
    prior = default_prior(2, 1, 1.0, 3.0)
    with pytest.raises(Exception):
        init_params(np.zeros((10, 1)), 2, 3, SeededRng(7), prior)


# ---------------------------------------------------------- cross-validation

def test_cv_matches_exhaustive_oracle():
    setting = SimSetting(60, 2, 2)
    Y, _ = generate_simulation(setting, SeededRng(8))
    Ys, _ = standardize(Y)
    grid_lambda, grid_nu = [0.1, 10.0], [4.0, 20.0]
    rng = SeededRng(9)
    picked = cv_select_lambda_nu(Ys, 2, grid_lambda, grid_nu, 0.75, rng, settings=FAST_EM)

    # independent rerun of the same protocol
    perm = SeededRng(9).child(0).generator.permutation(60)
    n_train = int(math.floor(0.75 * 60))
    train, valid = Ys[perm[:n_train]], Ys[perm[n_train:]]
    w = WeightDraw.unweighted(n_train, 2)
    best, best_value = None, -np.inf
    for lam in sorted(grid_lambda):
        for nu in sorted(grid_nu):
            prior = default_prior(2, 2, lam, nu)
            init = init_params(train, 2, 3, SeededRng(9).child(1), prior)
            fit = run_weighted_em(train, w, prior, init, FAST_EM).params
            value = log_likelihood(valid, fit)
            if value > best_value:
                best, best_value = (lam, nu), value
    assert picked == best


def test_cv_validation_errors():
    rng = SeededRng(10)
    Y = np.random.default_rng(0).normal(size=(20, 1))
    with pytest.raises(ValueError):
        cv_select_lambda_nu(Y, 2, [1.0], [3.0], 1.5, rng)
    with pytest.raises(ValueError):
        cv_select_lambda_nu(Y, 2, [], [3.0], 0.75, rng)


# ------------------------------------------------------------- run pipelines

def _setting1_data(seed):
    Y, Z = generate_simulation(SimSetting.from_id(1), SeededRng(seed))
    Ys, _ = standardize(Y)
    return Ys, Z


def test_run_wbb_reproducible(monkeypatch):
    Ys, _ = _setting1_data(11)
    prior = default_prior(2, 5, 1.0, 7.0)
    cfg = RunConfig(scheme="wbb1", S=40, seed=11, em_settings=FAST_EM, n_restarts=3)
    a = run_wbb(Ys, prior, cfg)
    b = run_wbb(Ys, prior, cfg)
    np.testing.assert_array_equal(a.draws, b.draws)
    assert a.diagnostics["n_draws"] == 40
    assert 0.0 <= a.diagnostics["converged_fraction"] <= 1.0


def test_run_wbb_worker_split_is_invisible(monkeypatch):
    Ys, _ = _setting1_data(12)
    prior = default_prior(2, 5, 1.0, 7.0)
    cfg = RunConfig(scheme="wbb2", S=24, seed=12, em_settings=FAST_EM, n_restarts=3)
    serial = run_wbb(Ys, prior, cfg)
    monkeypatch.setenv("BOBGMM_WORKERS", "3")
    assert worker_count() == 3
    parallel = run_wbb(Ys, prior, cfg)
    np.testing.assert_array_equal(serial.draws, parallel.draws)


def test_run_wbb_rejects_bob_scheme():
    Ys, _ = _setting1_data(13)
    prior = default_prior(2, 5, 1.0, 7.0)
    with pytest.raises(ValueError):
        run_wbb(Ys, prior, RunConfig(scheme="bob", S=5, seed=13))
    with pytest.raises(ValueError):
        run_bob(Ys, prior, RunConfig(scheme="wlb", S=5, seed=13))


def test_run_bob_collapsed_box_equals_wlb_run():
    Ys, _ = _setting1_data(14)
    prior = default_prior(2, 5, 1.0, 7.0)
    point = np.zeros(6)
    point[0] = 1.0
    bob_cfg = RunConfig(
        scheme="bob", S=30, seed=14, em_settings=FAST_EM, lower=point, upper=point, n_restarts=3
    )
    wlb_cfg = RunConfig(scheme="wlb", S=30, seed=14, em_settings=FAST_EM, n_restarts=3)
    bob = run_bob(Ys, prior, bob_cfg)
    wlb = run_wbb(Ys, prior, wlb_cfg)
    np.testing.assert_array_equal(bob.draws, wlb.draws)
    np.testing.assert_array_equal(bob.x_star, point)
    assert bob.bo_trace == []


def test_run_bob_small_budget_end_to_end():
    Ys, _ = _setting1_data(15)
    prior = default_prior(2, 5, 1.0, 7.0)
    cfg = RunConfig(
        scheme="bob",
        S=25,
        seed=15,
        batch_size=25,
        bo_budget=BoBudget(n_init=3, n_iter=2),
        em_settings=FAST_EM,
        n_restarts=3,
    )
    run = run_bob(Ys, prior, cfg)
    assert run.draws.shape[0] == 25
    lower, upper = default_box(2)
    assert np.all(run.x_star >= lower) and np.all(run.x_star <= upper)
    assert len(run.bo_trace) >= 3
    assert run.diagnostics["tune_elapsed"] > 0


def test_sampling_raises_when_most_draws_fail():
    rng = np.random.default_rng(16)
    Y = rng.normal(size=(10, 1))
    prior = NiwDirichletPrior(
        np.full(2, 1.5), np.zeros((2, 1)), np.ones(2), np.full(2, -30.0), np.ones((2, 1, 1))
    )
    from conftest import make_params

    init = make_params(rng, 2, 1)
    cfg = RunConfig(scheme="wbb2", S=20, seed=16, em_settings=FAST_EM)
    with pytest.raises(EmFailure):
        run_wbb(Y, prior, cfg, init=init)


def test_compare_methods_report_structure():
    Ys, Z = _setting1_data(17)
    prior = default_prior(2, 5, 1.0, 7.0)
    hyper = posterior_hyper(Ys, Z, prior)
    bayes = sample_bayes_posterior(hyper, 300, SeededRng(17).child(7))
    cfg = RunConfig(scheme="wbb1", S=120, seed=17, em_settings=FAST_EM, n_restarts=3)
    draws_a = run_wbb(Ys, prior, cfg).draws
    draws_b = run_wbb(Ys, prior, RunConfig(scheme="wbb1", S=120, seed=18, em_settings=FAST_EM, n_restarts=3)).draws
    report = compare_methods(bayes, {"wbb1": [draws_a, draws_b]}, 2, 5, SeededRng(17).child(5))
    rec = report["wbb1"]
    assert rec["n_runs"] == 2
    assert 0.0 <= rec["tv"] <= 1.0 and 0.0 <= rec["ks"] <= 1.0
    assert "tv_iqr" in rec and len(rec["tv_all"]) == 2


def test_worker_count_default(monkeypatch):
    monkeypatch.delenv("BOBGMM_WORKERS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("BOBGMM_WORKERS", "4")
    assert worker_count() == 4
