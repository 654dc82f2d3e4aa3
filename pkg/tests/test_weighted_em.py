"""Tempered weighted EM: step functions, closed-form updates, convergence."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from conftest import make_blobs, make_params, make_prior
from bobgmm.errors import DegeneratePosteriorError, EmFailure, InvalidDofError
from bobgmm.gmm_core import GmmParams, NiwDirichletPrior, log_unnorm_posterior
from bobgmm.weighted_em import (
    EmSettings,
    TemperingProfile,
    WeightDraw,
    default_tempering_grid,
    e_step,
    m_step,
    run_weighted_em,
    temperature,
    tune_tempering,
    weighted_log_posterior,
)


# ---------------------------------------------------------------- containers

def test_weight_draw_validation():
    with pytest.raises(ValueError):
        WeightDraw(np.array([1.0, -0.5]), 1.0, np.ones(2), np.ones(2))
    with pytest.raises(ValueError):
        WeightDraw(np.ones(3), -1.0, np.ones(2), np.ones(2))
    with pytest.raises(ValueError):
        WeightDraw(np.array([np.nan, 1.0]), 1.0, np.ones(2), np.ones(2))
    w = WeightDraw.unweighted(4, 2)
    np.testing.assert_array_equal(w.likelihood_weights, np.ones(4))
    assert w.prior_weight_pi == 1.0


def test_profile_and_settings_validation():
    with pytest.raises(ValueError):
        TemperingProfile(1.0, 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        TemperingProfile(0.5, 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        EmSettings(max_iter=0)
    with pytest.raises(ValueError):
        EmSettings(tol=0.0)


# --------------------------------------------------------------- temperature

def test_temperature_worked_example():
    # tau = (t + c r) / r = 1.5, so T = 1 + 0.5^1.5 + sin(1.5)/1.5
    profile = TemperingProfile(0.5, 1.0, 1.0, 2.0)
    expected = 1.0 + 0.5**1.5 + math.sin(1.5) / 1.5
    assert temperature(profile, 1) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(2.0185500, abs=1e-6)


def test_temperature_decays_toward_one():
    profile = TemperingProfile(0.5, 1.0, 1.0, 2.0)
    assert temperature(profile, 500) == pytest.approx(1.0, abs=1e-2)


def test_temperature_rejects_bad_input():
    profile = TemperingProfile(0.5, 1.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        temperature(profile, 0)
    # a large negative oscillation amplitude drives T below zero
    with pytest.raises(ValueError):
        temperature(TemperingProfile(0.5, -5.0, 1.0, 2.0), 1)


# -------------------------------------------------------------------- E-step

def test_e_step_matches_direct_oracle():
    Y = np.array([[0.0], [1.0], [2.5]])
    params = GmmParams([0.4, 0.6], [[-1.0], [2.0]], [[[1.0]], [[2.25]]])
    u = np.array([1.0, 2.0, 0.5])
    T = 1.3
    Q = e_step(Y, params, u, T)
    for i in range(3):
        scores = np.array(
            [
                u[i] * (np.log(params.weights[k]) + norm.logpdf(Y[i, 0], params.means[k, 0], np.sqrt(params.covs[k, 0, 0])))
                for k in range(2)
            ]
        )
        expected = np.exp(scores / T) / np.exp(scores / T).sum()
        np.testing.assert_allclose(Q[i], expected, atol=1e-10)


def test_e_step_requires_positive_temperature():
    params = make_params(np.random.default_rng(0), 2, 1)
    with pytest.raises(ValueError):
        e_step(np.zeros((3, 1)), params, np.ones(3), 0.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), T=st.floats(0.1, 10.0))
def test_e_step_rows_form_simplex(seed, T):
    rng = np.random.default_rng(seed)
    params = make_params(rng, 3, 2)
    Y = rng.normal(size=(6, 2))
    Q = e_step(Y, params, rng.exponential(size=6), T)
    assert np.all(Q >= 0) and np.all(Q <= 1)
    np.testing.assert_allclose(Q.sum(axis=1), np.ones(6), atol=1e-12)


def test_high_temperature_flattens_responsibilities():
    rng = np.random.default_rng(1)
    params = make_params(rng, 2, 2)
    Y = rng.normal(size=(5, 2))
    Q = e_step(Y, params, np.ones(5), 1e8)
    np.testing.assert_allclose(Q, 0.5, atol=1e-6)


# -------------------------------------------------------------------- M-step

def _hand_m_step_1d(Y, Q, w, prior):
    """Independent scalar evaluation of the closed-form update for d = 1."""
    y = Y[:, 0]
    u = w.likelihood_weights
    K = Q.shape[1]
    pis, mus, sigmas = np.empty(K), np.empty(K), np.empty(K)
    a_bar = np.empty(K)
    for k in range(K):
        n_t = float(u @ Q[:, k])
        lam_t = w.prior_weights_mu[k] * prior.precisions_scale[k]
        psi_t = w.prior_weights_sigma[k] * prior.scale_mats[k, 0, 0]
        nu_t = w.prior_weights_sigma[k] * (prior.dofs[k] + 3.0) - 3.0
        ybar = float((u * Q[:, k]) @ y) / n_t
        S = float((u * Q[:, k]) @ (y - ybar) ** 2)
        beta = prior.prior_means[k, 0]
        beta_bar = (lam_t * beta + n_t * ybar) / (lam_t + n_t)
        psi_bar = psi_t + S + lam_t * n_t / (lam_t + n_t) * (ybar - beta) ** 2
        nu_bar = nu_t + n_t
        mus[k] = beta_bar
        sigmas[k] = psi_bar / (nu_bar + 3.0)
        a_bar[k] = (prior.concentrations[k] - 1.0) * w.prior_weight_pi + 1.0 + n_t
    numer = np.maximum(a_bar - 1.0, 0.0)
    pis = numer / numer.sum()
    return pis, mus, sigmas


def test_m_step_matches_hand_formulas_1d():
    rng = np.random.default_rng(21)
    Y = rng.normal(size=(12, 1)) * 2.0
    prior = make_prior(rng, 2, 1)
    w = WeightDraw(rng.exponential(size=12), 0.7, rng.exponential(size=2), rng.exponential(size=2))
    params = make_params(rng, 2, 1)
    Q = e_step(Y, params, w.likelihood_weights)
    out = m_step(Y, Q, w, prior)
    pis, mus, sigmas = _hand_m_step_1d(Y, Q, w, prior)
    np.testing.assert_allclose(out.weights, pis, atol=1e-12)
    np.testing.assert_allclose(out.means[:, 0], mus, atol=1e-12)
    np.testing.assert_allclose(out.covs[:, 0, 0], sigmas, atol=1e-12)


def test_m_step_empty_component_reverts_to_prior_mode():
    rng = np.random.default_rng(22)
    prior = make_prior(rng, 2, 2)
    Y = rng.normal(size=(6, 2))
    Q = np.column_stack([np.ones(6), np.zeros(6)])  # component 2 gets no mass
    w = WeightDraw(np.ones(6), 1.0, np.ones(2), np.ones(2))
    out = m_step(Y, Q, w, prior)
    d = 2
    np.testing.assert_allclose(out.means[1], prior.prior_means[1], atol=1e-12)
    np.testing.assert_allclose(
        out.covs[1], prior.scale_mats[1] / (prior.dofs[1] + d + 2.0), atol=1e-12
    )


def test_m_step_blocks_are_local_maxima_of_surrogate():
    """Random perturbations of any single block never improve the surrogate."""
    rng = np.random.default_rng(23)
    Y = rng.normal(size=(15, 2)) + rng.integers(0, 2, size=(15, 1)) * 4.0
    prior = make_prior(rng, 2, 2)
    w = WeightDraw(rng.exponential(size=15), 0.9, rng.exponential(size=2), rng.exponential(size=2) + 0.3)
    Q = e_step(Y, make_params(rng, 2, 2), w.likelihood_weights)

    def surrogate(params):
        from scipy.stats import multivariate_normal

        total = 0.0
        for i in range(Y.shape[0]):
            for k in range(2):
                total += w.likelihood_weights[i] * Q[i, k] * (
                    np.log(params.weights[k])
                    + multivariate_normal.logpdf(Y[i], params.means[k], params.covs[k])
                )
        for k in range(2):
            inv = np.linalg.inv(params.covs[k])
            logdet = np.linalg.slogdet(params.covs[k])[1]
            diff = params.means[k] - prior.prior_means[k]
            total += w.prior_weight_pi * (prior.concentrations[k] - 1.0) * np.log(params.weights[k])
            total -= w.prior_weights_sigma[k] * (
                ((prior.dofs[k] + 2) / 2.0 + 1.0) * logdet + 0.5 * np.trace(prior.scale_mats[k] @ inv)
            )
            total -= w.prior_weights_mu[k] * 0.5 * prior.precisions_scale[k] * diff @ inv @ diff
        return total

    base_params = m_step(Y, Q, w, prior)
    base = surrogate(base_params)
    for trial in range(40):
        kind = trial % 3
        means = base_params.means.copy()
        covs = base_params.covs.copy()
        weights = base_params.weights.copy()
        if kind == 0:
            means[trial % 2] += rng.normal(scale=1e-3, size=2)
        elif kind == 1:
            L = np.linalg.cholesky(covs[trial % 2])
            L += np.tril(rng.normal(scale=1e-3, size=(2, 2)))
            covs[trial % 2] = L @ L.T
        else:
            weights = weights + rng.normal(scale=1e-3, size=2)
            weights = np.abs(weights) / np.abs(weights).sum()
        perturbed = surrogate(GmmParams(weights, means, covs))
        assert perturbed <= base + 1e-9


def test_m_step_invalid_dof_error():
    # an improper prior with very negative dof makes the denominator negative
    prior = NiwDirichletPrior(
        [1.5, 1.5], np.zeros((2, 1)), [1.0, 1.0], [-20.0, -20.0], np.ones((2, 1, 1))
    )
    Y = np.array([[0.0], [1.0]])
    Q = np.full((2, 2), 0.5)
    w = WeightDraw(np.full(2, 0.5), 1.0, np.ones(2), np.ones(2))
    with pytest.raises(InvalidDofError):
        m_step(Y, Q, w, prior)


def test_m_step_degenerate_pi_error():
    # zero likelihood weights and unit concentrations leave no mass anywhere
    prior = NiwDirichletPrior(
        [1.0, 1.0], np.zeros((2, 1)), [1.0, 1.0], [3.0, 3.0], np.ones((2, 1, 1))
    )
    Y = np.array([[0.0], [1.0]])
    Q = np.full((2, 2), 0.5)
    w = WeightDraw(np.zeros(2), 1.0, np.ones(2), np.ones(2))
    with pytest.raises(DegeneratePosteriorError):
        m_step(Y, Q, w, prior)


# ------------------------------------------------------------------ run loop

def test_run_weighted_em_monotone_and_consistent():
    rng = np.random.default_rng(31)
    Y, _ = make_blobs(rng, 20, 2, 2)
    prior = make_prior(rng, 2, 2)
    w = WeightDraw(rng.exponential(size=20), 1.0, np.ones(2), np.ones(2))
    init = make_params(rng, 2, 2)
    result = run_weighted_em(Y, w, prior, init)
    assert result.converged
    assert result.log_posterior >= weighted_log_posterior(Y, init, w, prior)
    # reported objective matches an independent re-evaluation at the output
    assert result.log_posterior == pytest.approx(
        weighted_log_posterior(Y, result.params, w, prior), abs=1e-10
    )
    np.testing.assert_allclose(result.params.weights.sum(), 1.0, atol=1e-12)
    for k in range(2):
        np.linalg.cholesky(result.params.covs[k])


def test_run_weighted_em_ascent_trace():
    rng = np.random.default_rng(32)
    Y, _ = make_blobs(rng, 25, 1, 2)
    prior = make_prior(rng, 2, 1)
    w = WeightDraw(rng.exponential(size=25), 0.5, rng.exponential(size=2), rng.exponential(size=2))
    params = make_params(rng, 2, 1)
    prev = weighted_log_posterior(Y, params, w, prior)
    for _ in range(25):
        Q = e_step(Y, params, w.likelihood_weights)
        params = m_step(Y, Q, w, prior)
        cur = weighted_log_posterior(Y, params, w, prior)
        assert cur >= prev - 1e-8
        prev = cur


def test_run_weighted_em_flags_non_convergence():
    rng = np.random.default_rng(33)
    Y, _ = make_blobs(rng, 20, 2, 2)
    prior = make_prior(rng, 2, 2)
    w = WeightDraw.unweighted(20, 2)
    result = run_weighted_em(Y, w, prior, make_params(rng, 2, 2), EmSettings(max_iter=1))
    assert not result.converged
    assert result.iterations == 1


def test_run_weighted_em_wraps_failures():
    prior = NiwDirichletPrior(
        [1.5, 1.5], np.zeros((2, 1)), [1.0, 1.0], [-20.0, -20.0], np.ones((2, 1, 1))
    )
    rng = np.random.default_rng(34)
    Y = rng.normal(size=(8, 1))
    w = WeightDraw(np.full(8, 0.1), 1.0, np.ones(2), np.ones(2))
    with pytest.raises(EmFailure):
        run_weighted_em(Y, w, prior, make_params(rng, 2, 1))


def test_tempered_run_reaches_good_mode():
    rng = np.random.default_rng(35)
    Y, _ = make_blobs(rng, 40, 2, 2)
    prior = make_prior(rng, 2, 2)
    w = WeightDraw.unweighted(40, 2)
    profile = TemperingProfile(0.6, 1.0, 1.0, 2.0)
    init = make_params(rng, 2, 2)
    result = run_weighted_em(Y, w, prior, init, EmSettings(profile=profile))
    flat = run_weighted_em(Y, w, prior, init)
    assert result.log_posterior >= flat.log_posterior - 1e-6


# ----------------------------------------------------------------- tempering

def test_default_grid_is_deduplicated_and_valid():
    grid = default_tempering_grid()
    assert len(grid) == len({p.as_tuple() for p in grid})
    constant = [p for p in grid if p.a == 0.0 and p.b == 0.0]
    assert len(constant) == 1
    for p in grid:
        assert 0.0 <= p.a < 1.0 and p.c > 0 and p.r > 0


def test_tune_tempering_matches_exhaustive_oracle():
    rng = np.random.default_rng(36)
    Y, _ = make_blobs(rng, 30, 1, 2)
    prior = make_prior(rng, 2, 1)
    init = make_params(rng, 2, 1)
    grid = [TemperingProfile(0.0, 0.0, 1.0, 1.0), TemperingProfile(0.3, 0.5, 2.0, 4.0)]
    best = tune_tempering(Y, prior, grid, init)
    w = WeightDraw.unweighted(30, 2)
    scores = [
        run_weighted_em(Y, w, prior, init, EmSettings(profile=p)).log_posterior for p in grid
    ]
    assert best == grid[int(np.argmax(scores))]


def test_tune_tempering_empty_grid():
    rng = np.random.default_rng(37)
    with pytest.raises(ValueError):
        tune_tempering(np.zeros((5, 1)), make_prior(rng, 2, 1), [], make_params(rng, 2, 1))
