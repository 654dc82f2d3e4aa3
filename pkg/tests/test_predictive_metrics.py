"""Posterior-predictive sampling and the TV/KS sample distances."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_params
from bobgmm.gmm_core import flatten
from bobgmm.predictive_metrics import (
    PredictiveDraws,
    ks_hat,
    sample_mixture,
    sample_predictive,
    sample_predictive_flat,
    tv_hat,
)
from bobgmm.random_weighting import SeededRng


def test_sample_mixture_mean_matches_mixture_moment():
    rng = np.random.default_rng(0)
    params = make_params(rng, 2, 2)
    draws = sample_mixture(params, 20000, np.random.default_rng(1))
    expected = params.weights @ params.means
    se = draws.std(axis=0, ddof=1) / np.sqrt(draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - expected) < 3 * se)


def test_sample_predictive_one_row_per_draw():
    rng = np.random.default_rng(2)
    draws = [make_params(rng, 2, 3) for _ in range(7)]
    pred = sample_predictive(draws, SeededRng(0).child(0), "toy")
    assert pred.samples.shape == (7, 3)
    assert pred.source_label == "toy"
    with pytest.raises(ValueError):
        sample_predictive([], SeededRng(0).child(0))


def test_sample_predictive_reproducible_and_partition_independent():
    rng = np.random.default_rng(3)
    draws = [make_params(rng, 2, 2) for _ in range(6)]
    a = sample_predictive(draws, SeededRng(1).child(0))
    b = sample_predictive(draws, SeededRng(1).child(0))
    np.testing.assert_array_equal(a.samples, b.samples)
    head = sample_predictive(draws[:3], SeededRng(1).child(0))
    np.testing.assert_array_equal(head.samples, a.samples[:3])


def test_sample_predictive_flat_matches_param_version():
    rng = np.random.default_rng(4)
    draws = [make_params(rng, 2, 2) for _ in range(5)]
    flat = np.array([flatten(p) for p in draws])
    a = sample_predictive(draws, SeededRng(2).child(0))
    b = sample_predictive_flat(flat, 2, 2, SeededRng(2).child(0))
    np.testing.assert_allclose(a.samples, b.samples, atol=1e-12)


def test_tv_hand_binned_example():
    # pooled range [0, 3] with 4 equal bins: pmfs (1,1,1,1)/4 and (2,0,2,0)/4
    A = np.array([0.0, 1.0, 2.0, 3.0])[:, None]
    B = np.array([0.0, 0.0, 2.0, 2.0])[:, None]
    assert tv_hat(A, B, bins=4) == pytest.approx(0.5, abs=1e-12)


def test_tv_identical_sets_is_zero():
    A = np.random.default_rng(5).normal(size=(100, 2))
    assert tv_hat(A, A.copy()) == 0.0


def test_ks_hand_example():
    A = np.array([1.0, 2.0, 3.0, 4.0, 5.0])[:, None]
    B = A + 0.5
    # each ECDF step is 0.2 and the curves stay one step apart
    assert ks_hat(A, B) == pytest.approx(0.2, abs=1e-12)


def test_ks_identical_sets_is_zero():
    A = np.random.default_rng(6).normal(size=(50, 3))
    assert ks_hat(A, A.copy()) == 0.0


def test_metrics_accept_predictive_draws_objects():
    rng = np.random.default_rng(7)
    A = PredictiveDraws(rng.normal(size=(200, 2)), "a")
    B = PredictiveDraws(rng.normal(size=(200, 2)) + 3.0, "b")
    assert tv_hat(A, B) > 0.5
    assert ks_hat(A, B) > 0.5


def test_metrics_validate_inputs():
    with pytest.raises(ValueError):
        tv_hat(np.ones((3, 2)), np.ones((3, 3)))
    with pytest.raises(ValueError):
        ks_hat(np.ones((0, 2)), np.ones((3, 2)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), shift=st.floats(0.0, 5.0))
def test_metrics_bounded_and_symmetric(seed, shift):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(80, 2))
    B = rng.normal(size=(120, 2)) + shift
    for metric in (tv_hat, ks_hat):
        v = metric(A, B)
        assert 0.0 <= v <= 1.0
        assert metric(B, A) == pytest.approx(v, abs=1e-12)


def test_metrics_grow_with_separation():
    rng = np.random.default_rng(8)
    A = rng.normal(size=(2000, 1))
    near = rng.normal(size=(2000, 1)) + 0.2
    far = rng.normal(size=(2000, 1)) + 2.0
    assert tv_hat(A, far) > tv_hat(A, near)
    assert ks_hat(A, far) > ks_hat(A, near)
