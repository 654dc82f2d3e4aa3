"""Shared builders for random but valid model objects."""

import numpy as np

from bobgmm.gmm_core import GmmParams, NiwDirichletPrior


def make_params(rng: np.random.Generator, K: int, d: int) -> GmmParams:
    """Random mixture parameters with well-conditioned covariances."""
    weights = rng.dirichlet(np.ones(K))
    means = rng.normal(scale=2.0, size=(K, d))
    covs = np.empty((K, d, d))
    for k in range(K):
        A = rng.normal(size=(d, d))
        covs[k] = A @ A.T + d * np.eye(d)
    return GmmParams(weights, means, covs)


def make_prior(rng: np.random.Generator, K: int, d: int) -> NiwDirichletPrior:
    """Random proper NIW-Dirichlet prior."""
    return NiwDirichletPrior(
        1.1 + rng.random(K),
        rng.normal(size=(K, d)),
        0.5 + rng.random(K),
        d + 2.0 + rng.random(K),
        np.tile(np.eye(d), (K, 1, 1)) * (0.5 + rng.random()),
    )


def make_blobs(rng: np.random.Generator, n: int, d: int, K: int, spread: float = 5.0):
    """Simple well-separated mixture data with known labels."""
    labels = rng.integers(0, K, size=n)
    centers = np.arange(K)[:, None] * spread * np.ones((K, d))
    Y = centers[labels] + rng.standard_normal((n, d))
    return Y, labels
