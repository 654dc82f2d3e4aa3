"""Exact posterior sampling when the component labels are known.

With the allocation matrix observed, the NIW-Dirichlet prior is conjugate:
the posterior factorizes over components and admits the usual closed-form
hyperparameter updates. Draws from this oracle are the ground truth that
bootstrap samplers are benchmarked against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionError, InvalidDofError
from .gmm_core import FlatIndex, GmmParams, NiwDirichletPrior, flatten
from .random_weighting import SeededRng

__all__ = [
    "PosteriorHyper",
    "labels_to_onehot",
    "posterior_hyper",
    "sample_inverse_wishart",
    "sample_mvn",
    "sample_dirichlet",
    "sample_bayes_posterior",
    "save_draws",
    "load_draws",
]


@dataclass(frozen=True)
class PosteriorHyper:
    """Updated NIW-Dirichlet hyperparameters given the allocations."""

    concentrations: np.ndarray
    prior_means: np.ndarray
    precisions_scale: np.ndarray
    dofs: np.ndarray
    scale_mats: np.ndarray
    counts: np.ndarray


def labels_to_onehot(labels: np.ndarray, K: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    if labels.min() < 0 or labels.max() >= K:
        raise ValueError(f"labels must lie in [0, {K})")
    Z = np.zeros((labels.size, K))
    Z[np.arange(labels.size), labels] = 1.0
    return Z


def posterior_hyper(Y: np.ndarray, Z: np.ndarray, prior: NiwDirichletPrior) -> PosteriorHyper:
    """Conjugate update per component: counts shift the concentration, the
    precision scale, and the degrees of freedom; the prior mean moves to the
    precision-weighted average and the scale matrix absorbs the scatter."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    Z = np.asarray(Z, dtype=float)
    n, d = Y.shape
    K = prior.n_components
    if Z.shape != (n, K):
        raise DimensionError(f"allocation matrix must be ({n}, {K}), got {Z.shape}")
    counts = Z.sum(axis=0)

    conc_hat = prior.concentrations + counts
    lam_hat = prior.precisions_scale + counts
    nu_hat = prior.dofs + counts
    beta_hat = np.empty((K, d))
    psi_hat = np.empty((K, d, d))
    for k in range(K):
        n_k = counts[k]
        lam_k = prior.precisions_scale[k]
        if n_k == 0:
            beta_hat[k] = prior.prior_means[k]
            psi_hat[k] = prior.scale_mats[k]
            continue
        ybar = Z[:, k] @ Y / n_k
        dev = Y - ybar
        S = (Z[:, k][:, None] * dev).T @ dev
        shift = ybar - prior.prior_means[k]
        beta_hat[k] = (lam_k * prior.prior_means[k] + n_k * ybar) / (lam_k + n_k)
        psi_hat[k] = prior.scale_mats[k] + S + (lam_k * n_k / (lam_k + n_k)) * np.outer(shift, shift)
    return PosteriorHyper(conc_hat, beta_hat, lam_hat, nu_hat, psi_hat, counts)


def sample_inverse_wishart(nu: float, psi: np.ndarray, generator: np.random.Generator) -> np.ndarray:
    """Draw Sigma ~ IW(nu, Psi) via a Bartlett decomposition of
    W ~ Wishart(nu, Psi^{-1}) followed by inversion; E[Sigma] = Psi/(nu-d-1)."""
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    d = psi.shape[0]
    if nu <= d - 1:
        raise InvalidDofError(f"inverse-Wishart needs nu > d - 1, got nu={nu}, d={d}")
    # Psi^{-1} = L^-T L^-1 assembled by triangular solve, then re-factored so
    # the Bartlett product stays lower triangular and cheap to invert
    L_psi = np.linalg.cholesky(psi)
    L_inv = solve_triangular(L_psi, np.eye(d), lower=True)
    scale_chol = np.linalg.cholesky(L_inv.T @ L_inv)
    A = np.zeros((d, d))
    for i in range(d):
        A[i, i] = np.sqrt(generator.chisquare(nu - i))
        for j in range(i):
            A[i, j] = generator.standard_normal()
    LA = scale_chol @ A
    W = LA @ LA.T
    # Sigma = W^{-1}, computed via the triangular factor for stability
    LA_inv = solve_triangular(LA, np.eye(d), lower=True)
    return LA_inv.T @ LA_inv


def sample_mvn(mu: np.ndarray, sigma: np.ndarray, generator: np.random.Generator) -> np.ndarray:
    """One draw from N(mu, sigma) via the Cholesky transform."""
    mu = np.asarray(mu, dtype=float)
    L = np.linalg.cholesky(np.atleast_2d(np.asarray(sigma, dtype=float)))
    return mu + L @ generator.standard_normal(mu.size)


def sample_dirichlet(a: np.ndarray, generator: np.random.Generator) -> np.ndarray:
    """One Dirichlet draw by gamma normalization."""
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0):
        raise ValueError("all concentrations must be positive")
    g = generator.standard_gamma(a)
    return g / g.sum()


def sample_bayes_posterior(hyper: PosteriorHyper, S: int, rng: SeededRng) -> np.ndarray:
    """Exact posterior draws, returned as an (S, M) flat matrix.

    Per draw and per component: Sigma_k ~ IW(nu_hat, Psi_hat), then
    mu_k | Sigma_k ~ N(beta_hat, Sigma_k / lam_hat), then
    pi ~ Dirichlet(conc_hat). Each draw consumes its own child stream, so
    results do not depend on how draws are partitioned across workers.
    """
    K, d = hyper.prior_means.shape
    out = np.empty((S, FlatIndex(K, d).M))
    for s in range(S):
        gen = rng.child(s).generator
        means = np.empty((K, d))
        covs = np.empty((K, d, d))
        for k in range(K):
            covs[k] = sample_inverse_wishart(hyper.dofs[k], hyper.scale_mats[k], gen)
            means[k] = sample_mvn(
                hyper.prior_means[k], covs[k] / hyper.precisions_scale[k], gen
            )
        pi = sample_dirichlet(hyper.concentrations, gen)
        out[s] = flatten(GmmParams(pi, means, covs))
    return out


def save_draws(path, draws: np.ndarray, K: int, d: int, meta: dict | None = None) -> None:
    """CSV of flat draws with named columns plus a JSON sidecar of metadata."""
    index = FlatIndex(K, d)
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.shape[1] != index.M:
        raise DimensionError(f"draws have {draws.shape[1]} columns, expected {index.M}")
    path = Path(path)
    np.savetxt(path, draws, delimiter=",", header=",".join(index.names), comments="")
    sidecar = {"K": K, "d": d, "n_draws": int(draws.shape[0]), "columns": list(index.names)}
    sidecar.update(meta or {})
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))


def load_draws(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    draws = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    return draws, meta
