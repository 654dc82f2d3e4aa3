"""Parameter containers and unnormalized log-densities for the mixture model.

The model is a K-component Gaussian mixture with a normal-inverse-Wishart
prior on each (mu_k, Sigma_k) and a Dirichlet prior on the mixture weights.
All densities here are unnormalized: normalizing constants are never added,
since every downstream consumer only needs log-density differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    DimensionError,
    NonFiniteDensityError,
    NotPositiveDefiniteError,
)

LOG_2PI = float(np.log(2.0 * np.pi))


def _cholesky(mat: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"{what} is not positive definite") from exc


@dataclass(frozen=True)
class GmmParams:
    """Full mixture parameter collection: weights, means, covariances.

    weights: (K,) simplex vector, means: (K, d), covs: (K, d, d) with every
    cov symmetric positive definite (checked by Cholesky).
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covs, dtype=float)
        if covs.ndim == 2 and means.shape[1] == 1:
            covs = covs.reshape(-1, 1, 1)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)
        K, d = means.shape
        if K < 2 or d < 1:
            raise DimensionError(f"need K >= 2 and d >= 1, got K={K}, d={d}")
        if weights.shape != (K,) or covs.shape != (K, d, d):
            raise DimensionError(
                f"inconsistent shapes: weights {weights.shape}, means {means.shape}, covs {covs.shape}"
            )
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1 within 1e-12")
        for k in range(K):
            _cholesky(covs[k], f"cov[{k}]")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def permuted(self, perm) -> "GmmParams":
        """Reindex components by the given permutation."""
        perm = np.asarray(perm)
        return GmmParams(self.weights[perm], self.means[perm], self.covs[perm])

    def to_json(self) -> str:
        return json.dumps(
            {
                "K": self.n_components,
                "d": self.dim,
                "weights": self.weights.tolist(),
                "means": self.means.tolist(),
                "covs": self.covs.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "GmmParams":
        obj = json.loads(text)
        return cls(
            np.array(obj["weights"], dtype=float),
            np.array(obj["means"], dtype=float),
            np.array(obj["covs"], dtype=float),
        )


@dataclass(frozen=True)
class NiwDirichletPrior:
    """Per-component NIW hyperparameters plus Dirichlet concentrations.

    concentrations a_k > 0, prior_means beta_k (K, d), precisions_scale
    lambda_k > 0, dofs nu_k (nu_k > d - 1 for a proper prior, not enforced:
    the weighted M-step is defined for improper values too), scale_mats
    Psi_k (K, d, d) positive definite.
    """

    concentrations: np.ndarray
    prior_means: np.ndarray
    precisions_scale: np.ndarray
    dofs: np.ndarray
    scale_mats: np.ndarray

    def __post_init__(self):
        conc = np.asarray(self.concentrations, dtype=float)
        bmeans = np.atleast_2d(np.asarray(self.prior_means, dtype=float))
        lam = np.asarray(self.precisions_scale, dtype=float)
        dofs = np.asarray(self.dofs, dtype=float)
        psi = np.asarray(self.scale_mats, dtype=float)
        object.__setattr__(self, "concentrations", conc)
        object.__setattr__(self, "prior_means", bmeans)
        object.__setattr__(self, "precisions_scale", lam)
        object.__setattr__(self, "dofs", dofs)
        object.__setattr__(self, "scale_mats", psi)
        K, d = bmeans.shape
        if conc.shape != (K,) or lam.shape != (K,) or dofs.shape != (K,) or psi.shape != (K, d, d):
            raise DimensionError("prior hyperparameter shapes are inconsistent")
        if np.any(conc <= 0):
            raise ValueError("all Dirichlet concentrations must be positive")
        if np.any(lam <= 0):
            raise ValueError("all precision scales must be positive")
        for k in range(K):
            _cholesky(psi[k], f"scale_mats[{k}]")

    @property
    def n_components(self) -> int:
        return self.prior_means.shape[0]

    @property
    def dim(self) -> int:
        return self.prior_means.shape[1]

    def permuted(self, perm) -> "NiwDirichletPrior":
        perm = np.asarray(perm)
        return NiwDirichletPrior(
            self.concentrations[perm],
            self.prior_means[perm],
            self.precisions_scale[perm],
            self.dofs[perm],
            self.scale_mats[perm],
        )


def flat_dim(K: int, d: int) -> int:
    """Number of free coordinates: (K-1) simplex + K*d means + K lower triangles."""
    return (K - 1) + d * K + K * d * (d + 1) // 2


@dataclass(frozen=True)
class FlatIndex:
    """Fixed coordinate layout mapping parameters to a length-M vector.

    Order: (pi_1..pi_{K-1}), then per component k: mu_k entries, then the
    row-major lower triangle (including diagonal) of Sigma_k. pi_K is
    derived as 1 - sum(pi_1..pi_{K-1}), never stored.
    """

    K: int
    d: int
    names: tuple = field(init=False)

    def __post_init__(self):
        names = [f"pi_{k + 1}" for k in range(self.K - 1)]
        rows, cols = np.tril_indices(self.d)
        for k in range(self.K):
            names.extend(f"mu_{k + 1}_{j + 1}" for j in range(self.d))
            names.extend(f"sigma_{k + 1}_{r + 1}{c + 1}" for r, c in zip(rows, cols))
        object.__setattr__(self, "names", tuple(names))

    @property
    def M(self) -> int:
        return flat_dim(self.K, self.d)


def flatten(params: GmmParams) -> np.ndarray:
    """Map parameters to the length-M flat vector in FlatIndex order."""
    K, d = params.n_components, params.dim
    rows, cols = np.tril_indices(d)
    parts = [params.weights[: K - 1]]
    for k in range(K):
        parts.append(params.means[k])
        parts.append(params.covs[k][rows, cols])
    return np.concatenate(parts)


def unflatten(v: np.ndarray, K: int, d: int) -> GmmParams:
    """Inverse of flatten: rebuilds pi_K and symmetrizes each Sigma_k."""
    v = np.asarray(v, dtype=float)
    M = flat_dim(K, d)
    if v.shape != (M,):
        raise DimensionError(f"expected flat vector of length {M}, got shape {v.shape}")
    weights = np.empty(K)
    weights[: K - 1] = v[: K - 1]
    weights[K - 1] = 1.0 - v[: K - 1].sum()
    if weights[K - 1] < 0:
        raise ValueError("reconstructed pi_K is negative")
    rows, cols = np.tril_indices(d)
    ntri = len(rows)
    means = np.empty((K, d))
    covs = np.empty((K, d, d))
    pos = K - 1
    for k in range(K):
        means[k] = v[pos : pos + d]
        pos += d
        cov = np.zeros((d, d))
        cov[rows, cols] = v[pos : pos + ntri]
        pos += ntri
        cov = cov + cov.T - np.diag(np.diag(cov))
        covs[k] = cov
    return GmmParams(weights, means, covs)


def component_log_densities(Y: np.ndarray, params: GmmParams) -> np.ndarray:
    """(n, K) matrix of log phi(y_i; mu_k, Sigma_k), Cholesky-based."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n, d = Y.shape
    if d != params.dim:
        raise DimensionError(f"data dimension {d} != parameter dimension {params.dim}")
    K = params.n_components
    out = np.empty((n, K))
    for k in range(K):
        L = _cholesky(params.covs[k], f"cov[{k}]")
        logdet = 2.0 * np.log(np.diag(L)).sum()
        sol = solve_triangular(L, (Y - params.means[k]).T, lower=True)
        quad = np.einsum("ij,ij->j", sol, sol)
        out[:, k] = -0.5 * (d * LOG_2PI + logdet + quad)
    return out


def log_likelihood(Y: np.ndarray, params: GmmParams) -> float:
    """Mixture log-likelihood sum_i log sum_k pi_k phi(y_i), log-sum-exp stabilized."""
    logphi = component_log_densities(Y, params)
    with np.errstate(divide="ignore"):
        ell = logphi + np.log(params.weights)[None, :]
    m = ell.max(axis=1, keepdims=True)
    value = float(np.sum(m[:, 0] + np.log(np.exp(ell - m).sum(axis=1))))
    if not np.isfinite(value):
        raise NonFiniteDensityError("log-likelihood is not finite")
    return value


def log_prior(params: GmmParams, prior: NiwDirichletPrior) -> float:
    """Unnormalized NIW-Dirichlet log-density of the parameters."""
    if params.n_components != prior.n_components or params.dim != prior.dim:
        raise DimensionError("parameter and prior shapes disagree")
    total = 0.0
    with np.errstate(divide="ignore"):
        log_pi = np.log(params.weights)
    for k in range(params.n_components):
        L = _cholesky(params.covs[k], f"cov[{k}]")
        logdet = 2.0 * np.log(np.diag(L)).sum()
        inv_term = solve_triangular(L, prior.scale_mats[k], lower=True)
        trace = float(np.trace(solve_triangular(L, inv_term.T, lower=True)))
        diff = params.means[k] - prior.prior_means[k]
        sol = solve_triangular(L, diff, lower=True)
        quad = float(sol @ sol)
        total += (prior.concentrations[k] - 1.0) * log_pi[k]
        total -= ((prior.dofs[k] + params.dim) / 2.0 + 1.0) * logdet
        total -= 0.5 * trace
        total -= 0.5 * prior.precisions_scale[k] * quad
    if not np.isfinite(total):
        raise NonFiniteDensityError("log prior is not finite")
    return float(total)


def log_unnorm_posterior(Y: np.ndarray, params: GmmParams, prior: NiwDirichletPrior) -> float:
    """Sum of log_likelihood and log_prior."""
    return log_likelihood(Y, params) + log_prior(params, prior)


def load_data_csv(path, header: bool = False) -> np.ndarray:
    """Read a row-major observation matrix from CSV."""
    return np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2)


def save_data_csv(path, Y: np.ndarray) -> None:
    np.savetxt(path, np.atleast_2d(Y), delimiter=",")
