"""Pure-numpy reference implementation of the randomly weighted tempered EM.

This is the fallback backend: `_em_cy` (compiled) implements the same
`run_em` contract for the hot loop. Both are selected through
`bobgmm._backend`. Everything here operates on plain arrays; the
dataclass-facing API lives in `bobgmm.weighted_em`.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    DegeneratePosteriorError,
    InvalidDofError,
    NotPositiveDefiniteError,
)

LOG_2PI = math.log(2.0 * math.pi)
EMPTY_COMPONENT_TOL = 1e-10


def temperature_at(a: float, b: float, c: float, r: float, t: int) -> float:
    """Oscillatory profile 1 + a^tau + b*sin(tau)/tau with tau = (t + c*r)/r."""
    tau = (t + c * r) / r
    return 1.0 + a**tau + b * math.sin(tau) / tau


def component_log_densities(Y, means, covs):
    """(n, K) matrix of Gaussian log-densities via per-component Cholesky."""
    n, d = Y.shape
    K = means.shape[0]
    out = np.empty((n, K))
    for k in range(K):
        try:
            L = np.linalg.cholesky(covs[k])
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(f"cov[{k}] is not positive definite") from exc
        logdet = 2.0 * np.log(np.diag(L)).sum()
        sol = solve_triangular(L, (Y - means[k]).T, lower=True)
        out[:, k] = -0.5 * (d * LOG_2PI + logdet + np.einsum("ij,ij->j", sol, sol))
    return out


def weighted_scores(logphi, log_pi, u):
    """ell_ik = u_i * (log pi_k + log phi_ik)."""
    return u[:, None] * (log_pi[None, :] + logphi)


def responsibilities(scores, T):
    """Tempered softmax over components; rows sum to 1.

    softmax of (log q_ik)/T equals softmax of ell_ik / T because the
    log-normalizer is constant across k for each i.
    """
    z = scores / T
    z -= z.max(axis=1, keepdims=True)
    q = np.exp(z)
    q /= q.sum(axis=1, keepdims=True)
    return q


def weighted_loglik(scores):
    """sum_i log sum_k [pi_k phi_ik]^{u_i}, i.e. log-sum-exp of the scores."""
    m = scores.max(axis=1, keepdims=True)
    return float(np.sum(m[:, 0] + np.log(np.exp(scores - m).sum(axis=1))))


def weighted_log_prior(pi, means, covs, u_pi, u_mu, u_sigma, conc, beta, lam, nu, psi):
    """Re-weighted NIW-Dirichlet log-density, up to an additive constant."""
    K, d = means.shape
    total = 0.0
    for k in range(K):
        L = np.linalg.cholesky(covs[k])
        logdet = 2.0 * np.log(np.diag(L)).sum()
        half = solve_triangular(L, psi[k], lower=True)
        trace = np.trace(solve_triangular(L, half.T, lower=True))
        sol = solve_triangular(L, means[k] - beta[k], lower=True)
        quad = float(sol @ sol)
        coef = u_pi * (conc[k] - 1.0)
        if coef != 0.0:
            total += coef * math.log(pi[k]) if pi[k] > 0.0 else -math.inf * np.sign(coef)
        total -= u_sigma[k] * (((nu[k] + d) / 2.0 + 1.0) * logdet + 0.5 * trace)
        total -= u_mu[k] * 0.5 * lam[k] * quad
    return float(total)


def m_step(Y, Q, u, u_pi, u_mu, u_sigma, conc, beta, lam, nu, psi):
    """Closed-form per-block maximizer of the weighted EM surrogate.

    The (mu_k, Sigma_k) update is the joint mode of the NIW kernel
    NIW(beta_bar, lam_bar, nu_bar, Psi_bar): mu = beta_bar and
    Sigma = Psi_bar / (nu_bar + d + 2). Note the +2, not the +1 of the
    marginal inverse-Wishart mode: the surrogate keeps mu in the
    objective, so the extra |Sigma|^{-1/2} from the conditional normal
    counts. This choice is what makes each M-step an exact block
    maximization and the T = 1 iteration monotone. The pi update is the
    Dirichlet mode.

    Components with essentially no weighted mass revert to the (unweighted)
    prior mode so that extreme weight draws do not kill the replicate.
    """
    n, d = Y.shape
    K = Q.shape[1]
    uq = u[:, None] * Q
    n_tilde = uq.sum(axis=0)

    new_means = np.empty((K, d))
    new_covs = np.empty((K, d, d))
    a_tilde = (conc - 1.0) * u_pi + 1.0
    a_bar = a_tilde + n_tilde

    for k in range(K):
        if n_tilde[k] < EMPTY_COMPONENT_TOL:
            new_means[k] = beta[k]
            new_covs[k] = psi[k] / (nu[k] + d + 2.0)
            a_bar[k] = a_tilde[k]
            continue
        lam_t = u_mu[k] * lam[k]
        psi_t = u_sigma[k] * psi[k]
        nu_t = u_sigma[k] * (nu[k] + d + 2.0) - 2.0 - d
        ybar = uq[:, k] @ Y / n_tilde[k]
        dev = Y - ybar
        S = (uq[:, k][:, None] * dev).T @ dev
        denom = lam_t + n_tilde[k]
        beta_bar = (lam_t * beta[k] + n_tilde[k] * ybar) / denom
        shift = ybar - beta[k]
        psi_bar = psi_t + S + (lam_t * n_tilde[k] / denom) * np.outer(shift, shift)
        nu_bar = nu_t + n_tilde[k]
        if nu_bar + d + 2.0 <= 0.0:
            raise InvalidDofError(
                f"component {k}: nu_bar + d + 2 = {nu_bar + d + 2.0:.6g} <= 0"
            )
        if denom == 0.0:
            raise ZeroDivisionError(f"component {k}: lambda_bar = 0")
        new_means[k] = beta_bar
        new_covs[k] = psi_bar / (nu_bar + d + 2.0)

    numer = np.maximum(a_bar - 1.0, 0.0)
    if a_bar.sum() - K <= 0.0 or numer.sum() <= 0.0:
        raise DegeneratePosteriorError("all a_bar <= 1: mixture-weight mode undefined")
    # normalizing by numer.sum() (== sum(a_bar) - K up to rounding) keeps the
    # simplex constraint exact in floating point
    new_pi = numer / numer.sum()
    return new_pi, new_means, new_covs


def run_em(
    Y,
    u,
    u_pi,
    u_mu,
    u_sigma,
    conc,
    beta,
    lam,
    nu,
    psi,
    pi0,
    mu0,
    cov0,
    temper,
    max_iter,
    tol,
):
    """Alternate tempered E and M steps until the relative objective change < tol.

    temper is None (T == 1) or an (a, b, c, r) tuple. Returns
    (pi, means, covs, iterations, log_posterior, converged).
    """
    pi = np.array(pi0, dtype=float)
    means = np.array(mu0, dtype=float)
    covs = np.array(cov0, dtype=float)

    prev = None
    objective = None
    converged = False
    steps = 0
    for it in range(1, max_iter + 1):
        logphi = component_log_densities(Y, means, covs)
        with np.errstate(divide="ignore"):
            scores = weighted_scores(logphi, np.log(pi), u)
        objective = weighted_loglik(scores) + weighted_log_prior(
            pi, means, covs, u_pi, u_mu, u_sigma, conc, beta, lam, nu, psi
        )
        if prev is not None and abs(objective - prev) / (1.0 + abs(objective)) < tol:
            converged = True
            break
        prev = objective
        T = 1.0 if temper is None else temperature_at(*temper, it)
        if T <= 0.0:
            raise ValueError(f"non-positive temperature {T} at iteration {it}")
        Q = responsibilities(scores, T)
        pi, means, covs = m_step(
            Y, Q, u, u_pi, u_mu, u_sigma, conc, beta, lam, nu, psi
        )
        steps = it
    if not converged:
        logphi = component_log_densities(Y, means, covs)
        with np.errstate(divide="ignore"):
            scores = weighted_scores(logphi, np.log(pi), u)
        objective = weighted_loglik(scores) + weighted_log_prior(
            pi, means, covs, u_pi, u_mu, u_sigma, conc, beta, lam, nu, psi
        )
    return pi, means, covs, steps, objective, converged
