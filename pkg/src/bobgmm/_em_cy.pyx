# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loop for the randomly weighted tempered EM.

Mirrors `bobgmm._em_py.run_em` exactly; the pure-numpy module is the
reference implementation and the parity test in tests/test_backends.py
keeps the two in lockstep.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, fabs, log, pow, sin, sqrt

from .errors import (
    DegeneratePosteriorError,
    InvalidDofError,
    NotPositiveDefiniteError,
)

cnp.import_array()

cdef double LOG_2PI = 1.8378770664093453
cdef double EMPTY_COMPONENT_TOL = 1e-10


cdef int _cholesky(double[:, ::1] A, int d) noexcept nogil:
    """In-place lower Cholesky; returns -1 on a non-PD pivot."""
    cdef int i, j, p
    cdef double s
    for j in range(d):
        s = A[j, j]
        for p in range(j):
            s -= A[j, p] * A[j, p]
        if s <= 0.0:
            return -1
        A[j, j] = sqrt(s)
        for i in range(j + 1, d):
            s = A[i, j]
            for p in range(j):
                s -= A[i, p] * A[j, p]
            A[i, j] = s / A[j, j]
    return 0


cdef void _forward_solve(double[:, ::1] L, double* b, int d) noexcept nogil:
    """Solve L z = b in place (b overwritten with z)."""
    cdef int i, p
    cdef double s
    for i in range(d):
        s = b[i]
        for p in range(i):
            s -= L[i, p] * b[p]
        b[i] = s / L[i, i]


cdef double _scores_and_objective(
    double[:, ::1] Y, double[::1] u,
    double u_pi, double[::1] u_mu, double[::1] u_sigma,
    double[::1] conc, double[:, ::1] beta, double[::1] lam,
    double[::1] nu, double[:, :, ::1] psi,
    double[::1] pi, double[:, ::1] means, double[:, :, ::1] covs,
    double[:, ::1] scores, double[:, :, ::1] chol, double[::1] logdet,
    double[::1] work, double[:, ::1] mat,
) except? -1e308:
    """Fill the score matrix ell_ik and return the weighted log-posterior."""
    cdef int n = Y.shape[0]
    cdef int d = Y.shape[1]
    cdef int K = pi.shape[0]
    cdef int i, j, k, rc
    cdef double s, quad, trace, coef, m, row, lp, log_pi_k
    cdef double objective = 0.0

    for k in range(K):
        for i in range(d):
            for j in range(d):
                mat[i, j] = covs[k, i, j]
        rc = _cholesky(mat, d)
        if rc != 0:
            raise NotPositiveDefiniteError(f"cov[{k}] is not positive definite")
        s = 0.0
        for i in range(d):
            for j in range(d):
                chol[k, i, j] = mat[i, j]
            s += log(mat[i, i])
        logdet[k] = 2.0 * s

    for k in range(K):
        log_pi_k = log(pi[k]) if pi[k] > 0.0 else -INFINITY
        for i in range(n):
            for j in range(d):
                work[j] = Y[i, j] - means[k, j]
            _forward_solve(chol[k], &work[0], d)
            quad = 0.0
            for j in range(d):
                quad += work[j] * work[j]
            lp = -0.5 * (d * LOG_2PI + logdet[k] + quad)
            scores[i, k] = u[i] * (log_pi_k + lp)

    for i in range(n):
        m = scores[i, 0]
        for k in range(1, K):
            if scores[i, k] > m:
                m = scores[i, k]
        row = 0.0
        for k in range(K):
            row += exp(scores[i, k] - m)
        objective += m + log(row)

    for k in range(K):
        trace = 0.0
        quad = 0.0
        # columns of L^-1 Psi_k
        for j in range(d):
            for i in range(d):
                work[i] = psi[k, i, j]
            _forward_solve(chol[k], &work[0], d)
            for i in range(d):
                mat[i, j] = work[i]
        # tr(Psi_k Sigma_k^-1) = tr(L^-1 (L^-1 Psi_k)')
        for j in range(d):
            for i in range(d):
                work[i] = mat[j, i]
            _forward_solve(chol[k], &work[0], d)
            trace += work[j]
        for j in range(d):
            work[j] = means[k, j] - beta[k, j]
        _forward_solve(chol[k], &work[0], d)
        for j in range(d):
            quad += work[j] * work[j]
        coef = u_pi * (conc[k] - 1.0)
        if coef != 0.0:
            if pi[k] > 0.0:
                objective += coef * log(pi[k])
            else:
                objective += -INFINITY if coef > 0.0 else INFINITY
        objective -= u_sigma[k] * (((nu[k] + d) / 2.0 + 1.0) * logdet[k] + 0.5 * trace)
        objective -= u_mu[k] * 0.5 * lam[k] * quad
    return objective


def run_em(
    double[:, ::1] Y,
    double[::1] u,
    double u_pi,
    double[::1] u_mu,
    double[::1] u_sigma,
    double[::1] conc,
    double[:, ::1] beta,
    double[::1] lam,
    double[::1] nu,
    double[:, :, ::1] psi,
    double[::1] pi0,
    double[:, ::1] mu0,
    double[:, :, ::1] cov0,
    temper,
    int max_iter,
    double tol,
):
    cdef int n = Y.shape[0]
    cdef int d = Y.shape[1]
    cdef int K = pi0.shape[0]
    cdef bint has_temper = temper is not None
    cdef double ta = 0.0, tb = 0.0, tc = 0.0, tr_ = 0.0
    if has_temper:
        ta, tb, tc, tr_ = temper

    pi_arr = np.array(pi0, dtype=np.float64)
    mu_arr = np.array(mu0, dtype=np.float64)
    cov_arr = np.array(cov0, dtype=np.float64)
    cdef double[::1] pi = pi_arr
    cdef double[:, ::1] means = mu_arr
    cdef double[:, :, ::1] covs = cov_arr

    scores_arr = np.empty((n, K), dtype=np.float64)
    cdef double[:, ::1] scores = scores_arr
    Q_arr = np.empty((n, K), dtype=np.float64)
    cdef double[:, ::1] Q = Q_arr
    chol_arr = np.empty((K, d, d), dtype=np.float64)
    cdef double[:, :, ::1] chol = chol_arr
    logdet_arr = np.empty(K, dtype=np.float64)
    cdef double[::1] logdet = logdet_arr
    work_arr = np.empty(d, dtype=np.float64)
    cdef double[::1] work = work_arr
    mat_arr = np.empty((d, d), dtype=np.float64)
    cdef double[:, ::1] mat = mat_arr
    ybar_arr = np.empty(d, dtype=np.float64)
    cdef double[::1] ybar = ybar_arr
    abar_arr = np.empty(K, dtype=np.float64)
    cdef double[::1] a_bar = abar_arr
    ntil_arr = np.empty(K, dtype=np.float64)
    cdef double[::1] n_tilde = ntil_arr

    cdef double prev = 0.0
    cdef bint have_prev = False
    cdef double objective = 0.0
    cdef bint converged = False
    cdef int steps = 0
    cdef int it, i, j, k, p
    cdef double T, tau, s, m, row, w
    cdef double lam_t, nu_t, denom, nu_bar, numer_sum, abar_sum

    for it in range(1, max_iter + 1):
        objective = _scores_and_objective(
            Y, u, u_pi, u_mu, u_sigma, conc, beta, lam, nu, psi,
            pi, means, covs, scores, chol, logdet, work, mat,
        )
        if have_prev and fabs(objective - prev) / (1.0 + fabs(objective)) < tol:
            converged = True
            break
        prev = objective
        have_prev = True

        T = 1.0
        if has_temper:
            tau = (it + tc * tr_) / tr_
            T = 1.0 + pow(ta, tau) + tb * sin(tau) / tau
        if T <= 0.0:
            raise ValueError(f"non-positive temperature {T} at iteration {it}")
        for i in range(n):
            m = scores[i, 0]
            for k in range(1, K):
                if scores[i, k] > m:
                    m = scores[i, k]
            row = 0.0
            for k in range(K):
                Q[i, k] = exp((scores[i, k] - m) / T)
                row += Q[i, k]
            for k in range(K):
                Q[i, k] /= row

        for k in range(K):
            n_tilde[k] = 0.0
            for i in range(n):
                n_tilde[k] += u[i] * Q[i, k]
            a_bar[k] = (conc[k] - 1.0) * u_pi + 1.0
            if n_tilde[k] < EMPTY_COMPONENT_TOL:
                for j in range(d):
                    means[k, j] = beta[k, j]
                    for p in range(d):
                        covs[k, j, p] = psi[k, j, p] / (nu[k] + d + 2.0)
                continue
            a_bar[k] += n_tilde[k]
            lam_t = u_mu[k] * lam[k]
            nu_t = u_sigma[k] * (nu[k] + d + 2.0) - 2.0 - d
            for j in range(d):
                s = 0.0
                for i in range(n):
                    s += u[i] * Q[i, k] * Y[i, j]
                ybar[j] = s / n_tilde[k]
            denom = lam_t + n_tilde[k]
            nu_bar = nu_t + n_tilde[k]
            if nu_bar + d + 2.0 <= 0.0:
                raise InvalidDofError(
                    f"component {k}: nu_bar + d + 2 = {nu_bar + d + 2.0:.6g} <= 0"
                )
            for j in range(d):
                for p in range(j, d):
                    s = u_sigma[k] * psi[k, j, p]
                    for i in range(n):
                        s += u[i] * Q[i, k] * (Y[i, j] - ybar[j]) * (Y[i, p] - ybar[p])
                    s += (lam_t * n_tilde[k] / denom) * (ybar[j] - beta[k, j]) * (ybar[p] - beta[k, p])
                    covs[k, j, p] = s / (nu_bar + d + 2.0)
                    covs[k, p, j] = covs[k, j, p]
            for j in range(d):
                means[k, j] = (lam_t * beta[k, j] + n_tilde[k] * ybar[j]) / denom

        numer_sum = 0.0
        abar_sum = 0.0
        for k in range(K):
            abar_sum += a_bar[k]
            w = a_bar[k] - 1.0
            if w < 0.0:
                w = 0.0
            numer_sum += w
        if abar_sum - K <= 0.0 or numer_sum <= 0.0:
            raise DegeneratePosteriorError("all a_bar <= 1: mixture-weight mode undefined")
        for k in range(K):
            w = a_bar[k] - 1.0
            if w < 0.0:
                w = 0.0
            pi[k] = w / numer_sum
        steps = it

    if not converged:
        objective = _scores_and_objective(
            Y, u, u_pi, u_mu, u_sigma, conc, beta, lam, nu, psi,
            pi, means, covs, scores, chol, logdet, work, mat,
        )
    return pi_arr, mu_arr, cov_arr, steps, objective, converged
