"""Gaussian-process Bayesian optimization over a box.

A Matern-5/2 surrogate with per-dimension lengthscales and a Gaussian
observation-noise term is fitted to the (noisy) objective evaluations;
expected improvement proposes each new point. The objective is maximized.
Evaluations that raise ObjectiveEvaluationError are kept in the design with
a large penalty value so the surrogate learns to avoid the region.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.stats import norm, qmc

from .errors import ObjectiveEvaluationError

__all__ = [
    "BoBudget",
    "GpState",
    "BoResult",
    "matern25",
    "gp_fit",
    "gp_build",
    "gp_posterior",
    "expected_improvement",
    "propose_next",
    "maximize",
]

JITTERS = (0.0, 1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class BoBudget:
    n_init: int = 10
    n_iter: int = 30
    n_candidates: int = 2048
    n_refine: int = 5

    def __post_init__(self):
        if self.n_init < 2 or self.n_iter < 0:
            raise ValueError("need n_init >= 2 and n_iter >= 0")


def matern25(X1: np.ndarray, X2: np.ndarray, amplitude: float, lengthscales: np.ndarray) -> np.ndarray:
    """Matern kernel with smoothness 5/2 and per-dimension lengthscales."""
    Z1 = np.atleast_2d(X1) / lengthscales
    Z2 = np.atleast_2d(X2) / lengthscales
    r2 = np.maximum(
        (Z1**2).sum(axis=1)[:, None] + (Z2**2).sum(axis=1)[None, :] - 2.0 * Z1 @ Z2.T,
        0.0,
    )
    root = np.sqrt(5.0 * r2)
    return amplitude * (1.0 + root + (5.0 / 3.0) * r2) * np.exp(-root)


@dataclass(frozen=True)
class GpState:
    """Fitted surrogate: training design, standardized targets, kernel
    hyperparameters, and the Cholesky factor used for predictions."""

    X: np.ndarray
    y_mean: float
    y_std: float
    amplitude: float
    lengthscales: np.ndarray
    noise: float
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)


def _standardize(y: np.ndarray) -> tuple[np.ndarray, float, float]:
    mean = float(y.mean())
    std = float(y.std())
    if std <= 0 or not np.isfinite(std):
        std = 1.0
    return (y - mean) / std, mean, std


def _chol_with_jitter(Kmat: np.ndarray) -> np.ndarray:
    for jitter in JITTERS:
        try:
            return cholesky(Kmat + jitter * np.eye(Kmat.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("kernel matrix not positive definite after jitter")


def _neg_log_marginal(log_params: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    m = X.shape[0]
    amplitude = np.exp(log_params[0])
    lengthscales = np.exp(log_params[1:-1])
    noise = np.exp(log_params[-1])
    Kmat = matern25(X, X, amplitude, lengthscales) + noise * np.eye(m)
    try:
        L = _chol_with_jitter(Kmat)
    except np.linalg.LinAlgError:
        return 1e10
    alpha = cho_solve((L, True), y)
    value = 0.5 * float(y @ alpha) + float(np.log(np.diag(L)).sum()) + 0.5 * m * np.log(2.0 * np.pi)
    return value if np.isfinite(value) else 1e10


def gp_fit(X: np.ndarray, y: np.ndarray, rng: np.random.Generator, n_starts: int = 5) -> GpState:
    """Fit hyperparameters by maximizing the marginal likelihood from several
    starting points; if every optimization fails, fall back to the median
    pairwise-distance heuristic."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y_raw = np.asarray(y, dtype=float)
    y_std, mean, std = _standardize(y_raw)
    m, p = X.shape

    diffs = X[:, None, :] - X[None, :, :]
    dists = np.sqrt((diffs**2).sum(axis=-1))
    pos = dists[dists > 0]
    median_dist = float(np.median(pos)) if pos.size else 1.0
    base = np.concatenate(([0.0], np.full(p, np.log(max(median_dist, 1e-3))), [np.log(1e-2)]))

    best_params = base
    best_value = _neg_log_marginal(base, X, y_std)
    bounds = [(-6.0, 6.0)] + [(np.log(1e-3), np.log(1e3))] * p + [(np.log(1e-8), np.log(1.0))]
    for s in range(n_starts):
        start = base if s == 0 else base + rng.normal(scale=1.0, size=base.size)
        start = np.clip(start, [b[0] for b in bounds], [b[1] for b in bounds])
        try:
            res = minimize(
                _neg_log_marginal, start, args=(X, y_std), method="L-BFGS-B", bounds=bounds
            )
        except Exception:
            continue
        if np.isfinite(res.fun) and res.fun < best_value:
            best_value = res.fun
            best_params = res.x

    amplitude = float(np.exp(best_params[0]))
    lengthscales = np.exp(best_params[1:-1])
    noise = float(np.exp(best_params[-1]))
    Kmat = matern25(X, X, amplitude, lengthscales) + noise * np.eye(m)
    L = _chol_with_jitter(Kmat)
    alpha = cho_solve((L, True), y_std)
    return GpState(X, mean, std, amplitude, lengthscales, noise, L, alpha)


def gp_build(
    X: np.ndarray,
    y: np.ndarray,
    amplitude: float,
    lengthscales: np.ndarray,
    noise: float,
) -> GpState:
    """Surrogate with fixed hyperparameters (no marginal-likelihood fit and
    no target standardization); used for exactness checks."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    lengthscales = np.broadcast_to(
        np.asarray(lengthscales, dtype=float), (X.shape[1],)
    ).copy()
    Kmat = matern25(X, X, amplitude, lengthscales) + noise * np.eye(X.shape[0])
    L = _chol_with_jitter(Kmat)
    alpha = cho_solve((L, True), y)
    return GpState(X, 0.0, 1.0, amplitude, lengthscales, noise, L, alpha)


def gp_posterior(state: GpState, Xnew: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and standard deviation of the latent function at Xnew,
    back-transformed to the original target scale."""
    Xnew = np.atleast_2d(np.asarray(Xnew, dtype=float))
    Ks = matern25(state.X, Xnew, state.amplitude, state.lengthscales)
    mean = Ks.T @ state.alpha
    V = solve_triangular(state.chol, Ks, lower=True)
    var = np.maximum(state.amplitude - (V**2).sum(axis=0), 0.0)
    # cancellation-level residual variance at evidence points is exactly zero
    var[var < 1e-10 * state.amplitude] = 0.0
    return state.y_mean + state.y_std * mean, state.y_std * np.sqrt(var)


def expected_improvement(mean: np.ndarray, sd: np.ndarray, best: float) -> np.ndarray:
    """Closed-form EI for maximization; zero wherever the posterior is exact."""
    ei = np.zeros_like(mean)
    ok = sd > 0
    z = (mean[ok] - best) / sd[ok]
    ei[ok] = (mean[ok] - best) * norm.cdf(z) + sd[ok] * norm.pdf(z)
    return ei


def propose_next(
    state: GpState,
    lower: np.ndarray,
    upper: np.ndarray,
    best: float,
    rng: np.random.Generator,
    n_candidates: int = 2048,
    n_refine: int = 5,
) -> np.ndarray:
    """Maximize EI: score a quasi-random candidate set, then polish the top
    few with L-BFGS-B. Falls back to the most uncertain candidate when EI is
    flat to machine zero everywhere."""
    p = lower.size
    sampler = qmc.Sobol(d=p, scramble=True, seed=rng)
    raw = sampler.random(n_candidates)
    cands = qmc.scale(raw, lower, upper)
    mean, sd = gp_posterior(state, cands)
    ei = expected_improvement(mean, sd, best)

    def neg_ei(x):
        m, s = gp_posterior(state, x[None, :])
        return -float(expected_improvement(m, s, best)[0])

    order = np.argsort(ei)[::-1][:n_refine]
    best_x = cands[order[0]]
    best_ei = ei[order[0]]
    for idx in order:
        try:
            res = minimize(
                neg_ei, cands[idx], method="L-BFGS-B", bounds=list(zip(lower, upper))
            )
        except Exception:
            continue
        if np.isfinite(res.fun) and -res.fun > best_ei:
            best_ei = -res.fun
            best_x = res.x
    if best_ei <= 0.0:
        return cands[int(np.argmax(sd))]
    return np.clip(best_x, lower, upper)


@dataclass(frozen=True)
class BoResult:
    best_x: np.ndarray
    best_value: float
    X: np.ndarray
    y: np.ndarray
    trace: list


def maximize(
    objective,
    lower: np.ndarray,
    upper: np.ndarray,
    seed_rng: np.random.Generator,
    budget: BoBudget | None = None,
    incumbent_from_mean: bool = True,
) -> BoResult:
    """Bayesian optimization of a noisy objective over [lower, upper].

    The design starts from a Latin hypercube. The EI incumbent is the largest
    GP posterior mean over the design, which is robust to observation noise;
    set incumbent_from_mean=False to use the raw best observation instead.
    The reported best_x is the design point with the highest posterior mean.
    """
    budget = budget or BoBudget()
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.shape != upper.shape or np.any(lower >= upper):
        raise ValueError("lower and upper must be equal-shape with lower < upper")
    p = lower.size

    lhs = qmc.LatinHypercube(d=p, seed=seed_rng)
    X = list(qmc.scale(lhs.random(budget.n_init), lower, upper))
    y = []
    failed = []
    trace = []  # successful evaluations only; failures become penalty points

    def evaluate(x):
        try:
            value = float(objective(x))
        except ObjectiveEvaluationError as exc:
            warnings.warn(str(exc))
            y.append(np.nan)
            failed.append(True)
            return
        y.append(value)
        failed.append(False)
        trace.append({"x": np.asarray(x, dtype=float).tolist(), "value": value})

    for x in X:
        evaluate(x)

    def filled(values):
        """Failures are assigned worst - 10 * range of the successes."""
        arr = np.asarray(values, dtype=float)
        ok = np.isfinite(arr)
        if not ok.any():
            raise ObjectiveEvaluationError("every objective evaluation failed")
        worst = arr[ok].min()
        spread = arr[ok].max() - worst
        arr[~ok] = worst - 10.0 * max(spread, 1.0)
        return arr

    for it in range(budget.n_iter):
        y_arr = filled(y)
        state = gp_fit(np.array(X), y_arr, seed_rng)
        if incumbent_from_mean:
            mean, _ = gp_posterior(state, np.array(X))
            best = float(mean.max())
        else:
            best = float(y_arr.max())
        x_next = propose_next(
            state, lower, upper, best, seed_rng, budget.n_candidates, budget.n_refine
        )
        X.append(x_next)
        evaluate(x_next)

    # the reported optimum is the evaluated point with the best observation
    y_arr = filled(y)
    X_arr = np.array(X)
    scores = np.where(np.asarray(failed), -np.inf, y_arr)
    best_idx = int(np.argmax(scores))
    return BoResult(X_arr[best_idx], float(y_arr[best_idx]), X_arr, y_arr, trace)
