"""Tempered, randomly weighted EM for the mixture MAP problem.

One call to `run_weighted_em` solves a single randomly weighted posterior
maximization; a bootstrap sampler issues thousands of such calls, so the
iteration loop itself is delegated to the compiled backend when available
(see `bobgmm._backend`). The step functions exposed here (`e_step`,
`m_step`, `temperature`) are the pure-numpy reference used by tests and by
single-step consumers.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _em_py
from ._backend import BACKEND, run_em
from .errors import EmFailure
from .gmm_core import GmmParams, NiwDirichletPrior

__all__ = [
    "WeightDraw",
    "TemperingProfile",
    "EmSettings",
    "EmResult",
    "temperature",
    "e_step",
    "m_step",
    "weighted_log_posterior",
    "run_weighted_em",
    "tune_tempering",
    "default_tempering_grid",
    "BACKEND",
]


@dataclass(frozen=True)
class WeightDraw:
    """One realization of likelihood weights u and prior weights u-tilde."""

    likelihood_weights: np.ndarray
    prior_weight_pi: float
    prior_weights_mu: np.ndarray
    prior_weights_sigma: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.likelihood_weights, dtype=float)
        umu = np.asarray(self.prior_weights_mu, dtype=float)
        usig = np.asarray(self.prior_weights_sigma, dtype=float)
        object.__setattr__(self, "likelihood_weights", u)
        object.__setattr__(self, "prior_weights_mu", umu)
        object.__setattr__(self, "prior_weights_sigma", usig)
        for name, arr in (("likelihood", u), ("mu", umu), ("sigma", usig)):
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError(f"{name} weights must be finite and non-negative")
        if not (math.isfinite(self.prior_weight_pi) and self.prior_weight_pi >= 0):
            raise ValueError("prior_weight_pi must be finite and non-negative")

    @classmethod
    def unweighted(cls, n: int, K: int) -> "WeightDraw":
        """u_i = 1 and all prior weights 1: the plain MAP problem."""
        return cls(np.ones(n), 1.0, np.ones(K), np.ones(K))


@dataclass(frozen=True)
class TemperingProfile:
    """Oscillatory temperature schedule T_t = 1 + a^tau + b sin(tau)/tau."""

    a: float
    b: float
    c: float
    r: float

    def __post_init__(self):
        if not 0.0 <= self.a < 1.0:
            raise ValueError("a must be in [0, 1)")
        if self.c <= 0 or self.r <= 0:
            raise ValueError("c and r must be positive")

    def as_tuple(self):
        return (self.a, self.b, self.c, self.r)


@dataclass(frozen=True)
class EmSettings:
    max_iter: int = 500
    tol: float = 1e-8
    profile: TemperingProfile | None = None

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass(frozen=True)
class EmResult:
    params: GmmParams
    iterations: int
    log_posterior: float
    converged: bool

    def diagnostics(self) -> dict:
        return {
            "iterations": self.iterations,
            "log_posterior": self.log_posterior,
            "converged": self.converged,
        }


def temperature(profile: TemperingProfile, t: int) -> float:
    """Temperature at iteration t >= 1; must be strictly positive."""
    if t < 1:
        raise ValueError("iteration index starts at 1")
    T = _em_py.temperature_at(profile.a, profile.b, profile.c, profile.r, t)
    if T <= 0.0:
        raise ValueError(f"profile {profile} yields non-positive temperature {T} at t={t}")
    return T


def e_step(Y: np.ndarray, params: GmmParams, u: np.ndarray, T: float = 1.0) -> np.ndarray:
    """Tempered responsibilities: softmax_k of u_i(log pi_k + log phi_ik) / T."""
    if T <= 0:
        raise ValueError("temperature must be positive")
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    u = np.asarray(u, dtype=float)
    logphi = _em_py.component_log_densities(Y, params.means, params.covs)
    with np.errstate(divide="ignore"):
        scores = _em_py.weighted_scores(logphi, np.log(params.weights), u)
    return _em_py.responsibilities(scores, T)


def m_step(
    Y: np.ndarray, Q: np.ndarray, w: WeightDraw, prior: NiwDirichletPrior
) -> GmmParams:
    """Closed-form weighted MAP update given responsibilities Q."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    pi, means, covs = _em_py.m_step(
        Y,
        np.asarray(Q, dtype=float),
        w.likelihood_weights,
        w.prior_weight_pi,
        w.prior_weights_mu,
        w.prior_weights_sigma,
        prior.concentrations,
        prior.prior_means,
        prior.precisions_scale,
        prior.dofs,
        prior.scale_mats,
    )
    return GmmParams(pi, means, covs)


def weighted_log_posterior(
    Y: np.ndarray, params: GmmParams, w: WeightDraw, prior: NiwDirichletPrior
) -> float:
    """Convergence objective: sum_i log sum_k [pi_k phi_ik]^{u_i} plus the
    re-weighted log-prior."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    logphi = _em_py.component_log_densities(Y, params.means, params.covs)
    with np.errstate(divide="ignore"):
        scores = _em_py.weighted_scores(
            logphi, np.log(params.weights), w.likelihood_weights
        )
    return _em_py.weighted_loglik(scores) + _em_py.weighted_log_prior(
        params.weights,
        params.means,
        params.covs,
        w.prior_weight_pi,
        w.prior_weights_mu,
        w.prior_weights_sigma,
        prior.concentrations,
        prior.prior_means,
        prior.precisions_scale,
        prior.dofs,
        prior.scale_mats,
    )


def run_weighted_em(
    Y: np.ndarray,
    w: WeightDraw,
    prior: NiwDirichletPrior,
    init: GmmParams,
    settings: EmSettings | None = None,
) -> EmResult:
    """Alternate tempered E and M steps from `init` until the relative change
    of the weighted log-posterior drops below tol or max_iter is reached."""
    settings = settings or EmSettings()
    Y = np.ascontiguousarray(np.atleast_2d(np.asarray(Y, dtype=float)))
    temper = settings.profile.as_tuple() if settings.profile is not None else None
    if temper is not None:
        temperature(settings.profile, 1)  # reject pathological profiles up front
    try:
        pi, means, covs, iters, logpost, converged = run_em(
            Y,
            np.ascontiguousarray(w.likelihood_weights),
            float(w.prior_weight_pi),
            np.ascontiguousarray(w.prior_weights_mu),
            np.ascontiguousarray(w.prior_weights_sigma),
            np.ascontiguousarray(prior.concentrations),
            np.ascontiguousarray(prior.prior_means),
            np.ascontiguousarray(prior.precisions_scale),
            np.ascontiguousarray(prior.dofs, dtype=float),
            np.ascontiguousarray(prior.scale_mats),
            np.ascontiguousarray(init.weights),
            np.ascontiguousarray(init.means),
            np.ascontiguousarray(init.covs),
            temper,
            settings.max_iter,
            settings.tol,
        )
    except EmFailure:
        raise
    except Exception as exc:
        raise EmFailure(f"weighted EM failed: {exc}") from exc
    return EmResult(GmmParams(pi, means, covs), iters, logpost, converged)


def default_tempering_grid() -> list[TemperingProfile]:
    """Flat-to-aggressive profiles spanning a in {0,.3,.6,.9}, b in {0,1,3},
    c in {1,5}, r in {2,8}; duplicates of the constant profile collapse."""
    grid = []
    seen = set()
    for a in (0.0, 0.3, 0.6, 0.9):
        for b in (0.0, 1.0, 3.0):
            for c in (1.0, 5.0):
                for r in (2.0, 8.0):
                    key = (a, b, c, r) if (a, b) != (0.0, 0.0) else (0.0, 0.0, 1.0, 1.0)
                    if key in seen:
                        continue
                    seen.add(key)
                    grid.append(TemperingProfile(*key))
    return grid


def tune_tempering(
    Y: np.ndarray,
    prior: NiwDirichletPrior,
    grid: list[TemperingProfile],
    init: GmmParams,
    settings: EmSettings | None = None,
) -> TemperingProfile:
    """Grid search: run unweighted EM once per profile from the same init and
    keep the profile with the largest final unweighted log-posterior.
    Ties break toward the smallest grid index."""
    if not grid:
        raise ValueError("tempering grid is empty")
    settings = settings or EmSettings()
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    w = WeightDraw.unweighted(Y.shape[0], prior.n_components)
    best = None
    best_value = -np.inf
    failures = []
    for profile in grid:
        try:
            result = run_weighted_em(
                Y, w, prior, init,
                EmSettings(settings.max_iter, settings.tol, profile),
            )
        except (EmFailure, ValueError) as exc:
            warnings.warn(f"tempering profile {profile} rejected: {exc}")
            failures.append(exc)
            continue
        if result.log_posterior > best_value:
            best_value = result.log_posterior
            best = profile
    if best is None:
        raise EmFailure(f"all {len(grid)} tempering profiles failed: {failures[-1]}")
    return best
