"""Noisy tuning objective for the optimized bootstrap.

For a candidate tuning vector x, run a batch of S_b weighted EM solves,
flatten the resulting parameter draws, fit a per-coordinate Gaussian kernel
density estimate to each of the M flat coordinates, and score the batch by
a sample estimate of the reverse KL divergence from the product of the
marginal KDEs to the unnormalized posterior. Smaller is better; the
optimizer receives the negated value.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import iqr

from .errors import EmFailure, ObjectiveEvaluationError
from .gmm_core import (
    GmmParams,
    NiwDirichletPrior,
    flatten,
    log_likelihood,
    log_prior,
)
from .random_weighting import SeededRng, WeightScheme, draw_weights
from .weighted_em import EmSettings, run_weighted_em

__all__ = [
    "BobConfig",
    "Kde1d",
    "kde_fit",
    "BatchResult",
    "evaluate_batch",
    "estimate_objective",
    "objective_for_optimizer",
    "make_objective",
]

MAX_FAILURE_FRACTION = 0.10
DENSITY_FLOOR = 1e-300


@dataclass(frozen=True)
class BobConfig:
    """Search box, batch size, and EM settings for one tuning problem."""

    lower: np.ndarray
    upper: np.ndarray
    batch_size: int = 100
    em_settings: EmSettings = field(default_factory=EmSettings)

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != upper.shape or np.any(lower > upper):
            raise ValueError("need lower <= upper componentwise")
        if lower[0] < 1.0:
            raise ValueError("the first box coordinate (x_alpha) must start at >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")


@dataclass(frozen=True)
class Kde1d:
    """Gaussian KDE on one coordinate with a fixed bandwidth."""

    centers: np.ndarray
    bandwidth: float
    degenerate: bool = False

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self.centers) / self.bandwidth
        dens = np.exp(-0.5 * z * z).mean(axis=-1) / (
            self.bandwidth * math.sqrt(2.0 * math.pi)
        )
        # floor avoids log(0) for points far in the tails
        return np.log(np.maximum(dens, DENSITY_FLOOR))


def kde_fit(samples: np.ndarray, fallback_bandwidth: float | None = None) -> Kde1d:
    """Silverman bandwidth 1.06 * min(sd, IQR/1.34) * m^{-1/5}; a (near)
    constant sample is flagged degenerate and gets a narrow fixed bandwidth."""
    samples = np.asarray(samples, dtype=float)
    m = samples.size
    if m < 2:
        raise ValueError("need at least 2 samples")
    sd = float(samples.std(ddof=1))
    spread_iqr = float(iqr(samples)) / 1.34
    candidates = [s for s in (sd, spread_iqr) if s > 0]
    scale = min(candidates) if candidates else 0.0
    h = 1.06 * scale * m ** (-0.2)
    if h > 0 and math.isfinite(h):
        return Kde1d(samples, h)
    if fallback_bandwidth is None:
        fallback_bandwidth = 1e-6 * max(1.0, float(np.abs(samples).max()))
    return Kde1d(samples, fallback_bandwidth, degenerate=True)


@dataclass(frozen=True)
class BatchResult:
    """Draws and bookkeeping from one batch of weighted EM solves."""

    flat_draws: np.ndarray
    params: list
    n_failures: int
    summands: np.ndarray
    value: float


def evaluate_batch(
    x: np.ndarray,
    Y: np.ndarray,
    prior: NiwDirichletPrior,
    init: GmmParams,
    cfg: BobConfig,
    rng: SeededRng,
) -> BatchResult:
    """Run cfg.batch_size weighted EM solves under the bob scheme and score
    the surviving draws. Raises ObjectiveEvaluationError when more than 10
    percent of the solves fail; the optimizer substitutes a penalty value."""
    x = np.asarray(x, dtype=float)
    if np.any(x < cfg.lower - 1e-12) or np.any(x > cfg.upper + 1e-12):
        raise ValueError(f"x={x.tolist()} outside the search box")
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = Y.shape[0]
    K = prior.n_components
    flats = []
    params = []
    failures = 0
    for s in range(cfg.batch_size):
        w = draw_weights(WeightScheme.BOB, rng.child(s), n, K, x=x)
        try:
            result = run_weighted_em(Y, w, prior, init, cfg.em_settings)
        except EmFailure:
            failures += 1
            continue
        params.append(result.params)
        flats.append(flatten(result.params))
    if failures > MAX_FAILURE_FRACTION * cfg.batch_size:
        raise ObjectiveEvaluationError(
            f"{failures}/{cfg.batch_size} EM solves failed for x={x.tolist()}"
        )
    draws = np.array(flats)

    # product of per-coordinate KDEs evaluated at the draws themselves
    log_g = np.zeros(draws.shape[0])
    for j in range(draws.shape[1]):
        log_g += kde_fit(draws[:, j]).logpdf(draws[:, j])

    log_p = np.empty(draws.shape[0])
    for s, theta in enumerate(params):
        log_p[s] = log_likelihood(Y, theta) + log_prior(theta, prior)

    summands = log_g - log_p
    value = float(summands.mean())
    if not math.isfinite(value):
        raise ObjectiveEvaluationError(f"non-finite objective value for x={x.tolist()}")
    return BatchResult(draws, params, failures, summands, value)


def estimate_objective(
    x: np.ndarray,
    Y: np.ndarray,
    prior: NiwDirichletPrior,
    init: GmmParams,
    cfg: BobConfig,
    rng: SeededRng,
) -> float:
    """Noisy reverse-KL estimate for the tuning vector x (smaller is better)."""
    return evaluate_batch(x, Y, prior, init, cfg, rng).value


def objective_for_optimizer(
    x: np.ndarray,
    Y: np.ndarray,
    prior: NiwDirichletPrior,
    init: GmmParams,
    cfg: BobConfig,
    rng: SeededRng,
) -> float:
    """Sign flip: the optimizer maximizes the negated KL estimate."""
    return -estimate_objective(x, Y, prior, init, cfg, rng)


def make_objective(Y, prior, init, cfg: BobConfig, rng: SeededRng, audit_path=None):
    """Callable handed to the optimizer. Each call consumes a fresh child
    stream keyed by a call counter, keeping evaluations reproducible and
    independent of evaluation order elsewhere."""
    counter = {"calls": 0}

    def objective(x: np.ndarray) -> float:
        idx = counter["calls"]
        counter["calls"] += 1
        result = evaluate_batch(x, Y, prior, init, cfg, rng.child(idx))
        if audit_path is not None:
            with open(audit_path, "a", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(
                    [idx, *np.asarray(x, dtype=float).tolist(), result.value, result.n_failures]
                )
        return -result.value

    return objective
