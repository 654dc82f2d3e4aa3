"""Posterior-predictive sampling and sample-based distance metrics.

A set of posterior parameter draws is converted into one new-data draw per
parameter draw; two predictive sets are then compared coordinate by
coordinate and the per-coordinate distances averaged. The metrics accept
any two matrices with a common column layout, so they also apply directly
to flattened parameter draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gmm_core import GmmParams, unflatten
from .random_weighting import SeededRng

__all__ = [
    "PredictiveDraws",
    "sample_mixture",
    "sample_predictive",
    "sample_predictive_flat",
    "tv_hat",
    "ks_hat",
]

# Equal-width bin count for the TV pmf estimate. The sampling noise floor of
# the empirical-pmf TV grows like sqrt(bins / S); 32 keeps the floor of two
# S = 20000 same-distribution sets under 0.02 while preserving enough
# resolution to rank methods at desk scale.
TV_BINS = 32


@dataclass(frozen=True)
class PredictiveDraws:
    """S x d matrix of new-data draws with a provenance tag."""

    samples: np.ndarray
    source_label: str = ""

    def __post_init__(self):
        object.__setattr__(
            self, "samples", np.atleast_2d(np.asarray(self.samples, dtype=float))
        )


def sample_mixture(
    params: GmmParams, n_points: int, generator: np.random.Generator
) -> np.ndarray:
    """n_points draws y ~ sum_k pi_k N(mu_k, Sigma_k)."""
    K, d = params.n_components, params.dim
    labels = generator.choice(K, size=n_points, p=params.weights)
    out = np.empty((n_points, d))
    chols = [np.linalg.cholesky(params.covs[k]) for k in range(K)]
    for k in range(K):
        mask = labels == k
        m = int(mask.sum())
        if m:
            out[mask] = params.means[k] + generator.standard_normal((m, d)) @ chols[k].T
    return out


def sample_predictive(
    draws: list, rng: SeededRng, source_label: str = ""
) -> PredictiveDraws:
    """Exactly one y_new per parameter draw: pick a component from pi, then
    draw from that component's Gaussian. Draw s uses its own child stream so
    the output is partition-independent."""
    if not draws:
        raise ValueError("need at least one parameter draw")
    out = np.empty((len(draws), draws[0].dim))
    for s, params in enumerate(draws):
        out[s] = sample_mixture(params, 1, rng.child(s).generator)[0]
    return PredictiveDraws(out, source_label)


def sample_predictive_flat(
    flat_draws: np.ndarray, K: int, d: int, rng: SeededRng, source_label: str = ""
) -> PredictiveDraws:
    """sample_predictive for draws stored in the flat coordinate layout."""
    flat_draws = np.atleast_2d(np.asarray(flat_draws, dtype=float))
    return sample_predictive(
        [unflatten(v, K, d) for v in flat_draws], rng, source_label
    )


def _columns(A, B):
    if isinstance(A, PredictiveDraws):
        A = A.samples
    if isinstance(B, PredictiveDraws):
        B = B.samples
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.size == 0 or B.size == 0:
        raise ValueError("empty sample set")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"column counts differ: {A.shape[1]} vs {B.shape[1]}")
    return A, B


def tv_hat(A, B, bins: int = TV_BINS) -> float:
    """Average over coordinates of the total variation distance between the
    two binned empirical pmfs, on a shared equal-width grid spanning the
    pooled range of each coordinate."""
    A, B = _columns(A, B)
    total = 0.0
    for j in range(A.shape[1]):
        a, b = A[:, j], B[:, j]
        lo = min(a.min(), b.min())
        hi = max(a.max(), b.max())
        if hi <= lo:
            continue  # both samples constant and equal: distance 0
        edges = np.linspace(lo, hi, bins + 1)
        pa, _ = np.histogram(a, bins=edges)
        pb, _ = np.histogram(b, bins=edges)
        total += 0.5 * np.abs(pa / a.size - pb / b.size).sum()
    return float(total / A.shape[1])


def ks_hat(A, B) -> float:
    """Average over coordinates of the two-sample Kolmogorov-Smirnov
    statistic, the sup of |ECDF_a - ECDF_b| over the pooled points."""
    A, B = _columns(A, B)
    total = 0.0
    for j in range(A.shape[1]):
        a = np.sort(A[:, j])
        b = np.sort(B[:, j])
        pooled = np.concatenate([a, b])
        Fa = np.searchsorted(a, pooled, side="right") / a.size
        Fb = np.searchsorted(b, pooled, side="right") / b.size
        total += np.abs(Fa - Fb).max()
    return float(total / A.shape[1])
