"""Seeded random-weight generation for the bootstrap schemes.

Reproducibility contract: every bootstrap replicate gets its own counter
based stream derived from (master_seed, *spawn_key), so draws are bit
identical regardless of how work is split across processes. Exponential
variates are generated by inverse CDF from a single uniform each, which
pins the consumption order of the stream.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .weighted_em import WeightDraw

__all__ = [
    "SeededRng",
    "WeightScheme",
    "bob_prior_weights",
    "draw_weights",
    "dirichlet_overdispersion_check",
]


@dataclass(frozen=True)
class SeededRng:
    """Counter-based generator keyed by a master seed and a spawn path.

    Children are derived by extending the spawn path, never by drawing from
    the parent, so sibling streams are independent and order-insensitive.
    """

    master_seed: int
    spawn_key: tuple = ()
    generator: np.random.Generator = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        seq = np.random.SeedSequence(self.master_seed, spawn_key=self.spawn_key)
        object.__setattr__(self, "generator", np.random.Generator(np.random.Philox(seq)))

    def child(self, *path: int) -> "SeededRng":
        return SeededRng(self.master_seed, self.spawn_key + tuple(path))

    def uniform(self, size=None) -> np.ndarray:
        return self.generator.random(size)

    def exponential(self, size=None) -> np.ndarray:
        # inverse CDF from one uniform per variate keeps stream use explicit
        return -np.log1p(-self.generator.random(size))

    def standard_normal(self, size=None) -> np.ndarray:
        return self.generator.standard_normal(size)


class WeightScheme(str, enum.Enum):
    WLB = "wlb"
    WBB1 = "wbb1"
    WBB2 = "wbb2"
    BOB = "bob"


def bob_prior_weights(x: np.ndarray, K: int) -> tuple[float, np.ndarray, np.ndarray, float]:
    """Split the tuning vector x = (x_alpha, x_mu[1..K], x_sigma[1..K], x_pi)
    into (x_alpha, u_mu, u_sigma, u_pi); all prior weights are deterministic."""
    x = np.asarray(x, dtype=float)
    if x.shape != (2 * (K + 1),):
        raise ValueError(f"expected tuning vector of length {2 * (K + 1)}, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("tuning vector must be finite")
    x_alpha = float(x[0])
    if x_alpha < 1.0:
        raise ValueError(f"x_alpha must be >= 1, got {x_alpha}")
    u_mu = x[1 : K + 1].copy()
    u_sigma = x[K + 1 : 2 * K + 1].copy()
    x_pi = float(x[2 * K + 1])
    if np.any(u_mu < 0) or np.any(u_sigma < 0) or x_pi < 0:
        raise ValueError("prior weights must be non-negative")
    return x_alpha, u_mu, u_sigma, x_pi


def draw_weights(
    scheme: WeightScheme,
    rng: SeededRng,
    n: int,
    K: int,
    x: np.ndarray | None = None,
) -> WeightDraw:
    """Draw one weight realization for a bootstrap replicate.

    WLB:  u proportional to w ~ Exp(1); prior weights all 0.
    WBB1: u ~ Exp(1) iid; prior weights ~ Exp(1) iid.
    WBB2: u ~ Exp(1) iid; prior weights all 1.
    BOB:  u proportional to w^{x_alpha}; prior weights taken from x.

    The normalized schemes (wlb, bob) are scaled so the likelihood weights
    have mean 1 (sum n), the same total information as the Exp(1) schemes;
    with x_alpha = 1 the bob draw is bit-identical to the wlb draw.
    """
    scheme = WeightScheme(scheme)
    if scheme is WeightScheme.WLB:
        w = rng.exponential(n)
        u = w / w.sum()
        u *= n
        return WeightDraw(u, 0.0, np.zeros(K), np.zeros(K))
    if scheme is WeightScheme.WBB1:
        u = rng.exponential(n)
        u_pi = float(rng.exponential())
        u_mu = rng.exponential(K)
        u_sigma = rng.exponential(K)
        return WeightDraw(u, u_pi, u_mu, u_sigma)
    if scheme is WeightScheme.WBB2:
        u = rng.exponential(n)
        return WeightDraw(u, 1.0, np.ones(K), np.ones(K))
    if x is None:
        raise ValueError("the bob scheme requires a tuning vector x")
    x_alpha, u_mu, u_sigma, u_pi = bob_prior_weights(x, K)
    w = rng.exponential(n)
    powered = w**x_alpha
    u = powered / powered.sum()
    u *= n
    return WeightDraw(u, u_pi, u_mu, u_sigma)


def dirichlet_overdispersion_check(
    x_alpha: float, n: int, n_draws: int, rng: SeededRng
) -> dict:
    """Monte Carlo per-coordinate variance of the normalized weights
    u = w^{x_alpha}/sum, w ~ Exp(1). For x_alpha = 1 this is the flat
    Dirichlet with variance (n-1)/(n^2 (n+1)); x_alpha > 1 is overdispersed."""
    if x_alpha < 1.0:
        raise ValueError("x_alpha must be >= 1")
    draws = np.empty((n_draws, n))
    for s in range(n_draws):
        w = rng.child(s).exponential(n) ** x_alpha
        draws[s] = w / w.sum()
    per_coord_var = draws.var(axis=0, ddof=1) if n_draws > 1 else np.zeros(n)
    return {
        "mean": float(draws.mean()),
        "variance": float(per_coord_var.mean()),
        "variance_mc_se": float(per_coord_var.std(ddof=1) / np.sqrt(n))
        if n > 1
        else 0.0,
    }
