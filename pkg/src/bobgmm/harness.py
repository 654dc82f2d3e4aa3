"""Experiment orchestration: simulated data, hyperparameter selection,
initialization, and the full bootstrap pipelines.

Every stochastic phase draws from its own child stream of one master seed,
so a run is reproducible byte for byte regardless of the worker count used
for the draw loop.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import KMeans

from . import bayes_opt
from .bob_objective import BobConfig, make_objective
from .errors import DimensionError, EmFailure
from .gmm_core import (
    GmmParams,
    NiwDirichletPrior,
    flatten,
    log_likelihood,
    log_unnorm_posterior,
)
from .random_weighting import SeededRng, WeightScheme, draw_weights
from .weighted_em import EmSettings, WeightDraw, run_weighted_em
from .conjugate_oracle import labels_to_onehot
from .predictive_metrics import ks_hat, sample_predictive_flat, tv_hat

__all__ = [
    "TABLE_SETTINGS",
    "SimSetting",
    "RunConfig",
    "BootstrapRun",
    "generate_simulation",
    "standardize",
    "default_prior",
    "default_box",
    "cv_select_lambda_nu",
    "init_params",
    "run_bob",
    "run_wbb",
    "compare_methods",
    "worker_count",
]

# (n, d, K) for the standard simulation settings
TABLE_SETTINGS = {
    1: (50, 5, 2),
    2: (50, 10, 2),
    3: (50, 15, 2),
    4: (100, 5, 3),
    5: (100, 10, 3),
    6: (100, 15, 3),
    7: (150, 5, 4),
    8: (150, 10, 4),
    9: (150, 15, 4),
}

# child-stream roles under one master seed
STREAM_SIM = 0
STREAM_INIT = 1
STREAM_CV = 2
STREAM_TUNE = 3
STREAM_SAMPLE = 4
STREAM_PREDICTIVE = 5

MAX_FAILURE_FRACTION = 0.10


@dataclass(frozen=True)
class SimSetting:
    n: int
    d: int
    K: int
    setting_id: int | None = None

    @classmethod
    def from_id(cls, setting_id: int) -> "SimSetting":
        if setting_id not in TABLE_SETTINGS:
            raise ValueError(f"unknown setting id {setting_id}")
        n, d, K = TABLE_SETTINGS[setting_id]
        return cls(n, d, K, setting_id)


@dataclass(frozen=True)
class RunConfig:
    scheme: WeightScheme
    S: int
    seed: int
    batch_size: int = 100
    bo_budget: bayes_opt.BoBudget = field(default_factory=bayes_opt.BoBudget)
    em_settings: EmSettings = field(default_factory=EmSettings)
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    n_restarts: int = 10

    def __post_init__(self):
        object.__setattr__(self, "scheme", WeightScheme(self.scheme))
        if self.S < 1:
            raise ValueError("S must be at least 1")


@dataclass(frozen=True)
class BootstrapRun:
    draws: np.ndarray
    x_star: np.ndarray | None
    bo_trace: list
    diagnostics: dict


def worker_count() -> int:
    return max(1, int(os.environ.get("BOBGMM_WORKERS", "1")))


def generate_simulation(setting: SimSetting, rng: SeededRng) -> tuple[np.ndarray, np.ndarray]:
    """Uniform labels; mean vectors with the first ceil(0.6 d) entries equal
    to 5k - 4 and the rest 0; identity noise covariance."""
    n, d, K = setting.n, setting.d, setting.K
    informative = math.ceil(0.6 * d)
    means = np.zeros((K, d))
    for k in range(K):
        means[k, :informative] = 5 * (k + 1) - 4
    gen = rng.child(STREAM_SIM).generator
    labels = gen.integers(0, K, size=n)
    Y = means[labels] + gen.standard_normal((n, d))
    return Y, labels_to_onehot(labels, K)


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    sd: np.ndarray

    def apply(self, Y: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(Y) - self.mean) / self.sd

    def invert(self, Y_std: np.ndarray) -> np.ndarray:
        return np.atleast_2d(Y_std) * self.sd + self.mean


def standardize(Y: np.ndarray) -> tuple[np.ndarray, Standardization]:
    """Center and scale each column to mean 0 and unit sample variance
    (denominator n - 1)."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Y.shape[0] < 2:
        raise ValueError("need at least 2 observations to standardize")
    mean = Y.mean(axis=0)
    sd = Y.std(axis=0, ddof=1)
    bad = np.flatnonzero(sd == 0)
    if bad.size:
        raise ValueError(f"constant column(s) {bad.tolist()} cannot be standardized")
    transform = Standardization(mean, sd)
    return transform.apply(Y), transform


def default_prior(K: int, d: int, lam: float, nu: float) -> NiwDirichletPrior:
    """Shared-hyperparameter prior: beta = 0, Psi = I, a = 1.1."""
    return NiwDirichletPrior(
        np.full(K, 1.1),
        np.zeros((K, d)),
        np.full(K, lam),
        np.full(K, nu),
        np.tile(np.eye(d), (K, 1, 1)),
    )


def default_box(K: int) -> tuple[np.ndarray, np.ndarray]:
    """Search box for the tuning vector: x_alpha in [1, 1.5], all prior
    weights in [1e-5, 1.5]."""
    p = 2 * (K + 1)
    lower = np.full(p, 1e-5)
    upper = np.full(p, 1.5)
    lower[0] = 1.0
    upper[0] = 1.5
    return lower, upper


def init_params(
    Y: np.ndarray,
    K: int,
    n_restarts: int,
    rng: SeededRng,
    prior: NiwDirichletPrior,
) -> GmmParams:
    """Candidate pool of K-means++ fits, each polished by 10 unweighted EM
    iterations; the candidate with the largest unnormalized log-posterior
    wins."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n, d = Y.shape
    if np.unique(Y, axis=0).shape[0] < K:
        raise DimensionError(f"need at least {K} distinct observations")
    polish = EmSettings(max_iter=10, tol=1e-14, profile=None)
    w = WeightDraw.unweighted(n, K)
    best = None
    best_score = -np.inf
    for r in range(n_restarts):
        seed = int(rng.child(r).generator.integers(2**31 - 1))
        labels = KMeans(n_clusters=K, init="k-means++", n_init=1, random_state=seed).fit_predict(Y)
        counts = np.bincount(labels, minlength=K)
        if np.any(counts == 0):
            continue
        means = np.empty((K, d))
        covs = np.empty((K, d, d))
        for k in range(K):
            cluster = Y[labels == k]
            means[k] = cluster.mean(axis=0)
            dev = cluster - means[k]
            covs[k] = dev.T @ dev / counts[k] + 1e-6 * np.eye(d)
        candidate = GmmParams(counts / n, means, covs)
        try:
            candidate = run_weighted_em(Y, w, prior, candidate, polish).params
        except EmFailure:
            pass
        score = log_unnorm_posterior(Y, candidate, prior)
        if score > best_score:
            best_score = score
            best = candidate
    if best is None:
        raise EmFailure("every initialization candidate failed")
    # canonical component order: label-permuted candidates score within
    # rounding error of each other, so pin the order by the mean vectors
    order = np.lexsort(best.means.T[::-1])
    return best.permuted(order)


def cv_select_lambda_nu(
    Y: np.ndarray,
    K: int,
    grid_lambda,
    grid_nu,
    split_fraction: float,
    rng: SeededRng,
    n_restarts: int = 3,
    settings: EmSettings | None = None,
) -> tuple[float, float]:
    """Single random train/validation split; fit an unweighted EM under each
    (lambda, nu) pair on the training part and keep the pair with the largest
    validation log-likelihood. Ties go to smaller lambda, then smaller nu."""
    if not (0.0 < split_fraction < 1.0):
        raise ValueError("split_fraction must be in (0, 1)")
    if len(grid_lambda) == 0 or len(grid_nu) == 0:
        raise ValueError("hyperparameter grids must be non-empty")
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = Y.shape[0]
    perm = rng.child(0).generator.permutation(n)
    n_train = max(K, int(math.floor(split_fraction * n)))
    train, valid = Y[perm[:n_train]], Y[perm[n_train:]]
    if valid.shape[0] == 0:
        raise ValueError("validation split is empty; lower split_fraction")
    settings = settings or EmSettings()
    w = WeightDraw.unweighted(train.shape[0], K)

    best_pair = None
    best_value = -np.inf
    failures = []
    for lam in sorted(grid_lambda):
        for nu in sorted(grid_nu):
            prior = default_prior(K, Y.shape[1], float(lam), float(nu))
            try:
                init = init_params(train, K, n_restarts, rng.child(1), prior)
                fit = run_weighted_em(train, w, prior, init, settings).params
                value = log_likelihood(valid, fit)
            except (EmFailure, ValueError) as exc:
                failures.append(exc)
                continue
            if value > best_value:
                best_value = value
                best_pair = (float(lam), float(nu))
    if best_pair is None:
        raise EmFailure(f"every (lambda, nu) pair failed: {failures[-1]}")
    return best_pair


def _solve_chunk(args):
    """One worker task: solve the weighted EM for a chunk of draw indices."""
    Y, prior, init, settings, scheme, x, master_seed, indices = args
    rng = SeededRng(master_seed)
    n = Y.shape[0]
    K = prior.n_components
    results = []
    failures = []
    for s in indices:
        w = draw_weights(scheme, rng.child(STREAM_SAMPLE, s), n, K, x=x)
        try:
            fit = run_weighted_em(Y, w, prior, init, settings)
        except EmFailure as exc:
            failures.append((s, str(exc)))
            continue
        results.append((s, flatten(fit.params), fit.iterations, fit.converged))
    return results, failures


def _sample_draws(Y, prior, init, cfg: RunConfig, x) -> tuple[np.ndarray, dict]:
    """cfg.S independent weight draws and EM solves, split across workers by
    draw index; per-draw streams make the split order-independent."""
    indices = np.arange(cfg.S)
    workers = min(worker_count(), cfg.S)
    chunks = np.array_split(indices, workers)
    tasks = [
        (Y, prior, init, cfg.em_settings, cfg.scheme, x, cfg.seed, chunk.tolist())
        for chunk in chunks
        if chunk.size
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_solve_chunk, tasks))
    else:
        outputs = [_solve_chunk(task) for task in tasks]

    results = []
    failures = []
    for res, fails in outputs:
        results.extend(res)
        failures.extend(fails)
    if len(failures) > MAX_FAILURE_FRACTION * cfg.S:
        raise EmFailure(
            f"{len(failures)}/{cfg.S} bootstrap draws failed "
            f"(first: {failures[0][1] if failures else ''})"
        )
    results.sort(key=lambda item: item[0])
    draws = np.array([flat for _, flat, _, _ in results])
    diagnostics = {
        "n_draws": int(draws.shape[0]),
        "n_failures": len(failures),
        "failed_indices": [s for s, _ in failures],
        "mean_iterations": float(np.mean([it for _, _, it, _ in results])),
        "converged_fraction": float(np.mean([c for _, _, _, c in results])),
    }
    return draws, diagnostics


def run_bob(
    Y: np.ndarray,
    prior: NiwDirichletPrior,
    cfg: RunConfig,
    init: GmmParams | None = None,
) -> BootstrapRun:
    """Tune the weight distribution once by Bayesian optimization, then draw
    cfg.S bootstrap replicates under the tuned vector."""
    if cfg.scheme is not WeightScheme.BOB:
        raise ValueError("run_bob requires the bob scheme")
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    rng = SeededRng(cfg.seed)
    K = prior.n_components
    if init is None:
        init = init_params(Y, K, cfg.n_restarts, rng.child(STREAM_INIT), prior)
    lower, upper = cfg.lower, cfg.upper
    if lower is None or upper is None:
        lower, upper = default_box(K)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)

    t0 = time.perf_counter()
    if np.all(lower == upper):
        # degenerate box: nothing to tune
        x_star = lower.copy()
        trace = []
    else:
        bob_cfg = BobConfig(lower, upper, cfg.batch_size, cfg.em_settings)
        objective = make_objective(Y, prior, init, bob_cfg, rng.child(STREAM_TUNE))
        bo = bayes_opt.maximize(
            objective,
            lower,
            upper,
            rng.child(STREAM_TUNE, 2**20).generator,
            cfg.bo_budget,
        )
        x_star = bo.best_x
        trace = bo.trace
    tune_elapsed = time.perf_counter() - t0

    t0 = time.perf_counter()
    draws, diagnostics = _sample_draws(Y, prior, init, cfg, x_star)
    diagnostics["tune_elapsed"] = tune_elapsed
    diagnostics["sample_elapsed"] = time.perf_counter() - t0
    return BootstrapRun(draws, x_star, trace, diagnostics)


def run_wbb(
    Y: np.ndarray,
    prior: NiwDirichletPrior,
    cfg: RunConfig,
    init: GmmParams | None = None,
) -> BootstrapRun:
    """cfg.S bootstrap replicates under the wlb, wbb1, or wbb2 scheme."""
    if cfg.scheme is WeightScheme.BOB:
        raise ValueError("use run_bob for the bob scheme")
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    rng = SeededRng(cfg.seed)
    if init is None:
        init = init_params(Y, prior.n_components, cfg.n_restarts, rng.child(STREAM_INIT), prior)
    t0 = time.perf_counter()
    draws, diagnostics = _sample_draws(Y, prior, init, cfg, None)
    diagnostics["sample_elapsed"] = time.perf_counter() - t0
    return BootstrapRun(draws, None, [], diagnostics)


def compare_methods(
    bayes_draws: np.ndarray,
    method_draw_sets: dict,
    K: int,
    d: int,
    rng: SeededRng,
) -> dict:
    """TV and KS between each method's predictive distribution and the exact
    posterior's. Each method maps to one flat draw matrix or a list of them
    (repeated runs); with repeats the report carries medians and IQRs."""
    oracle_pred = sample_predictive_flat(bayes_draws, K, d, rng.child(0), "bayes")
    report = {}
    for m, (method, draw_sets) in enumerate(sorted(method_draw_sets.items())):
        if isinstance(draw_sets, np.ndarray):
            draw_sets = [draw_sets]
        tvs, kss = [], []
        t0 = time.perf_counter()
        for run_idx, draws in enumerate(draw_sets):
            pred = sample_predictive_flat(
                draws, K, d, rng.child(1 + m, run_idx), method
            )
            tvs.append(tv_hat(oracle_pred, pred))
            kss.append(ks_hat(oracle_pred, pred))
        record = {
            "method": method,
            "tv": float(np.median(tvs)),
            "ks": float(np.median(kss)),
            "elapsed": time.perf_counter() - t0,
            "n_runs": len(draw_sets),
        }
        if len(draw_sets) > 1:
            record["tv_iqr"] = float(np.subtract(*np.percentile(tvs, [75, 25])))
            record["ks_iqr"] = float(np.subtract(*np.percentile(kss, [75, 25])))
            record["tv_all"] = [float(v) for v in tvs]
            record["ks_all"] = [float(v) for v in kss]
        report[method] = record
    return report
