"""Command-line interface for the sampling toolkit.

All defaults can live in a single JSON config file (--config); any flag
given on the command line overrides the config value. Every stochastic
subcommand requires --seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import bayes_opt
from .bob_objective import BobConfig, make_objective
from .conjugate_oracle import (
    load_draws,
    posterior_hyper,
    sample_bayes_posterior,
    save_draws,
)
from .gmm_core import load_data_csv, save_data_csv
from .harness import (
    RunConfig,
    SimSetting,
    cv_select_lambda_nu,
    default_box,
    default_prior,
    generate_simulation,
    init_params,
    compare_methods,
    run_bob,
    run_wbb,
    standardize,
)
from .random_weighting import SeededRng, WeightScheme
from .weighted_em import (
    EmSettings,
    TemperingProfile,
    default_tempering_grid,
    tune_tempering,
)

STREAM_INIT = 1
STREAM_CV = 2
STREAM_TUNE = 3
STREAM_ORACLE = 6
STREAM_PRED = 7


def _merge(args: argparse.Namespace, key: str, default=None):
    """Flag value if given, else config-file value, else default."""
    value = getattr(args, key.replace("-", "_"), None)
    # store_true flags default to False, which must not mask a config value
    if value is not None and value is not False:
        return value
    return getattr(args, "_config", {}).get(key, default)


def _add_common(p: argparse.ArgumentParser, seed_required: bool = True):
    p.add_argument("--config", help="JSON config file with default values")
    p.add_argument("--seed", type=int, required=False, help="master seed")
    p.set_defaults(_seed_required=seed_required)


def _add_data_and_prior(p: argparse.ArgumentParser):
    p.add_argument("--data", help="observation CSV (rows are observations)")
    p.add_argument("--header", action="store_true", help="data CSV has a header row")
    p.add_argument("--K", type=int, help="number of mixture components")
    p.add_argument("--lam", type=float, help="prior precision scale lambda")
    p.add_argument("--nu", type=float, help="prior degrees of freedom nu")
    p.add_argument("--cv", action="store_true", help="select lambda and nu by cross-validation")
    p.add_argument(
        "--no-standardize",
        action="store_true",
        help="skip the per-column standardization of the data",
    )
    p.add_argument("--n-restarts", type=int, help="initialization restarts (default 10)")
    p.add_argument("--max-iter", type=int, help="EM iteration cap (default 500)")
    p.add_argument("--tol", type=float, help="EM relative tolerance (default 1e-8)")
    p.add_argument("--temper", help="tempering profile as 'a,b,c,r' (default none)")


def _prepare(args) -> tuple[np.ndarray, object, SeededRng, EmSettings]:
    """Shared setup: load data, standardize, resolve the prior, build the rng."""
    data_path = _merge(args, "data")
    if data_path is None:
        raise SystemExit("error: --data is required")
    Y = load_data_csv(data_path, header=bool(_merge(args, "header", False)))
    if not _merge(args, "no-standardize", False):
        Y, _ = standardize(Y)
    K = _merge(args, "K")
    if K is None:
        raise SystemExit("error: --K is required")
    K = int(K)
    rng = SeededRng(args.seed)
    d = Y.shape[1]
    if _merge(args, "cv", False):
        lam, nu = cv_select_lambda_nu(
            Y, K, [0.1, 1.0, 10.0], [d + 2, d + 10, d + 50], 0.75, rng.child(STREAM_CV)
        )
    else:
        lam = float(_merge(args, "lam", 1.0))
        nu = float(_merge(args, "nu", d + 2))
    prior = default_prior(K, d, lam, nu)
    profile = None
    temper = _merge(args, "temper")
    if temper:
        profile = TemperingProfile(*(float(v) for v in str(temper).split(",")))
    settings = EmSettings(
        int(_merge(args, "max-iter", 500)), float(_merge(args, "tol", 1e-8)), profile
    )
    return Y, prior, rng, settings


def _write_json(path, obj):
    if path:
        Path(path).write_text(json.dumps(obj, indent=2))
    else:
        print(json.dumps(obj, indent=2))


def cmd_simulate(args):
    setting_id = _merge(args, "setting")
    if setting_id is not None:
        setting = SimSetting.from_id(int(setting_id))
    else:
        n, d, K = _merge(args, "n"), _merge(args, "d"), _merge(args, "K")
        if None in (n, d, K):
            raise SystemExit("error: give --setting or all of --n --d --K")
        setting = SimSetting(int(n), int(d), int(K))
    Y, Z = generate_simulation(setting, SeededRng(args.seed))
    save_data_csv(_merge(args, "out-y", "Y.csv"), Y)
    save_data_csv(_merge(args, "out-z", "Z.csv"), Z)
    print(f"wrote {Y.shape[0]}x{Y.shape[1]} observations, K={setting.K}")


def cmd_tune_temper(args):
    Y, prior, rng, settings = _prepare(args)
    init = init_params(
        Y, prior.n_components, int(_merge(args, "n-restarts", 10)), rng.child(STREAM_INIT), prior
    )
    best = tune_tempering(Y, prior, default_tempering_grid(), init, settings)
    _write_json(_merge(args, "out"), {"a": best.a, "b": best.b, "c": best.c, "r": best.r})


def _resolve_box(args, K):
    lower, upper = default_box(K)
    lo = _merge(args, "lower")
    up = _merge(args, "upper")
    if lo is not None:
        lower = np.array([float(v) for v in str(lo).split(",")])
    if up is not None:
        upper = np.array([float(v) for v in str(up).split(",")])
    return lower, upper


def cmd_tune_bob(args):
    Y, prior, rng, settings = _prepare(args)
    K = prior.n_components
    init = init_params(
        Y, K, int(_merge(args, "n-restarts", 10)), rng.child(STREAM_INIT), prior
    )
    lower, upper = _resolve_box(args, K)
    cfg = BobConfig(lower, upper, int(_merge(args, "batch-size", 100)), settings)
    budget = bayes_opt.BoBudget(
        int(_merge(args, "n-init", 10)), int(_merge(args, "n-iter", 30))
    )
    objective = make_objective(Y, prior, init, cfg, rng.child(STREAM_TUNE))
    result = bayes_opt.maximize(
        objective, lower, upper, rng.child(STREAM_TUNE, 2**20).generator, budget
    )
    trace_out = _merge(args, "trace-out")
    if trace_out:
        with open(trace_out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", *(f"x{i}" for i in range(lower.size)), "value"])
            for i, rec in enumerate(result.trace):
                writer.writerow([i, *rec["x"], rec["value"]])
    _write_json(
        _merge(args, "out"), {"x_star": result.best_x.tolist(), "value": result.best_value}
    )


def cmd_sample(args):
    Y, prior, rng, settings = _prepare(args)
    scheme = WeightScheme(_merge(args, "scheme", "bob"))
    K, d = prior.n_components, prior.dim
    lower, upper = _resolve_box(args, K)
    cfg = RunConfig(
        scheme,
        int(_merge(args, "draws", 1000)),
        args.seed,
        batch_size=int(_merge(args, "batch-size", 100)),
        bo_budget=bayes_opt.BoBudget(
            int(_merge(args, "n-init", 10)), int(_merge(args, "n-iter", 30))
        ),
        em_settings=settings,
        lower=lower,
        upper=upper,
        n_restarts=int(_merge(args, "n-restarts", 10)),
    )
    run = run_bob(Y, prior, cfg) if scheme is WeightScheme.BOB else run_wbb(Y, prior, cfg)
    out = _merge(args, "out", "draws.csv")
    meta = {"scheme": scheme.value, "seed": args.seed, **run.diagnostics}
    if run.x_star is not None:
        meta["x_star"] = run.x_star.tolist()
    save_draws(out, run.draws, K, d, meta)
    print(f"wrote {run.draws.shape[0]} draws to {out}")


def cmd_oracle(args):
    Y, prior, rng, _ = _prepare(args)
    labels_path = _merge(args, "labels")
    if labels_path is None:
        raise SystemExit("error: --labels (one-hot CSV) is required")
    Z = load_data_csv(labels_path)
    hyper = posterior_hyper(Y, Z, prior)
    S = int(_merge(args, "draws", 1000))
    draws = sample_bayes_posterior(hyper, S, rng.child(STREAM_ORACLE))
    out = _merge(args, "out", "oracle_draws.csv")
    save_draws(out, draws, prior.n_components, prior.dim, {"scheme": "bayes", "seed": args.seed})
    print(f"wrote {S} oracle draws to {out}")


def cmd_predictive(args):
    from .predictive_metrics import sample_predictive_flat

    draws, meta = load_draws(_merge(args, "draws", "draws.csv"))
    pred = sample_predictive_flat(
        draws, meta["K"], meta["d"], SeededRng(args.seed).child(STREAM_PRED)
    )
    out = _merge(args, "out", "predictive.csv")
    save_data_csv(out, pred.samples)
    print(f"wrote {pred.samples.shape[0]} predictive draws to {out}")


def cmd_compare(args):
    oracle_draws, meta = load_draws(_merge(args, "oracle"))
    method_sets = {}
    for spec in args.method or []:
        name, paths = spec.split("=", 1)
        method_sets[name] = [load_draws(p)[0] for p in paths.split(",")]
    if not method_sets:
        raise SystemExit("error: at least one --method name=draws.csv is required")
    report = compare_methods(
        oracle_draws, method_sets, meta["K"], meta["d"], SeededRng(args.seed).child(STREAM_PRED)
    )
    _write_json(_merge(args, "out"), report)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bobgmm",
        description="Approximate posterior sampling for Gaussian mixtures via optimized bootstraps",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate simulated mixture data")
    _add_common(p)
    p.add_argument("--setting", type=int, help="standard setting id 1-9")
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--out-y")
    p.add_argument("--out-z")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tune-temper", help="grid-search the tempering profile")
    _add_common(p)
    _add_data_and_prior(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_tune_temper)

    p = sub.add_parser("tune-bob", help="tune the weight-distribution vector by Bayesian optimization")
    _add_common(p)
    _add_data_and_prior(p)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--n-init", type=int)
    p.add_argument("--n-iter", type=int)
    p.add_argument("--lower", help="comma-separated box lower bounds")
    p.add_argument("--upper", help="comma-separated box upper bounds")
    p.add_argument("--trace-out", help="CSV path for the optimization trace")
    p.add_argument("--out")
    p.set_defaults(func=cmd_tune_bob)

    p = sub.add_parser("sample", help="draw bootstrap posterior samples")
    _add_common(p)
    _add_data_and_prior(p)
    p.add_argument("--scheme", choices=[s.value for s in WeightScheme])
    p.add_argument("--draws", type=int, help="number of posterior draws S")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--n-init", type=int)
    p.add_argument("--n-iter", type=int)
    p.add_argument("--lower")
    p.add_argument("--upper")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("oracle", help="exact posterior draws given known labels")
    _add_common(p)
    _add_data_and_prior(p)
    p.add_argument("--labels", help="one-hot label matrix CSV")
    p.add_argument("--draws", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("predictive", help="posterior-predictive draws from a draw file")
    _add_common(p)
    p.add_argument("--draws", help="flat draw CSV with JSON sidecar")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predictive)

    p = sub.add_parser("compare", help="TV/KS metrics of methods against the oracle")
    _add_common(p)
    p.add_argument("--oracle", help="oracle draw CSV")
    p.add_argument(
        "--method",
        action="append",
        help="name=draws.csv (commas separate repeated runs); repeatable",
    )
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config = {}
    if getattr(args, "config", None):
        config = json.loads(Path(args.config).read_text())
    args._config = config
    if args.seed is None:
        if "seed" in config:
            args.seed = int(config["seed"])
        else:
            parser.error(f"--seed is required for '{args.command}'")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
