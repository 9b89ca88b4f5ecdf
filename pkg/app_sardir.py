#!/usr/bin/env python3
"""
sardir command line: fit, cross-validate and simulate spatial Dirichlet and
multinomial regression models on compositional data.

Usage (from repo root):
  python app_sardir.py fit --features data/sample/features.csv --labels data/sample/labels.csv --out out/fit.json
  python app_sardir.py fit ... --spatial --weights knn:3 --coords data/sample/coords.csv
  python app_sardir.py loocv --features lake.csv --manifest lake.manifest --order 2 --labels-scale percent --close-rows
  python app_sardir.py replicate --rho 0.5 --n 200 --n 1000 --reps 100 --jobs 4 --out out/table2.json
  python app_sardir.py predict-study --rho 0.1 --rho 0.5 --rho 0.9 --n 1000 --out out/table4.json

Exit codes: 0 success, 2 bad input or usage, 3 numeric failure, 4 fit did not converge.
"""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from util.compdata import DesignPair, ZERO_REPLACE_MODES
from util.errors import InputError, NumericError
from util.ingest import (
    LABEL_SCALES,
    ColumnManifest,
    DatasetBundle,
    LoadedDataset,
    load_bundle,
    polynomial_features,
    run_loocv,
)
from util.multinomial import fit_multinomial
from util.optim import FitConfig, FitResult, fit_dirichlet
from util.run_config import RunOutput, load_environment, load_flat_config, resolve_seed
from util.simulate import (
    ESTIMATORS,
    GENERATORS,
    ReplicationTable,
    SyntheticConfig,
    generate_dataset,
    run_prediction_study,
    run_replication_study,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_NOT_CONVERGED = 4

Z_MODES = ("intercept", "copy-x", "file")


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Not JSON serializable: {type(value).__name__}")


def write_json(path: Path, payload: dict) -> Path:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


# --- dataset commands ---------------------------------------------------------

def _add_dataset_arguments(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--features", required=True, type=Path, help="CSV with a header row (features, or all columns with --manifest)")
    sub.add_argument("--labels", type=Path, help="CSV of compositional labels (header row)")
    sub.add_argument("--precision", type=Path, help="CSV of precision-design covariates (used with --z file)")
    sub.add_argument("--coords", type=Path, help="CSV of point coordinates for knn/invdist weights")
    sub.add_argument("--counts", type=Path, help="CSV with one column of multinomial trial counts")
    sub.add_argument("--manifest", type=Path, help="KEY=value file naming FEATURES/LABELS/COORDS/PRECISION columns")
    sub.add_argument("--labels-scale", choices=LABEL_SCALES, default="unit")
    sub.add_argument(
        "--close-rows",
        action="store_true",
        help="Divide label rows by their sums when they miss 1 by at most 0.01 (rounded tables)",
    )
    sub.add_argument("--model", choices=("dirichlet", "multinomial"), default="dirichlet")
    sub.add_argument("--spatial", action="store_true", help="Fit the spatial lag model (needs --weights)")
    sub.add_argument("--weights", help="Weights CSV (dense or i,j,w list) or builder spec knn:k / invdist:cutoff / band:k")
    sub.add_argument("--row-normalize", action="store_true")
    sub.add_argument("--z", choices=Z_MODES, default="intercept", help="Precision design")
    sub.add_argument("--zero-replace", choices=ZERO_REPLACE_MODES, default="auto")
    sub.add_argument("--common-parametrization", action="store_true", help="Pin the precision to 1 (no gamma)")
    sub.add_argument("--max-iterations", type=int, default=500)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--out", required=True, type=Path)


def _load(args: argparse.Namespace) -> LoadedDataset:
    manifest = None
    if args.manifest is not None:
        manifest = ColumnManifest.from_mapping(load_flat_config(args.manifest))
    bundle = DatasetBundle(
        features_path=args.features,
        labels_path=args.labels,
        weights=args.weights if args.spatial else None,
        precision_path=args.precision,
        coords_path=args.coords,
        counts_path=args.counts,
        manifest=manifest,
        row_normalize_weights=args.row_normalize,
    )
    return load_bundle(bundle, args.labels_scale, args.close_rows)


def _fit_config(args: argparse.Namespace) -> FitConfig:
    return FitConfig(
        max_iterations=args.max_iterations,
        seed=resolve_seed(args.seed),
        zero_replace=args.zero_replace,
        common_parametrization=args.common_parametrization,
    )


def command_fit(args: argparse.Namespace) -> int:
    data = _load(args)
    design = DesignPair.from_features(data.features, data.precision, args.z)
    W = data.weights
    config = _fit_config(args)
    if args.model == "dirichlet":
        result: FitResult = fit_dirichlet(data.Y, design.X, design.Z, W, config)
    else:
        result = fit_multinomial(data.Y, design.X, W, data.counts, config)
    result.notes["feature_names"] = ["intercept", *data.feature_names]
    result.notes["label_names"] = data.label_names
    if data.label_closure is not None:
        result.notes["label_closure"] = data.label_closure.to_dict()

    out = RunOutput(args.out)
    write_json(out.primary, result.to_dict())
    print(result.summary())
    if not result.converged:
        logger.warning("Fit did not converge (%s); result written anyway", result.termination)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def command_loocv(args: argparse.Namespace) -> int:
    data = _load(args)
    features = polynomial_features(data.features, args.order)
    design = DesignPair.from_features(features, data.precision, args.z)
    W = data.weights
    report = run_loocv(
        data.Y, design, W, args.model, _fit_config(args), data.counts, args.jobs, data.label_names,
    )
    report.metadata["order"] = args.order
    if data.label_closure is not None:
        report.metadata["label_closure"] = data.label_closure.to_dict()

    out = RunOutput(args.out)
    write_json(out.primary, report.to_dict())
    predictions = out.artifact(".csv", "predictions")
    report.predictions_frame().to_csv(predictions, index=False, float_format="%.10g")
    logger.info(f"Wrote {predictions}")
    print(report.render())
    return EXIT_OK


# --- synthetic commands -------------------------------------------------------

def _add_synthetic_arguments(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, help="KEY=value file mirroring SyntheticConfig (N, RHO_TRUE, ...)")
    sub.add_argument("--n", type=int, action="append", help="Sample size; repeat for several tables")
    sub.add_argument("--k", type=int, help="Band half-width of the generating W")
    sub.add_argument("--generator", choices=GENERATORS)
    sub.add_argument("--estimator", choices=ESTIMATORS)
    sub.add_argument("--test-size", type=int)
    sub.add_argument("--use-trial-counts", action="store_true", help="Multinomial estimator weights rows by trial counts")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--out", required=True, type=Path)


def _synthetic_config(args: argparse.Namespace, **flags) -> SyntheticConfig:
    """Config file values overridden by whichever flags were given."""
    mapping: dict[str, str | None] = {}
    if args.config is not None:
        mapping.update({k.upper(): v for k, v in load_flat_config(args.config).items()})
    overrides = {
        "N": args.n[0] if args.n else None,
        "K_NEIGHBORS": args.k,
        "GENERATOR": args.generator,
        "ESTIMATOR": args.estimator,
        "TEST_SIZE": args.test_size,
        "SEED": resolve_seed(args.seed),
        **flags,
    }
    if args.use_trial_counts:
        overrides["USE_TRIAL_COUNTS"] = "true"
    mapping.update({k: str(v) for k, v in overrides.items() if v is not None})
    return SyntheticConfig.from_mapping(mapping)


def command_simulate(args: argparse.Namespace) -> int:
    config = _synthetic_config(args, RHO_TRUE=args.rho)
    data = generate_dataset(config, args.replication)
    out = RunOutput(args.out)

    pd.DataFrame(data.X[:, 1:], columns=["x1", "x2"]).to_csv(out.artifact(".csv", "features"), index=False, float_format="%.17g")
    pd.DataFrame(data.Z[:, 1:], columns=["z1"]).to_csv(out.artifact(".csv", "precision"), index=False, float_format="%.17g")
    labels = pd.DataFrame(data.Y.values, columns=[f"class_{j}" for j in range(data.Y.J)])
    labels.to_csv(out.artifact(".csv", "labels"), index=False, float_format="%.17g")
    pd.DataFrame(data.weights.weights).to_csv(out.artifact(".csv", "weights"), index=False, header=False, float_format="%.17g")
    if data.counts is not None:
        pd.DataFrame({"trials": data.counts.counts}).to_csv(out.artifact(".csv", "counts"), index=False)

    write_json(out.primary, {
        "schema_version": 1,
        "config": config.describe(),
        "replication": args.replication,
        "truth": data.truth.to_dict(),
    })
    print(f"Generated n={config.n} {config.generator} dataset into {out.folder}")
    return EXIT_OK


def command_replicate(args: argparse.Namespace) -> int:
    config = _synthetic_config(args, RHO_TRUE=args.rho, REPLICATIONS=args.reps)
    sizes = args.n or [config.n]
    table: ReplicationTable | None = None
    for n in sizes:
        part = run_replication_study(config.replace(n=n), jobs=args.jobs, progress=not args.quiet)
        table = part if table is None else table.merge(part)

    out = RunOutput(args.out)
    table.to_json(out.primary)
    table.to_csv(out.artifact(".csv"))
    logger.info(f"Wrote {out.primary} and {out.artifact('.csv')}")
    print(table.render())
    print()
    print("Non-converged fits (excluded):")
    print(table.non_converged().to_string(index=False))
    return EXIT_OK


def command_predict_study(args: argparse.Namespace) -> int:
    base = _synthetic_config(args)
    rhos = args.rho or [base.rho_true]
    results: dict[str, dict] = {}
    rows = []
    for rho in rhos:
        reports = run_prediction_study(base.replace(rho_true=rho), jobs=args.jobs)
        results[f"{rho:g}"] = {model: report.to_dict() for model, report in reports.items()}
        for model, report in reports.items():
            rows.append({"rho": rho, "model": model, **report.scalar_items()})

    out = RunOutput(args.out)
    write_json(out.primary, {"schema_version": 1, "config": base.describe(), "results": results})
    frame = pd.DataFrame(rows)
    frame.to_csv(out.artifact(".csv"), index=False, float_format="%.10g")
    print(frame.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    return EXIT_OK


COMMANDS = {
    "fit": command_fit,
    "loocv": command_loocv,
    "simulate": command_simulate,
    "replicate": command_replicate,
    "predict-study": command_predict_study,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sardir", description="Spatial Dirichlet / multinomial regression")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    subs = parser.add_subparsers(dest="command", required=True)

    fit = subs.add_parser("fit", help="Fit one model and write the FitResult JSON")
    _add_dataset_arguments(fit)

    loocv = subs.add_parser("loocv", help="Leave-one-out cross-validation")
    _add_dataset_arguments(loocv)
    loocv.add_argument("--order", type=int, choices=(1, 2), default=1, help="2 appends squared features")
    loocv.add_argument("--jobs", type=int, default=1)

    simulate = subs.add_parser("simulate", help="Write one synthetic dataset")
    _add_synthetic_arguments(simulate)
    simulate.add_argument("--rho", type=float)
    simulate.add_argument("--replication", type=int, default=0)

    replicate = subs.add_parser("replicate", help="Monte-Carlo estimation-error study")
    _add_synthetic_arguments(replicate)
    replicate.add_argument("--rho", type=float)
    replicate.add_argument("--reps", type=int)
    replicate.add_argument("--jobs", type=int, default=1)
    replicate.add_argument("--quiet", action="store_true", help="No progress bar")

    study = subs.add_parser("predict-study", help="Out-of-sample prediction comparison")
    _add_synthetic_arguments(study)
    study.add_argument("--rho", type=float, action="append")
    study.add_argument("--jobs", type=int, default=1, help="Fit the spatial and non-spatial models in parallel processes")
    return parser


def main(argv: list[str] | None = None) -> int:
    load_environment()
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "spatial", False) and not args.weights:
        parser.error("--spatial requires --weights")

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "weights", None) and not args.spatial:
        logger.warning("--weights is ignored without --spatial; fitting the non-spatial model")
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        logger.error(f"Input error: {exc}")
        return EXIT_INPUT
    except NumericError as exc:
        logger.error(f"Numeric failure: {exc}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
