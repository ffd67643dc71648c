"""Command-line entry point: ``stackshap {run,per-country,synth,explain,metrics}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .dataset import write_csv
from .errors import ConfigError, DataError, StackShapError
from .metrics import DEFAULT_THRESHOLD, metric_report, roc_points, write_metric_rows
from .pipeline import RunConfig, explain_saved, load_manifest, run_per_country, run_pipeline
from .shap import DEFAULT_PERMUTATIONS
from .synth import SynthSpec, default_spec, generate

log = logging.getLogger("stackshap")


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="preprocessed extract (CSV with country, level and feature columns)")
    p.add_argument("--schema", help="feature schema (JSON)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--manifest", help="rerun with the settings recorded in a previous manifest.json")
    p.add_argument("--level-pos", type=int, default=0, help="level coded y=1 (the lower level) [0]")
    p.add_argument("--level-neg", type=int, default=1, help="level coded y=0 [1]")
    p.add_argument("--group", choices=("all", "student_family", "school"), default="all",
                   help="covariate group to model [all]")
    p.add_argument("--k", type=int, default=5, help="cross-validation folds [5]")
    p.add_argument("--seed", type=int, default=0, help="seed for splits, learners and SHAP sampling [0]")
    p.add_argument("--test-fraction", type=float, default=0.2, help="held-out test share [0.2]")
    p.add_argument("--undersample", action="store_true", help="downsample the majority class in every fit")
    p.add_argument("--shap-method", choices=("auto", "exact", "sampled", "linear"), default="auto",
                   help="attribution method; auto = exact up to 15 features, sampled above [auto]")
    p.add_argument("--shap-output", choices=("probability", "log_odds"), default="probability",
                   help="model output scale being explained [probability]")
    p.add_argument("--background-size", type=int, default=100, help="training rows in the SHAP background [100]")
    p.add_argument("--n-permutations", type=int, default=DEFAULT_PERMUTATIONS,
                   help=f"orderings for the sampled method [{DEFAULT_PERMUTATIONS}]")
    p.add_argument("--explain-rows", type=int, help="explain a seeded subset of this many test rows [all]")
    p.add_argument("--grid", choices=("full", "desk"), default="full",
                   help="hyperparameter grid: all 21 configurations or a scaled-down one [full]")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD, help="classification threshold [0.5]")
    p.add_argument("--country", action="append", dest="countries", help="restrict to a country (repeatable)")
    p.add_argument("--svg", action="store_true", help="also render basic ROC and beeswarm SVGs")


def _run_config(args) -> RunConfig:
    if args.manifest:
        return RunConfig.from_dict(load_manifest(args.manifest)["config"])
    if not args.data or not args.schema:
        raise ConfigError("--data and --schema are required unless --manifest is given")
    cfg = RunConfig(
        data=args.data, schema=args.schema, level_pos=args.level_pos, level_neg=args.level_neg, group=args.group,
        k=args.k, seed=args.seed, test_fraction=args.test_fraction, undersample=args.undersample,
        shap_method=args.shap_method, shap_output=args.shap_output, background_size=args.background_size,
        n_permutations=args.n_permutations, explain_rows=args.explain_rows, grid=args.grid,
        threshold=args.threshold, countries=args.countries, svg=args.svg,
    )
    if getattr(args, "research_grid", False):
        cfg.research_grid = True
    return cfg


def cmd_run(args) -> int:
    m = run_pipeline(_run_config(args), args.out)
    print(f"wrote {args.out} ({m['summary']['n_rows']} rows, stack of {len(m['summary']['selected'])} learners)")
    return 0


def cmd_per_country(args) -> int:
    m = run_per_country(_run_config(args), args.out)
    print(f"wrote {args.out} ({len(m['countries'])} countries, {len(m['skipped_countries'])} skipped)")
    return 0


def cmd_synth(args) -> int:
    if args.spec:
        spec = SynthSpec.load(args.spec)
    else:
        spec = default_spec(args.n_rows, args.n_features, args.seed, args.dominant_effect, args.n_countries,
                            args.noise)
        if args.missing_rate:
            spec.missing_rate = args.missing_rate
            spec.__post_init__()
    d = generate(spec)
    write_csv(d, args.out)
    schema_out = args.schema_out or str(Path(args.out).with_suffix(".schema.json"))
    spec.schema.dump(schema_out)
    print(f"wrote {args.out} and {schema_out} ({d.n_rows} rows, {d.n_features} features)")
    return 0


def cmd_explain(args) -> int:
    s = explain_saved(args.model, args.data, args.out, args.method, args.shap_output, args.n_permutations, args.seed)
    print(f"explained {s['rows']} rows with the {s['method']} method (base value {s['base_value']:.6g})")
    return 0


def _read_predictions(path, y_col, p_col):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{path} has no rows")
    for col in (y_col, p_col):
        if col not in rows[0]:
            raise DataError(f"{path} has no column {col!r}")
    try:
        y = np.array([int(float(r[y_col])) for r in rows])
        p = np.array([float(r[p_col]) for r in rows])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return y, p


def cmd_metrics(args) -> int:
    y, p = _read_predictions(args.predictions, args.y_column, args.p_column)
    rep = metric_report(y, p, args.threshold)
    doc = {**rep.as_dict(), "tp": rep.counts.tp, "tn": rep.counts.tn, "fp": rep.counts.fp, "fn": rep.counts.fn,
           "threshold": args.threshold, "undefined": list(rep.undefined)}
    print(json.dumps(doc, indent=2))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_metric_rows([("predictions", rep)], out / "metrics_report.csv")
        if "auc" not in rep.undefined:
            with open(out / "roc_points.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["fpr", "tpr"])
                for a, b in roc_points(y, p):
                    w.writerow([repr(a), repr(b)])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stackshap", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full pipeline on the pooled sample")
    _add_run_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("per-country", help="one pipeline per country plus the top-10 frequency table")
    _add_run_args(p)
    p.add_argument("--research-grid", action="store_true", help="re-run the grid search inside each country")
    p.set_defaults(func=cmd_per_country)

    p = sub.add_parser("synth", help="write a synthetic extract and its schema")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--schema-out", help="schema JSON path [next to the CSV]")
    p.add_argument("--spec", help="generator spec (JSON); overrides the flags below")
    p.add_argument("--n-rows", type=int, default=2000, help="rows [2000]")
    p.add_argument("--n-features", type=int, default=12, help="features [12]")
    p.add_argument("--n-countries", type=int, default=2, help="countries, assigned round-robin [2]")
    p.add_argument("--dominant-effect", type=float, default=5.0, help="log-odds effect of feature f00 [5]")
    p.add_argument("--noise", type=float, default=0.0, help="label flip probability [0]")
    p.add_argument("--missing-rate", type=float, default=0.0, help="share of cells blanked as NA [0]")
    p.add_argument("--seed", type=int, default=0, help="generator seed [0]")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("explain", help="explain a saved model.json on new rows")
    p.add_argument("--model", required=True, help="model.json written by run")
    p.add_argument("--data", required=True, help="CSV in the model's schema")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--method", choices=("auto", "exact", "sampled", "linear"), help="override the saved method")
    p.add_argument("--shap-output", choices=("probability", "log_odds"), help="override the saved output scale")
    p.add_argument("--n-permutations", type=int, help="orderings for the sampled method")
    p.add_argument("--seed", type=int, help="sampling seed")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("metrics", help="score a predictions file (columns y and p)")
    p.add_argument("--predictions", required=True, help="CSV with label and probability columns")
    p.add_argument("--y-column", default="y", help="label column [y]")
    p.add_argument("--p-column", default="p", help="probability column [p]")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD, help="classification threshold [0.5]")
    p.add_argument("--out", help="directory for metrics_report.csv and roc_points.csv")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StackShapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
