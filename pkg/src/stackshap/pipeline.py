"""End-to-end analysis: data preparation, grid search, stacking, explanation and reporting."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .dataset import (Dataset, FeatureSchema, build_outcome, drop_missing, group_difference_table, load_csv,
                      stratified_kfold, train_test_split, write_group_difference_csv)
from .errors import ConfigError, DataError, StackShapError
from .learners import LearnerConfig
from .metrics import metric_report, roc_points, write_metric_rows
from .model_selection import GRIDS, run_grid, thread_count, write_grid_report
from .shap import (DEFAULT_PERMUTATIONS, EXACT_LIMIT, explain_dataset, global_importance, interaction_correlations,
                   local_extremes, read_shap_global, top10_frequency, write_beeswarm, write_heatmap,
                   write_interactions, write_shap_global, write_shap_local, write_top10_frequency)
from .stacking import PRUNE_EPS, StackedModel, fit_stacked, write_weight_history

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
FAILED_MARKER = "FAILED"
# Keys that legitimately differ between otherwise identical runs.
VOLATILE_MANIFEST_KEYS = ("timings", "output_dir", "created")
CORE_OUTPUTS = ("grid_report.csv", "stacking_weights.csv", "shap_global.csv", "shap_local.json", "beeswarm.csv",
                "shap_heatmap.csv", "interactions.csv", "metrics_report.csv", "roc_points.csv", "model.json",
                "manifest.json")


@dataclass
class RunConfig:
    data: str
    schema: str
    level_pos: int = 0
    level_neg: int = 1
    group: str = "all"
    k: int = 5
    seed: int = 0
    test_fraction: float = 0.2
    undersample: bool = False
    shap_method: str = "auto"
    shap_output: str = "probability"
    background_size: int = 100
    n_permutations: int = DEFAULT_PERMUTATIONS
    explain_rows: Optional[int] = None
    grid: str = "full"
    threshold: float = 0.5
    countries: Optional[list] = None
    research_grid: bool = False
    svg: bool = False

    def validate(self) -> None:
        for p in (self.data, self.schema):
            if not Path(p).is_file():
                raise ConfigError(f"file not found: {p}")
        if self.k < 2:
            raise ConfigError("k must be at least 2")
        if self.group not in ("all", "student_family", "school"):
            raise ConfigError(f"unknown covariate group {self.group!r}")
        if self.grid not in GRIDS:
            raise ConfigError(f"unknown grid {self.grid!r}; choose from {sorted(GRIDS)}")
        if self.shap_method not in ("auto", "exact", "sampled", "linear"):
            raise ConfigError(f"unknown shap method {self.shap_method!r}")
        if self.background_size < 1:
            raise ConfigError("background size must be positive")
        if self.explain_rows is not None and self.explain_rows < 2:
            raise ConfigError("explain_rows must be at least 2")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie strictly between 0 and 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown run settings: {sorted(unknown)}")
        return cls(**doc)


class StageTimer:
    def __init__(self):
        self.timings: dict[str, float] = {}

    @contextmanager
    def __call__(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    import numba
    import scipy

    return {"stackshap": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def base_manifest(cfg: RunConfig, out: Path) -> dict:
    return {
        "manifest_version": MANIFEST_VERSION,
        "config": cfg.to_dict(),
        "inputs": {"data_sha256": _sha256(cfg.data), "schema_sha256": _sha256(cfg.schema)},
        "decisions": {
            "threshold": cfg.threshold,
            "prune_eps": PRUNE_EPS,
            "stacking_solver": "active-set simplex least squares",
            "logit_gradient_tol": 1e-8,
            "lasso_tol": 1e-9,
            "lasso_selection": "mean per-fold AUC",
            "rf_probability": "mean leaf class fraction",
            "gb_max_depth": 3,
            "nn_optimizer": "mini-batch gradient descent, batch 64, patience 10, 10% validation slice",
            "undersample": cfg.undersample,
            "shap_value_function": "interventional",
            "shap_exact_limit": EXACT_LIMIT,
            "background_seed": cfg.seed,
            "explain_seed": cfg.seed,
            "grid": cfg.grid,
        },
        "versions": _versions(),
        "output_dir": str(out),
        "timings": {},
        "status": "running",
    }


def load_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("manifest_version") != MANIFEST_VERSION:
        raise ConfigError(f"unsupported manifest version {doc.get('manifest_version')!r}")
    return doc


def _write_json(doc, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=False)
        fh.write("\n")


def prepare_dataset(cfg: RunConfig, timer: StageTimer, out: Path):
    with timer("load"):
        schema = FeatureSchema.load(cfg.schema)
        raw = load_csv(cfg.data, schema)
        if cfg.group != "all":
            raw = raw.for_group(cfg.group)
        clean, report = drop_missing(raw)
        report.write_csv(out / "dropped_rows.csv")
        ds = build_outcome(clean, cfg.level_pos, cfg.level_neg)
        if cfg.countries:
            keep = np.isin(ds.country, np.asarray(cfg.countries, dtype=object))
            if not keep.any():
                raise DataError(f"country filter {cfg.countries} matches no rows")
            ds = ds.take(keep)
        ds.require_both_classes("outcome construction")
    log.info("prepared %d rows (dropped %d incomplete, positive rate %.3f)", ds.n_rows, report.n_dropped,
             ds.positive_rate)
    return ds, report


def _background(train: Dataset, size: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = min(size, train.n_rows)
    idx = np.sort(rng.choice(train.n_rows, size=n, replace=False))
    return np.array(train.X[idx])


def _explain_subset(test: Dataset, n: Optional[int], seed: int) -> np.ndarray:
    if n is None or n >= test.n_rows:
        return np.arange(test.n_rows)
    rng = np.random.default_rng(seed + 1)
    return np.sort(rng.choice(test.n_rows, size=n, replace=False))


def analyze(ds: Dataset, cfg: RunConfig, out: Path, timer: StageTimer, winners=None) -> dict:
    """Split, search, stack, explain and write every report for one sample."""
    out.mkdir(parents=True, exist_ok=True)
    summary: dict = {}
    with timer("split"):
        train, test = train_test_split(ds, cfg.test_fraction, cfg.seed)
        folds = stratified_kfold(train, cfg.k, cfg.seed)
        write_group_difference_csv(group_difference_table(ds), out / "group_differences.csv",
                                   *ds.class_counts()[::-1])
    summary["n_rows"] = ds.n_rows
    summary["n_train"] = train.n_rows
    summary["n_test"] = test.n_rows
    summary["positive_rate"] = ds.positive_rate

    with timer("grid"):
        if winners is None:
            grid = run_grid(GRIDS[cfg.grid](cfg.seed), train, folds, cfg.threshold, cfg.undersample)
            write_grid_report(grid, out / "grid_report.csv")
            selected, oof = grid.winner_list(), grid.oof
        else:
            selected, oof = list(winners), None
    summary["selected"] = [c.to_dict() for c in selected]

    with timer("stack"):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            stack = fit_stacked(train, folds, selected, oof, cfg.threshold, cfg.undersample)
        summary["warnings"] = sorted({str(w.message) for w in caught})
        write_weight_history(stack, out / "stacking_weights.csv")
        p_test = stack.predict_proba(test.X)
        rows = [("stacked_cv_oof", stack.history[-1]["stack"], "cv_oof"),
                ("stacked_test", metric_report(test.y, p_test, cfg.threshold), "test")]
        for m in stack.history[-1]["members"]:
            rows.append((m["config"].family, m["report"], "cv_oof"))
        write_metric_rows(rows, out / "metrics_report.csv", extra_columns=("split",))
        with open(out / "roc_points.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["split", "fpr", "tpr"])
            for fpr, tpr in roc_points(test.y, p_test):
                w.writerow(["test", repr(fpr), repr(tpr)])
        with open(out / "test_predictions.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row_index", "country", "y", "p"])
            for rid, c, yy, pp in zip(test.row_id, test.country, test.y, p_test):
                w.writerow([int(rid), c, int(yy), repr(float(pp))])

    with timer("explain"):
        bg = _background(train, cfg.background_size, cfg.seed)
        sel = _explain_subset(test, cfg.explain_rows, cfg.seed)
        Xe = np.array(test.X[sel])
        e = explain_dataset(stack, Xe, bg, cfg.shap_method, cfg.shap_output, cfg.n_permutations, cfg.seed,
                            feature_names=train.feature_names, row_ids=test.row_id[sel])
        gi = global_importance(e, train.schema.groups)
        write_shap_global(gi, out / "shap_global.csv")
        write_shap_local(local_extremes(e, Xe), e, out / "shap_local.json")
        write_beeswarm(e, Xe, out / "beeswarm.csv")
        write_heatmap(e, out / "shap_heatmap.csv")
        stu = [s.name for s in train.schema if s.group == "student_family"]
        sch = [s.name for s in train.schema if s.group == "school"]
        a, b = (stu, sch) if stu and sch else (stu or sch, stu or sch)
        write_interactions(interaction_correlations(e.subset(a), e.subset(b)), out / "interactions.csv")
    summary["shap"] = {"method": e.method, "output": e.output, "surrogate": e.surrogate,
                       "background_rows": int(len(bg)), "explained_rows": int(len(sel))}

    doc = {"stack": stack.to_dict(), "schema": train.schema.to_dict(), "background": bg.tolist(),
           "shap": {"method": cfg.shap_method, "output": cfg.shap_output, "n_permutations": cfg.n_permutations,
                    "seed": cfg.seed}}
    _write_json(doc, out / "model.json")
    if cfg.svg:
        write_roc_svg(roc_points(test.y, p_test), out / "roc.svg")
        write_beeswarm_svg(e, Xe, out / "beeswarm.svg")
    return summary


def _fail(out: Path, manifest: dict, timer: StageTimer, exc: BaseException) -> None:
    (out / FAILED_MARKER).write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8")
    manifest["status"] = "failed"
    manifest["error"] = {"type": type(exc).__name__, "message": str(exc)}
    manifest["timings"] = timer.timings
    _write_json(manifest, out / "manifest.json")


def _start(cfg: RunConfig, out_dir) -> tuple[Path, dict, StageTimer]:
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / FAILED_MARKER
    if marker.exists():
        marker.unlink()
    return out, base_manifest(cfg, out), StageTimer()


def run_pipeline(cfg: RunConfig, out_dir) -> dict:
    """Run every stage for the pooled sample and write the artifacts plus ``manifest.json``."""
    out, manifest, timer = _start(cfg, out_dir)
    try:
        ds, report = prepare_dataset(cfg, timer, out)
        manifest["dropped"] = {"n_before": report.n_before, "n_dropped": report.n_dropped,
                               "drop_rate": report.drop_rate}
        manifest["summary"] = analyze(ds, cfg, out, timer)
    except BaseException as exc:
        _fail(out, manifest, timer, exc)
        raise
    manifest["status"] = "ok"
    manifest["timings"] = timer.timings
    _write_json(manifest, out / "manifest.json")
    return manifest


def run_per_country(cfg: RunConfig, out_dir) -> dict:
    """One analysis per country plus the top-10 frequency table across countries.

    Unless ``research_grid`` is set, the pooled grid winners are reused for
    every country.  Countries lacking either class (or too small to
    stratify) are skipped and listed in the manifest.
    """
    out, manifest, timer = _start(cfg, out_dir)
    try:
        ds, report = prepare_dataset(cfg, timer, out)
        manifest["dropped"] = {"n_before": report.n_before, "n_dropped": report.n_dropped,
                               "drop_rate": report.drop_rate}
        winners = None
        if not cfg.research_grid:
            with timer("pooled_grid"):
                train, _ = train_test_split(ds, cfg.test_fraction, cfg.seed)
                folds = stratified_kfold(train, cfg.k, cfg.seed)
                grid = run_grid(GRIDS[cfg.grid](cfg.seed), train, folds, cfg.threshold, cfg.undersample)
                write_grid_report(grid, out / "grid_report.csv")
                winners = grid.winner_list()
            manifest["pooled_winners"] = [c.to_dict() for c in winners]
        countries = sorted(set(ds.country.tolist()))

        def one(country):
            sub = ds.take(ds.country == country)
            try:
                sub.require_both_classes(f"country {country}")
                return country, analyze(sub, cfg, out / f"country_{country}", StageTimer(), winners), None
            except DataError as exc:
                log.warning("skipping country %s: %s", country, exc)
                return country, None, str(exc)

        with timer("countries"):
            n_jobs = min(thread_count(), len(countries))
            if n_jobs > 1:
                with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                    results = list(pool.map(one, countries))
            else:
                results = [one(c) for c in countries]
        done = [(c, s) for c, s, err in results if s is not None]
        manifest["countries"] = {c: s for c, s in done}
        manifest["skipped_countries"] = {c: err for c, s, err in results if s is None}
        if not done:
            raise DataError("no country had both outcome classes")
        per = [read_shap_global(out / f"country_{c}" / "shap_global.csv") for c, _ in done]
        groups = {n: g for gi in per for n, g in zip(gi.feature_names, gi.groups)}
        write_top10_frequency(top10_frequency(per), out / "top10_frequency.csv", groups)
    except BaseException as exc:
        _fail(out, manifest, timer, exc)
        raise
    manifest["status"] = "ok"
    manifest["timings"] = timer.timings
    _write_json(manifest, out / "manifest.json")
    return manifest


def explain_saved(model_path, data_path, out_dir, method: Optional[str] = None, output: Optional[str] = None,
                  n_permutations: Optional[int] = None, seed: Optional[int] = None) -> dict:
    """Explain a saved ``model.json`` on the rows of a CSV in the same schema."""
    with open(model_path, encoding="utf-8") as fh:
        doc = json.load(fh)
    schema = FeatureSchema.from_dict(doc["schema"])
    stack = StackedModel.from_dict(doc["stack"])
    d = load_csv(data_path, schema)
    d, _ = drop_missing(d)
    settings = doc.get("shap", {})
    e = explain_dataset(stack, d.X, np.array(doc["background"]), method or settings.get("method", "auto"),
                        output or settings.get("output", "probability"),
                        n_permutations or settings.get("n_permutations", DEFAULT_PERMUTATIONS),
                        settings.get("seed", 0) if seed is None else seed,
                        feature_names=schema.names, row_ids=d.row_id)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    X = np.array(d.X)
    write_shap_global(global_importance(e, schema.groups), out / "shap_global.csv")
    if e.n_rows >= 2:
        write_shap_local(local_extremes(e, X), e, out / "shap_local.json")
    write_beeswarm(e, X, out / "beeswarm.csv")
    write_heatmap(e, out / "shap_heatmap.csv")
    return {"rows": e.n_rows, "method": e.method, "base_value": e.base_value}


def comparable_manifest(doc: dict) -> dict:
    return {k: v for k, v in doc.items() if k not in VOLATILE_MANIFEST_KEYS}


def _svg(width, height, body) -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n{body}</svg>\n')


def write_roc_svg(points, path, size: int = 320) -> None:
    pad = 30
    s = size - 2 * pad
    xy = " ".join(f"{pad + fx * s:.2f},{pad + (1 - ty) * s:.2f}" for fx, ty in points)
    body = (f'<rect x="{pad}" y="{pad}" width="{s}" height="{s}" fill="none" stroke="black"/>\n'
            f'<line x1="{pad}" y1="{pad + s}" x2="{pad + s}" y2="{pad}" stroke="grey" stroke-dasharray="4"/>\n'
            f'<polyline points="{xy}" fill="none" stroke="blue"/>\n')
    Path(path).write_text(_svg(size, size, body), encoding="utf-8")


def write_beeswarm_svg(e, X, path, top: int = 20) -> None:
    gi = global_importance(e)
    names = gi.top(top)
    X = np.asarray(X, dtype=np.float64)
    lim = float(np.max(np.abs(e.phi))) or 1.0
    row_h, left, width = 18, 160, 400
    parts = [f'<line x1="{left + width / 2}" y1="0" x2="{left + width / 2}" y2="{row_h * len(names)}" stroke="grey"/>']
    rng = np.random.default_rng(0)
    for r, name in enumerate(names):
        j = e.feature_names.index(name)
        col = X[:, j]
        span = np.ptp(col) or 1.0
        parts.append(f'<text x="4" y="{r * row_h + 13}" font-size="11">{name}</text>')
        for v, phi in zip(col, e.phi[:, j]):
            t = (v - col.min()) / span
            cx = left + width / 2 + phi / lim * width / 2
            cy = r * row_h + 9 + rng.uniform(-5, 5)
            parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="2" '
                         f'fill="rgb({int(255 * t)},0,{int(255 * (1 - t))})"/>')
    Path(path).write_text(_svg(left + width + 10, row_h * len(names) + 4, "\n".join(parts) + "\n"), encoding="utf-8")
