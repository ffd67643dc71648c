import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from stackshap.cli import main
from stackshap.dataset import FeatureSchema, load_csv
from stackshap.pipeline import CORE_OUTPUTS, FAILED_MARKER

FAST = ["--grid", "desk", "--k", "3", "--background-size", "10", "--explain-rows", "20"]


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def synth_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(root / "d.csv"), "--n-rows", "500", "--n-features", "6", "--seed", "1"]) == 0
    return root / "d.csv", root / "d.schema.json"


@pytest.fixture(scope="module")
def pooled_run(synth_files, tmp_path_factory):
    data, schema = synth_files
    out = tmp_path_factory.mktemp("run") / "out"
    assert main(["run", "--data", str(data), "--schema", str(schema), "--out", str(out), *FAST]) == 0
    return out


def test_run_writes_every_artifact(pooled_run):
    for name in CORE_OUTPUTS + ("group_differences.csv", "dropped_rows.csv", "test_predictions.csv"):
        assert (pooled_run / name).is_file(), name
    assert not (pooled_run / FAILED_MARKER).exists()
    m = json.loads((pooled_run / "manifest.json").read_text())
    assert m["status"] == "ok"
    assert all(len(m["inputs"][k]) == 64 for k in ("data_sha256", "schema_sha256"))
    assert set(m["timings"]) >= {"load", "grid", "stack", "explain"}


def test_metrics_report_has_test_and_oof_rows(pooled_run):
    rows = read_rows(pooled_run / "metrics_report.csv")
    assert {r["split"] for r in rows} == {"cv_oof", "test"}
    assert rows[0]["model"] == "stacked_cv_oof" and rows[1]["model"] == "stacked_test"


def test_rerun_from_manifest_is_identical(pooled_run, tmp_path):
    again = tmp_path / "again"
    assert main(["run", "--manifest", str(pooled_run / "manifest.json"), "--out", str(again)]) == 0
    for name in CORE_OUTPUTS:
        if name != "manifest.json":
            assert (again / name).read_bytes() == (pooled_run / name).read_bytes(), name


def test_absent_level_fails_with_data_exit_code(synth_files, tmp_path, capsys):
    data, schema = synth_files
    out = tmp_path / "bad"
    code = main(["run", "--data", str(data), "--schema", str(schema), "--out", str(out), "--level-pos", "7", *FAST])
    assert code == 3
    assert "7" in capsys.readouterr().err
    assert (out / FAILED_MARKER).is_file()
    assert json.loads((out / "manifest.json").read_text())["status"] == "failed"


def test_missing_inputs_are_config_errors(tmp_path):
    assert main(["run", "--out", str(tmp_path / "x")]) == 2
    assert main(["run", "--data", str(tmp_path / "nope.csv"), "--schema", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "x")]) == 2


def test_per_country_counts_match_recount(synth_files, tmp_path):
    data, schema = synth_files
    out = tmp_path / "pc"
    assert main(["per-country", "--data", str(data), "--schema", str(schema), "--out", str(out), *FAST]) == 0
    countries = sorted(p.name for p in out.iterdir() if p.name.startswith("country_"))
    assert countries == ["country_C00", "country_C01"]
    counts = {}
    for c in countries:
        for r in read_rows(out / c / "shap_global.csv")[:10]:
            counts[r["feature"]] = counts.get(r["feature"], 0) + 1
    table = {r["feature"]: int(r["count"]) for r in read_rows(out / "top10_frequency.csv")}
    assert table == counts
    m = json.loads((out / "manifest.json").read_text())
    assert m["skipped_countries"] == {} and "pooled_winners" in m


def test_group_filter_restricts_features(synth_files, tmp_path):
    data, schema = synth_files
    names = {}
    for group in ("student_family", "school"):
        out = tmp_path / group
        assert main(["run", "--data", str(data), "--schema", str(schema), "--out", str(out), "--group", group,
                     *FAST]) == 0
        names[group] = {r["feature"] for r in read_rows(out / "shap_global.csv")}
        assert {r["group"] for r in read_rows(out / "shap_global.csv")} == {group}
    assert names["student_family"].isdisjoint(names["school"])
    all_names = set(FeatureSchema.load(schema).names)
    assert names["student_family"] | names["school"] == all_names


def test_explain_saved_model(pooled_run, synth_files, tmp_path, capsys):
    data, schema = synth_files
    out = tmp_path / "ex"
    assert main(["explain", "--model", str(pooled_run / "model.json"), "--data", str(data), "--out", str(out),
                 "--method", "sampled", "--n-permutations", "20"]) == 0
    assert "sampled" in capsys.readouterr().out
    rows = read_rows(out / "shap_heatmap.csv")
    assert len(rows) == load_csv(data, FeatureSchema.load(schema)).n_rows


def test_metrics_command(tmp_path, capsys):
    pred = tmp_path / "p.csv"
    pred.write_text("y,p\n1,0.9\n0,0.2\n1,0.4\n0,0.6\n")
    assert main(["metrics", "--predictions", str(pred), "--out", str(tmp_path / "m")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["ACC"] == 0.5 and doc["AUC"] == 0.75
    assert (doc["tp"], doc["tn"], doc["fp"], doc["fn"]) == (1, 1, 1, 1)
    assert (tmp_path / "m" / "roc_points.csv").is_file()


def test_metrics_command_bad_column(tmp_path):
    pred = tmp_path / "p.csv"
    pred.write_text("label,score\n1,0.9\n")
    assert main(["metrics", "--predictions", str(pred)]) == 3


def test_synth_spec_file(tmp_path):
    spec = {"n_rows": 30, "features": [{"name": "a", "kind": "binary", "effect": 1.0}], "seed": 2}
    (tmp_path / "s.json").write_text(json.dumps(spec))
    assert main(["synth", "--spec", str(tmp_path / "s.json"), "--out", str(tmp_path / "d.csv")]) == 0
    d = load_csv(tmp_path / "d.csv", FeatureSchema.load(tmp_path / "d.schema.json"))
    assert d.n_rows == 30 and set(np.unique(d.X)) <= {0.0, 1.0}


def test_help_lists_subcommands():
    res = subprocess.run([sys.executable, "-m", "stackshap.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("run", "per-country", "synth", "explain", "metrics"):
        assert cmd in res.stdout
