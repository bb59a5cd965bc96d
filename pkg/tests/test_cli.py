import csv
import json

import numpy as np
import pytest

from blockdid.cli import main


def run_cli(*args):
    return main(list(args))


@pytest.fixture(scope="module")
def panel_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "panel.csv"
    assert (
        run_cli(
            "simulate", "--example", "toy", "--seed", "3", "--sizes", "5,5,6",
            "--out", str(path),
        )
        == 0
    )
    return path


def test_simulate_writes_truth_sidecar(panel_csv):
    sidecar = json.loads((panel_csv.parent / "panel.csv.json").read_text())
    assert sidecar["true_att"] == 0.0
    assert "config_hash" in sidecar and "version" in sidecar


def test_validate_ok(panel_csv, capsys):
    assert run_cli("validate", "--input", str(panel_csv)) == 0
    assert capsys.readouterr().out.strip() == "ok"


def test_validate_all_treated_exits_with_code(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    rows = ["unit,time,outcome,cohort"]
    for u, g in (("a", "2"), ("b", "3")):
        for t in (1, 2, 3):
            rows.append(f"{u},{t},1.0,{g}")
    bad.write_text("\n".join(rows) + "\n")
    assert run_cli("validate", "--input", str(bad)) == 1
    err = json.loads(capsys.readouterr().out)
    assert err["error"]["code"] == "NO_NEVER_TREATED"


def test_estimate_csv_schema(panel_csv, tmp_path):
    out = tmp_path / "coeffs.csv"
    assert run_cli(
        "estimate", "--input", str(panel_csv), "--estimator", "csnyt",
        "--out", str(out),
    ) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    header = lines[1].split(",")
    assert header == ["estimator", "cohort", "rel_period", "calendar_time", "kind", "value"]
    rows = list(csv.DictReader(lines[1:]))
    assert len(rows) == 14  # sixteen cells minus two reference cells
    kinds = {r["kind"] for r in rows}
    assert kinds == {"pre", "post"}


def test_vcov_and_biasmap_outputs(panel_csv, tmp_path):
    vout = tmp_path / "vcov.csv"
    assert run_cli(
        "vcov", "--input", str(panel_csv), "--bootstrap", "40", "--seed", "2",
        "--out", str(vout),
    ) == 0
    lines = vout.read_text().splitlines()
    labels = lines[1].split(",")
    assert len(labels) == 16
    mat = np.array([[float(x) for x in row.split(",")] for row in lines[2:]])
    assert mat.shape == (16, 16)
    assert np.max(np.abs(mat - mat.T)) < 1e-12

    wout = tmp_path / "w.csv"
    assert run_cli(
        "biasmap", "export", "--input", str(panel_csv), "--estimator", "csnyt",
        "--out", str(wout),
    ) == 0
    lines = wout.read_text().splitlines()
    assert lines[1].split(",")[0] == "cell"
    body = [row.split(",") for row in lines[2:]]
    assert len(body) == 16
    w = np.array([[float(x) for x in r[1:]] for r in body])
    assert np.all(np.diag(w) == 1.0)


def test_sets_sweep_count_and_nesting(panel_csv, tmp_path):
    out = tmp_path / "sets.json"
    assert run_cli(
        "sets", "--input", str(panel_csv), "--family", "rm-cohort",
        "--param", "0:1:0.25", "--alpha", "0.05", "--bootstrap", "40",
        "--seed", "2", "--draws", "2000", "--out", str(out),
    ) == 0
    payload = json.loads(out.read_text())
    records = payload["results"]
    assert len(records) == 5
    assert [r["parameter"] for r in records] == [0.0, 0.25, 0.5, 0.75, 1.0]
    for a, b in zip(records, records[1:]):
        assert b["plugin_bounds"][0] <= a["plugin_bounds"][0] + 1e-9
        assert a["plugin_bounds"][1] <= b["plugin_bounds"][1] + 1e-9
    for r in records:
        for key in ("target", "family", "alpha", "grid", "intervals",
                    "member_count", "runtime_ms", "corrected_point"):
            assert key in r


def test_compare_emits_both_frameworks(panel_csv, tmp_path):
    out = tmp_path / "cmp.csv"
    assert run_cli(
        "compare", "--input", str(panel_csv), "--family", "sd",
        "--param", "0:0.5:0.5", "--bootstrap", "40", "--seed", "2",
        "--draws", "2000", "--out", str(out),
    ) == 0
    lines = out.read_text().splitlines()
    rows = list(csv.DictReader(lines[1:]))
    assert len(rows) == 8  # 2 params x 2 frameworks x 2 bound kinds
    assert {r["framework"] for r in rows} == {"cohort", "aggregated"}
    assert {r["bound"] for r in rows} == {"plugin", "confidence"}


def test_byperiod_output(panel_csv, tmp_path):
    out = tmp_path / "bp.json"
    assert run_cli(
        "byperiod", "--input", str(panel_csv), "--family", "sd", "--param", "0",
        "--bootstrap", "40", "--seed", "2", "--draws", "2000",
        "--grid=-6:6:81", "--out", str(out),
    ) == 0
    payload = json.loads(out.read_text())
    assert sorted(payload["periods"], key=int) == ["1", "2", "3", "4"]
    for rec in payload["periods"].values():
        assert "corrected_point" in rec and "corrected_se" in rec


def test_sets_period_target(panel_csv, tmp_path):
    out = tmp_path / "period.json"
    assert run_cli(
        "sets", "--input", str(panel_csv), "--family", "sd", "--param", "0.1",
        "--bootstrap", "40", "--seed", "2", "--draws", "2000",
        "--target", "period:2", "--framework", "both", "--out", str(out),
    ) == 0
    payload = json.loads(out.read_text())
    assert {r["framework"] for r in payload["results"]} == {"cohort", "aggregated"}
    assert all(r["target"] == "period:2" for r in payload["results"])


def test_byperiod_aggregated_framework(panel_csv, tmp_path):
    out = tmp_path / "bp_agg.json"
    assert run_cli(
        "byperiod", "--input", str(panel_csv), "--family", "sd", "--param", "0",
        "--bootstrap", "40", "--seed", "2", "--draws", "2000",
        "--framework", "aggregated", "--grid=-6:6:61", "--out", str(out),
    ) == 0
    payload = json.loads(out.read_text())
    assert payload["framework"] == "aggregated"
    assert sorted(payload["periods"], key=int) == ["1", "2", "3", "4"]


def test_reruns_reproduce_results(panel_csv, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    args = [
        "sets", "--input", str(panel_csv), "--family", "sd", "--param", "0.2",
        "--bootstrap", "30", "--seed", "9", "--draws", "2000",
    ]
    assert run_cli(*args, "--out", str(a)) == 0
    assert run_cli(*args, "--out", str(b)) == 0
    da, db = json.loads(a.read_text()), json.loads(b.read_text())
    for d in (da, db):
        for r in d["results"]:
            r.pop("runtime_ms")  # wall-clock, excluded from reproducibility
    assert da == db
