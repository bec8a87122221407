import csv

import numpy as np
import pandas as pd
import pytest

from octquant.cli import main


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    d = tmp_path_factory.mktemp("demo")
    assert main(["demo", str(d), "-n", "4"]) == 0
    return d


def test_demo_writes_corpus(demo):
    names = sorted(p.name for p in demo.iterdir())
    assert "scan_00.vol" in names and "scan_00_masks" in names and "scan_01" in names


def test_analyze(demo, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["analyze", str(demo), "-o", str(out), "--workers", "2"]) == 0
    msg = capsys.readouterr().out
    assert "4 file(s) analysed, 1 failed" in msg
    with (out / "measurements.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4


def test_analyze_without_slo(demo, tmp_path):
    out = tmp_path / "out"
    assert main(["analyze", str(demo / "scan_00.vol"), "-o", str(out), "--no-slo"]) == 0
    header = (out / "measurements.csv").read_text().splitlines()[0]
    assert "artery_whole_vessel_density" not in header


def test_config_error_exit_code(demo, tmp_path, capsys):
    assert main(["analyze", str(demo), "-o", str(tmp_path), "--slo-threshold", "1.5"]) == 2
    assert "error:" in capsys.readouterr().err


def test_empty_directory_exit_code(tmp_path):
    assert main(["analyze", str(tmp_path), "-o", str(tmp_path / "out")]) == 2


def test_reingest(demo, tmp_path, capsys):
    out = tmp_path / "out"
    main(["analyze", str(demo), "-o", str(out)])
    assert main(["reingest", str(demo / "scan_00.vol"), "-o", str(out)]) == 0
    assert "scan_00.vol: updated" in capsys.readouterr().out
    assert "re-ingested" in (out / "process_log.txt").read_text()


def _long_table(path):
    rng = np.random.default_rng(3)
    rows = []
    for eye in range(6):
        base = rng.normal(300, 25)
        for t in range(2):
            rows.append({"id": f"e{eye}", "timepoint": t, "feature": "ILM_BM_central_thickness",
                         "value": base + rng.normal(0, 2)})
    pd.DataFrame(rows).to_csv(path, index=False)


def test_stats_long_table(tmp_path):
    table, out = tmp_path / "long.csv", tmp_path / "rep.csv"
    _long_table(table)
    assert main(["stats", str(table), "-o", str(out)]) == 0
    res = pd.read_csv(out)
    assert res.loc[0, "feature"] == "ILM_BM_central_thickness"
    assert res.loc[0, "n_pairs"] == 6
    assert res.loc[0, "icc31"] > 0.9


def test_stats_wide_table(tmp_path):
    table, out = tmp_path / "wide.csv", tmp_path / "rep.csv"
    pd.DataFrame({"eye_id": ["a", "a", "b", "b", "c", "c"], "visit": [1, 2, 1, 2, 1, 2],
                  "x": [1.0, 1.1, 2.0, 2.2, 3.0, 2.9]}).to_csv(table, index=False)
    assert main(["stats", str(table), "--id-column", "eye_id", "--time-column", "visit", "-o", str(out)]) == 0
    assert pd.read_csv(out).loc[0, "n_pairs"] == 3


def test_stats_missing_column(tmp_path):
    table = tmp_path / "t.csv"
    pd.DataFrame({"a": [1]}).to_csv(table, index=False)
    assert main(["stats", str(table), "-o", str(tmp_path / "o.csv")]) == 2
