import csv
import json

import pytest

from hmsim import cli, load_report
from hmsim.stats import SCHEMA_VERSION


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_run_writes_report_and_timeseries(tmp_path, capsys):
    out = tmp_path / "run1"
    rc = cli.main([
        "run", "--set", "workload.length=400", "--set", "sim.seed=3",
        "-o", str(out),
    ])
    assert rc == 0
    report = load_report(str(out / "report.json"))
    assert report["stats"]["requests"]["injected"] == 400
    rows = read_csv(out / "timeseries.csv")
    assert rows[0][:3] == ["window_start", "channel", "columns"]
    assert "runtime_cycles" in capsys.readouterr().out


def test_run_rejects_malformed_override(tmp_path, capsys):
    rc = cli.main(["run", "--set", "bogus.key=1", "-o", str(tmp_path)])
    assert rc == 2
    assert "bogus" in capsys.readouterr().err


def test_run_reports_missing_config(tmp_path, capsys):
    rc = cli.main(["run", "-c", str(tmp_path / "absent.json")])
    assert rc == 2
    assert "absent.json" in capsys.readouterr().err


def test_config_dir_fallback(tmp_path, monkeypatch):
    cfgdir = tmp_path / "configs"
    cfgdir.mkdir()
    (cfgdir / "tiny.json").write_text(json.dumps({"workload": {"length": 50}}))
    monkeypatch.setenv(cli.CONFIG_DIR_ENV, str(cfgdir))
    out = tmp_path / "out"
    rc = cli.main(["run", "-c", "tiny.json", "-o", str(out)])
    assert rc == 0
    loaded = load_report(str(out / "report.json"))
    assert loaded["stats"]["requests"]["injected"] == 50


def test_sweep_grid_and_csv(tmp_path):
    out = tmp_path / "sw"
    rc = cli.main([
        "sweep", "--set", "workload.length=200",
        "--axis", "l2.ctc_l2_ways=1,2",
        "--axis", "cache.metadata_layout=amil,tad",
        "-j", "1", "-o", str(out),
    ])
    assert rc == 0
    points = sorted(out.glob("point_*.json"))
    assert len(points) == 4
    rows = read_csv(out / "sweep.csv")
    assert rows[0][:3] == ["point", "l2.ctc_l2_ways", "cache.metadata_layout"]
    assert len(rows) == 5
    grid = {(r[1], r[2]) for r in rows[1:]}
    assert grid == {("1", "amil"), ("1", "tad"), ("2", "amil"), ("2", "tad")}
    first = load_report(str(points[0]))
    assert first["config"]["l2"]["ctc_l2_ways"] == 1


def test_sweep_rejects_bad_axis(tmp_path, capsys):
    rc = cli.main(["sweep", "--axis", "nonsense", "-o", str(tmp_path)])
    assert rc == 2
    assert "axis" in capsys.readouterr().err.lower()


def test_sweep_validates_points_before_running(tmp_path, capsys):
    rc = cli.main([
        "sweep", "--axis", "policy.n_levels=2,9", "-o", str(tmp_path),
        "--set", "workload.length=100",
    ])
    assert rc == 2
    assert "n_levels" in capsys.readouterr().err
    assert not list(tmp_path.glob("point_*.json"))


def test_report_single_and_delta(tmp_path, capsys):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert cli.main(["run", "--set", "workload.length=300", "-o", str(out_a)]) == 0
    assert cli.main([
        "run", "--set", "workload.length=300",
        "--set", "policy.kind=always_bypass", "-o", str(out_b),
    ]) == 0
    capsys.readouterr()

    assert cli.main(["report", str(out_a / "report.json")]) == 0
    single = capsys.readouterr().out
    assert "runtime_cycles" in single and "traffic.probe" in single

    assert cli.main([
        "report", str(out_a / "report.json"), str(out_b / "report.json"),
    ]) == 0
    pair = capsys.readouterr().out
    assert "delta" in pair


def test_report_rejects_wrong_schema(tmp_path, capsys):
    out = tmp_path / "r"
    assert cli.main(["run", "--set", "workload.length=100", "-o", str(out)]) == 0
    data = json.loads((out / "report.json").read_text())
    data["schema_version"] = 99
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(data))
    rc = cli.main(["report", str(bad)])
    assert rc == 2
    err = capsys.readouterr().err
    assert "99" in err and str(SCHEMA_VERSION) in err


def test_gen_and_validate_trace(tmp_path, capsys):
    path = tmp_path / "t.trace"
    rc = cli.main([
        "gen-trace", "--pattern", "strided", "--length", "500",
        "--stride", "512", "-o", str(path),
    ])
    assert rc == 0
    assert cli.main(["validate-trace", str(path)]) == 0
    assert "500" in capsys.readouterr().out


def test_validate_trace_reports_bad_line(tmp_path, capsys):
    path = tmp_path / "bad.trace"
    path.write_text("0 R 0x1000 32\n0 X 0x40 32\n")
    rc = cli.main(["validate-trace", str(path)])
    assert rc == 2
    assert "bad.trace:2" in capsys.readouterr().err
