import csv

import numpy as np
import pytest

from metacv.cli import main
from metacv.report import read_points_csv


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_analyze_bcg_latitude(capsys, tmp_path):
    code, out, _ = run(capsys, "analyze", "--data", "bcg", "--moderator", "ablat", "--tau", "dl",
                       "--out", str(tmp_path))
    assert code == 0
    assert "0.260" in out and "-0.029" in out and "tau^2 = 0.063" in out
    rows = {r["x"]: r for r in read_points_csv(tmp_path / "points.csv")}
    assert rows["55"]["cv_b"] == pytest.approx(0.187, abs=5e-4)
    assert {p.name for p in tmp_path.iterdir()} == {"coefficients.csv", "points.csv", "intervals.csv", "aggregates.csv"}


def test_csv_round_trip(capsys, tmp_path, bcg_fit):
    from metacv.measures import cv_measures
    from metacv.model import ModeratorPoint
    from metacv.regression import effect_at

    run(capsys, "analyze", "--data", "bcg", "--moderator", "ablat", "--out", str(tmp_path))
    for r in read_points_csv(tmp_path / "points.csv"):
        est = cv_measures(bcg_fit.tau.tau, effect_at(bcg_fit, ModeratorPoint.of(float(r["x"]))), bcg_fit.tau.var_tau2)
        for key, val in (("cv_b", est.cv_b), ("m1", est.m1), ("beta_x", est.effect.beta_x)):
            assert float(f"{r[key]:.12g}") == float(f"{val:.12g}")


def test_proportion_weights(capsys):
    code, out, _ = run(capsys, "analyze", "--data", "bcg", "--moderator", "allocation", "--weights", "proportion")
    assert code == 0
    assert "weights: 0.538, 0.154, 0.308" in out
    assert "geometric mean requires equal weights" in out


def test_validation_exit_codes(capsys, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("yi,vi,x\n0.1,0.01,1\n0.2,0,2\n0.3,0.02,3\n")
    code, _, err = run(capsys, "analyze", "--data", str(bad), "--moderator", "x")
    assert code == 2 and "row 3" in err
    assert run(capsys, "analyze", "--data", "nope.csv", "--moderator", "x")[0] == 2
    assert run(capsys, "analyze", "--data", "bcg", "--moderator", "ablat", "--methods", "boot")[0] == 2
    assert run(capsys, "analyze", "--data", "haart", "--moderator", "scq")[0] == 2


def test_numerical_exit_code(capsys, tmp_path):
    f = tmp_path / "collinear.csv"
    f.write_text("yi,vi,a,b\n" + "".join(f"{0.1 * i},0.05,{i},{2 * i}\n" for i in range(6)))
    code, _, err = run(capsys, "analyze", "--data", str(f), "--moderator", "a", "--moderator", "b")
    assert code == 3 and "rank" in err


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["analyze", "--data", "bcg"])
    assert exc.value.code == 2


def test_simulate_deterministic(capsys, tmp_path):
    outs = []
    for name in ("a", "b"):
        code, _, _ = run(capsys, "simulate", "bcg_coverage", "--trials", "6", "--seed", "7", "--quiet",
                         "--out", str(tmp_path / name))
        assert code == 0
        outs.append((tmp_path / name / "coverage.csv").read_bytes())
    assert outs[0] == outs[1]
    with open(tmp_path / "a" / "coverage.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6 * 9


def test_simulate_rejects_empty_methods(capsys, tmp_path):
    cfg = tmp_path / "empty.toml"
    cfg.write_text('dataset = "bcg"\nmoderators = ["ablat"]\nmethods = []\n')
    assert run(capsys, "simulate", str(cfg), "--quiet")[0] == 2
    assert run(capsys, "simulate", str(tmp_path / "missing.toml"), "--quiet")[0] == 2


def test_plot_outputs(capsys, tmp_path):
    code, _, _ = run(capsys, "plot", "--data", "bcg", "--moderator", "ablat", "--out", str(tmp_path / "a"))
    assert code == 0
    run(capsys, "plot", "--data", "bcg", "--moderator", "ablat", "--out", str(tmp_path / "b"))
    assert (tmp_path / "a" / "plot.svg").read_bytes() == (tmp_path / "b" / "plot.svg").read_bytes()
    with open(tmp_path / "a" / "series.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    by = {}
    for r in rows:
        by.setdefault((r["series"], r["method"]), []).append(r)
    assert all(len(v) == 51 for v in by.values())
    m1 = np.array([[float(r["lower"]), float(r["upper"])] for k, v in by.items() if k[0] == "m1" for r in v])
    assert np.all((m1 >= 0) & (m1 <= 1))
    cv13 = [r for r in by[("cv_b", "PropImp")] if float(r["x"]) == 13.0][0]
    assert float(cv13["upper"]) > 1000


def test_plot_rejects_factor(capsys, tmp_path):
    code, _, err = run(capsys, "plot", "--data", "bcg", "--moderator", "allocation", "--out", str(tmp_path))
    assert code == 2 and "factor" in err


def test_datasets_list(capsys):
    code, out, _ = run(capsys, "datasets", "list")
    assert code == 0 and out.startswith("bcg") and "haart" in out
