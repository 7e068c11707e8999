import json

import numpy as np
import pytest

from msvar.cli import main
from msvar.core import ModelParams, SeriesData


@pytest.fixture
def series_file(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["simulate", "--setting", "1", "--d", "6", "--t", "150", "--seed", "2",
                 "--out", str(out), "--params-out", str(tmp_path / "p.json")]) == 0
    return out


def test_simulate_outputs(series_file, tmp_path):
    s = SeriesData.from_csv(series_file)
    assert s.y.shape == (151, 6) and s.z.shape == (150,)
    p = ModelParams.from_json(tmp_path / "p.json")
    assert p.k == 2 and p.d == 6


def test_fit_writes_json_and_weights(series_file, tmp_path):
    out, w = tmp_path / "fit.json", tmp_path / "w.csv"
    code = main(["fit", "--data", str(series_file), "--inits", "2", "--s", "fixed:4", "--tuning", "fixed:0.05",
                 "--emt-threshold", "0.5", "--out", str(out), "--dump-weights", str(w)])
    assert code == 0
    obj = json.loads(out.read_text())
    assert {"coeffs", "trans", "sigma2", "hbic", "trace", "inits"} <= set(obj)
    assert all(rec["s"] == 4 and rec["lam"] == 0.05 for rec in obj["trace"])
    lines = w.read_text().splitlines()
    assert lines[0] == "t,j,m" and len(lines) == 1 + 150 * 2


def test_diagnose_verbs(tmp_path, series_file):
    assert main(["diagnose", "xi", "--params", str(tmp_path / "p.json")]) == 0
    assert main(["diagnose", "bound", "--reps", "3", "--out", str(tmp_path / "b.csv")]) == 0
    assert main(["diagnose", "isnr", "--mu-grid", "0.5:0.7:0.1", "--samples", "2000", "--burn-in", "100",
                 "--out", str(tmp_path / "i.csv")]) == 0
    assert len((tmp_path / "i.csv").read_text().splitlines()) == 4


def test_exit_codes(tmp_path, capsys):
    assert main(["fit", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "f.json")]) == 2
    with pytest.raises(SystemExit) as info:
        main(["fit", "--s", "bogus", "--data", "x", "--out", "y"])
    assert info.value.code == 2
    (tmp_path / "short.csv").write_text("t,y1\n" + "".join(f"{t},{float(t)}\n" for t in range(5)))
    assert main(["fit", "--data", str(tmp_path / "short.csv"), "--out", str(tmp_path / "f.json")]) == 2
    assert main(["experiment", "summarize", str(tmp_path / "short.csv")]) == 2


def test_experiment_run_and_summarize(tmp_path):
    spec = {"setting": {"kind": 1, "d": 3}, "t_values": [60], "n_reps": 1, "run_em": False,
            "out_dir": str(tmp_path / "run"), "master_seed": 1}
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    assert main(["experiment", "run", "--spec", str(tmp_path / "spec.json"), "--threads", "1"]) == 0
    assert main(["experiment", "summarize", str(tmp_path / "run" / "results.csv")]) == 0
    bad = dict(spec, em={"n_inits": 1, "min_regime_share": 0.6}, run_em=True, run_oracle=False)
    (tmp_path / "bad.json").write_text(json.dumps(bad))
    assert main(["experiment", "run", "--spec", str(tmp_path / "bad.json"), "--threads", "1"]) == 3
