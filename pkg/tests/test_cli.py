import json
import math
import shutil
import subprocess
import sys

import numpy as np
import pytest

from mhml import gradcheck
from mhml.cli import main
from mhml.heads import mh_grad_logits
from mhml.io import write_predictions_csv

SMALL_SUITE = {
    "data": {"n_classes": 4, "dim": 2, "n_train": 300, "n_val": 100, "n_test": 200},
    "train": {"epochs": 2, "hidden": [8], "batch_size": 64},
    "methods": ["SL1H", "2HML"],
    "n_seeds": 2,
}


def echoed(capsys):
    err = capsys.readouterr().err
    line = next(l for l in err.splitlines() if l.startswith("resolved config: "))
    return json.loads(line[len("resolved config: "):])


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL_SUITE))
    return path


class TestUsage:
    @pytest.mark.parametrize("argv", [[], ["frobnicate"], ["gradcheck", "--bogus"], ["suite", "--jobs", "x"]])
    def test_usage_errors_exit_2(self, argv, capsys):
        assert main(argv) == 2
        assert "usage" in capsys.readouterr().err

    def test_help_exits_0(self, capsys):
        assert main(["--help"]) == 0
        assert "gen-data" in capsys.readouterr().out

    def test_unknown_method(self, tmp_path, capsys):
        assert main(["gen-data", "--out", str(tmp_path / "d.csv"), "--method", "x"]) == 2

    def test_bad_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"nonsense": 1}))
        assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "d.csv")]) == 2

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["gen-data", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "d.csv")]) == 1
        assert "nope.json" in capsys.readouterr().err


class TestPrecedence:
    def test_flag_beats_config_beats_env(self, tmp_path, monkeypatch, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"seed": 11, "train": {"epochs": 3}, "data": {"n_train": 10, "n_val": 5,
                                                                                "n_test": 5}}))
        out = str(tmp_path / "d.csv")
        monkeypatch.setenv("MHML_SEED", "5")
        assert main(["gen-data", "--out", out]) == 0
        assert echoed(capsys)["seed"] == 5
        assert main(["gen-data", "--config", str(cfg), "--out", out]) == 0
        e = echoed(capsys)
        assert e["seed"] == 11 and e["train"]["epochs"] == 3
        assert main(["gen-data", "--config", str(cfg), "--out", out, "--seed", "2", "--k", "5", "--dim", "3"]) == 0
        e = echoed(capsys)
        assert (e["seed"], e["data"]["seed"], e["data"]["n_classes"], e["data"]["dim"]) == (2, 2, 5, 3)
        assert len(e["data"]["priors"]) == 5


class TestGenTrainEval:
    def test_pipeline(self, tmp_path, small_config, capsys):
        data = tmp_path / "d.csv"
        assert main(["gen-data", "--config", str(small_config), "--out", str(data)]) == 0
        assert data.read_text().splitlines()[0] == "f0,f1,label"
        meta = json.loads((tmp_path / "d.csv.splits.json").read_text())
        assert (meta["n_train"], meta["n_val"], meta["n_test"]) == (300, 100, 200)

        ckpt = tmp_path / "m.json"
        assert main(["train", "--config", str(small_config), "--data", str(data), "--method", "2HML",
                     "--out", str(ckpt)]) == 0
        train_report = json.loads((tmp_path / "m.report.json").read_text())
        assert train_report["n_samples"] == 200

        out = tmp_path / "e.json"
        assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data), "--out", str(out)]) == 0
        ev = json.loads(out.read_text())
        assert ev["accuracy"] == train_report["accuracy"] and ev["nll"] == train_report["nll"]
        assert (tmp_path / "e.reliability.csv").read_text().startswith("lo,hi,count,acc,conf")
        assert "ACC" in capsys.readouterr().out

    def test_train_generates_data_when_omitted(self, tmp_path, small_config, capsys):
        assert main(["train", "--config", str(small_config), "--method", "SL1H"]) == 0

    def test_train_single_method_only(self, small_config, capsys):
        assert main(["train", "--config", str(small_config), "--method", "SL1H,LS"]) == 2

    def test_external_csv_without_sidecar(self, tmp_path, small_config, capsys):
        data = tmp_path / "ext.csv"
        rng = np.random.default_rng(0)
        rows = ["f0,f1,label"] + [f"{a:.9g},{b:.9g},{int(a > 0)}" for a, b in rng.normal(size=(100, 2))]
        data.write_text("\n".join(rows) + "\n")
        assert main(["train", "--config", str(small_config), "--data", str(data), "--method", "SL1H",
                     "--k", "2"]) == 0

    def test_eval_hand_built_predictions(self, tmp_path, capsys):
        P = np.array([[0.6, 0.4], [0.7, 0.3], [0.8, 0.2], [0.9, 0.1]])
        preds = tmp_path / "p.csv"
        write_predictions_csv(preds, P, [0, 0, 0, 0])
        out = tmp_path / "r.json"
        assert main(["eval", "--preds", str(preds), "--bins", "2", "--out", str(out), "--no-percent"]) == 0
        r = json.loads(out.read_text())
        assert r["ece"] == pytest.approx(0.25, abs=1e-6)
        assert r["accuracy"] == 1.0
        assert r["nll"] == pytest.approx(-sum(math.log(v) for v in (0.6, 0.7, 0.8, 0.9)) / 4, rel=1e-5)
        assert r["brier"] == pytest.approx((0.32 + 0.18 + 0.08 + 0.02) / 4, rel=1e-5)

    def test_eval_rejects_off_simplex(self, tmp_path, capsys):
        preds = tmp_path / "p.csv"
        preds.write_text("p0,p1,label\n0.9,0.9,0\n")
        assert main(["eval", "--preds", str(preds)]) == 1

    def test_eval_needs_one_source(self, capsys):
        assert main(["eval"]) == 2


class TestGradcheck:
    def test_passes(self, capsys):
        assert main(["gradcheck", "--trials", "100", "--tol", "1e-6"]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 3

    def test_corrupted_gradient_fails(self, monkeypatch, capsys):
        monkeypatch.setattr(gradcheck, "_analytic_grad", lambda o, y, s: 1.05 * mh_grad_logits(o, y, s))
        assert main(["gradcheck", "--trials", "5"]) == 1
        out = capsys.readouterr().out
        assert "FAIL" in out and "coord=" in out


class TestSuiteReport:
    def test_suite_twice_identical_and_report(self, tmp_path, small_config, capsys):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert main(["suite", "--config", str(small_config), "--out", str(a)]) == 0
        assert main(["suite", "--config", str(small_config), "--out", str(b), "--jobs", "2"]) == 0
        assert a.read_bytes() == b.read_bytes()
        table = (tmp_path / "a.txt").read_text()
        capsys.readouterr()
        assert main(["report", str(a)]) == 0
        assert capsys.readouterr().out.strip() == table.strip()

    def test_report_rejects_other_json(self, tmp_path, capsys):
        p = tmp_path / "x.json"
        p.write_text("{}")
        assert main(["report", str(p)]) == 1


@pytest.mark.skipif(shutil.which("mhml") is None, reason="console script not installed")
def test_console_script():
    proc = subprocess.run(["mhml", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode == 2


def test_module_entry():
    proc = subprocess.run([sys.executable, "-m", "mhml.cli", "gradcheck", "--trials", "3"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "property2" in proc.stdout
