import json

import numpy as np
import pytest

from mhml.bench import MethodConfig, SyntheticSpec, gen_gaussian_mixture, train_method
from mhml.io import (
    load_checkpoint,
    read_dataset_csv,
    read_predictions_csv,
    save_checkpoint,
    splits_path,
    write_dataset_csv,
    write_predictions_csv,
)


@pytest.fixture(scope="module")
def ds():
    return gen_gaussian_mixture(SyntheticSpec(n_classes=4, dim=3, n_train=200, n_val=50, n_test=80, seed=1))


class TestDatasetCsv:
    def test_header_and_precision(self, tmp_path, ds):
        path = tmp_path / "d.csv"
        write_dataset_csv(path, ds.X, ds.y)
        lines = path.read_text().splitlines()
        assert lines[0] == "f0,f1,f2,label"
        X, y = read_dataset_csv(path)
        np.testing.assert_array_equal(y, ds.y)
        np.testing.assert_allclose(X, ds.X, rtol=1e-8)
        assert all(len(v.lstrip("-").replace(".", "").split("e")[0].lstrip("0")) <= 9
                   for v in lines[1].split(",")[:-1])

    def test_bad_header(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b,label\n1,2,0\n")
        with pytest.raises(ValueError, match="header"):
            read_dataset_csv(path)

    def test_empty(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("")
        with pytest.raises(ValueError):
            read_dataset_csv(path)

    def test_sidecar_name(self, tmp_path):
        assert splits_path(tmp_path / "d.csv").name == "d.csv.splits.json"


class TestPredictionsCsv:
    def test_exact_round_trip(self, tmp_path):
        P = np.random.default_rng(0).dirichlet(np.ones(3), size=10)
        y = np.arange(10) % 3
        path = tmp_path / "p.csv"
        write_predictions_csv(path, P, y)
        assert path.read_text().splitlines()[0] == "p0,p1,p2,label"
        P2, y2 = read_predictions_csv(path)
        np.testing.assert_array_equal(P2, P)
        np.testing.assert_array_equal(y2, y)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("q0,label\n1.0,0\n")
        with pytest.raises(ValueError):
            read_predictions_csv(path)


class TestCheckpoint:
    @pytest.mark.parametrize("kind", ["SL1H", "4HML", "D-Ens"])
    def test_bit_exact_round_trip(self, tmp_path, ds, kind):
        est = train_method(MethodConfig(kind=kind, epochs=1, hidden=[6], ensemble_size=2), ds)
        path = tmp_path / "m.json"
        save_checkpoint(est, path, extra={"note": kind})
        est2, extra = load_checkpoint(path)
        assert extra == {"note": kind}
        assert type(est2) is type(est)
        assert est2.get_params() == est.get_params()
        X = ds.test[0]
        np.testing.assert_array_equal(est2.predict_proba(X), est.predict_proba(X))
        if kind != "D-Ens":
            for a, b in zip(est.model_.arrays(), est2.model_.arrays()):
                assert a.tobytes() == b.tobytes()
            assert est2.scheme_.assignment == est.scheme_.assignment

    def test_records_scheme(self, tmp_path, ds):
        est = train_method(MethodConfig(kind="2HML", epochs=0, hidden=[4]), ds)
        save_checkpoint(est, tmp_path / "m.json")
        scheme = json.loads((tmp_path / "m.json").read_text())["estimator"]["model"]["scheme"]
        assert {"n_classes", "n_heads", "w_hi", "w_lo", "assignment", "seed", "vectors"} <= set(scheme)

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "x.json"
        path.write_text(json.dumps({"format": "other"}))
        with pytest.raises(ValueError):
            load_checkpoint(path)
        path.write_text(json.dumps({"format": "mhml-checkpoint", "version": 99}))
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(path)

    def test_rejects_unknown_estimator(self, tmp_path):
        with pytest.raises(TypeError):
            save_checkpoint(object(), tmp_path / "x.json")
