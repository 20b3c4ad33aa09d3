"""Acceptance criteria, one test each, at the stated tolerances.

Each test records a PASS/FAIL line that is printed in the terminal summary.
Criteria 7 and 8 share one run of the default 6-method, 5-seed suite.
"""

import json
import time

import numpy as np
import pytest

from mhml.bench import BayesOracle, SuiteConfig, SyntheticSpec, evaluate, gen_gaussian_mixture, run_suite
from mhml.cli import main
from mhml.gradcheck import verify_property1, verify_property2, verify_symmetry
from mhml.heads import build_weight_scheme
from mhml.metrics import CalibrationReport, ece, rank_aggregate
from oracles import brute_ece


def test_criterion_1_gradient_oracle(criterion):
    t0 = time.perf_counter()
    p1 = verify_property1(trials=100, tol=1e-6, eps=1e-5)
    p2 = verify_property2(trials=100, tol=1e-6, eps=1e-5)
    elapsed = time.perf_counter() - t0
    ok = p1.ok and p2.ok and p1.trials == p2.trials == 100 and elapsed < 10
    criterion(1, ok, f"property1 max_rel={p1.max_rel_err:.2e} failures={len(p1.failures)}, "
                     f"property2 max_rel={p2.max_rel_err:.2e} failures={len(p2.failures)}, {elapsed:.2f}s (< 10s)")
    assert p1.ok, p1.failures[:5]
    assert p2.ok, p2.failures[:5]
    assert elapsed < 10


def test_criterion_2_symmetry(criterion):
    t0 = time.perf_counter()
    r = verify_symmetry(trials=100, tol_equal=1e-12, tol_diff=1e-9)
    elapsed = time.perf_counter() - t0
    criterion(2, r.ok and elapsed < 5,
              f"max deviation {r.max_rel_err:.2e}, failures={len(r.failures)}, {elapsed:.2f}s (< 5s)")
    assert r.ok, r.failures[:5]
    assert elapsed < 5


def test_criterion_3_weight_scheme(criterion):
    s = build_weight_scheme(4, 2, assignment=[[0, 2], [1, 3]])
    example_ok = s.vectors.tolist() == [[2.0, 0.5, 2.0, 0.5], [0.5, 2.0, 0.5, 2.0]]
    bad = []
    n_checked = 0
    for K in range(2, 13):
        for M in range(2, K + 1):
            for seed in range(50):
                sch = build_weight_scheme(K, M, seed=seed)
                owners = [sum(j in block for block in sch.assignment) for j in range(K)]
                sizes = {len(block) for block in sch.assignment}
                hi_mask = np.zeros((M, K), dtype=bool)
                for m, block in enumerate(sch.assignment):
                    hi_mask[m, list(block)] = True
                expected = np.where(hi_mask, float(M), 1.0 / M)
                if owners != [1] * K or not sizes <= {K // M, K // M + 1} or not np.array_equal(sch.vectors, expected):
                    bad.append((K, M, seed))
                n_checked += 1
    criterion(3, example_ok and not bad,
              f"worked example {'exact' if example_ok else 'MISMATCH'}; {n_checked} schemes checked, "
              f"{len(bad)} violate the covering invariants")
    assert example_ok
    assert not bad, bad[:5]


def test_criterion_4_ece(criterion):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(10_000):
        n = int(rng.integers(1, 60))
        n_bins = int(rng.integers(1, 21))
        conf = rng.uniform(size=n)
        # sprinkle exact bin edges and endpoints
        edges = rng.integers(0, n_bins + 1, size=n) / n_bins
        conf = np.where(rng.uniform(size=n) < 0.2, edges, conf)
        correct = rng.uniform(size=n) < rng.uniform()
        worst = max(worst, abs(ece(conf, correct, n_bins) - brute_ece(conf.tolist(), correct.tolist(), n_bins)))
    binary = ece(np.full(1000, 0.5), np.arange(1000) % 2 == 0)
    ok = worst <= 1e-12 and binary == 0.0
    criterion(4, ok, f"10000 random sets, max |ece - brute force| = {worst:.1e} (<= 1e-12); "
                     f"random binary predictor ECE = {binary!r}")
    assert worst <= 1e-12
    assert binary == 0.0


TABLE1_RESNET50 = {
    # method: (ACC, ECE, NLL) as printed
    "SL1H": (80.71, 5.79, 53.46),
    "LS": (74.81, 2.55, 64.27),
    "MbLS": (75.02, 3.26, 63.86),
    "MixUp": (76.00, 3.67, 62.72),
    "DCA": (76.17, 5.75, 62.13),
    "D-Ens": (82.19, 2.42, 46.64),
    "2HSL": (80.97, 4.36, 51.42),
    "2HML": (80.28, 4.49, 51.86),
    "4HML": (81.13, 3.09, 49.44),
}
TABLE1_RANKS = {"D-Ens": 1.0, "4HML": 2.3, "SL1H": 6.0, "LS": 6.7, "MbLS": 6.7, "DCA": 6.7, "MixUp": 6.3,
                "2HSL": 4.0, "2HML": 5.3}


def test_criterion_5_rank_aggregation(criterion):
    reports = [CalibrationReport(m, "test", 1, a, e, n, 0.0) for m, (a, e, n) in TABLE1_RESNET50.items()]
    table = rank_aggregate(reports)
    got = {m: round(table.average_rank(m), 1) for m in TABLE1_RESNET50}
    mismatches = {m: (got[m], TABLE1_RANKS[m]) for m in got if got[m] != TABLE1_RANKS[m]}
    criterion(5, not mismatches, f"9 methods, rounded ranks {got}" + (f", mismatches {mismatches}" if mismatches else ""))
    assert not mismatches


def test_criterion_6_bayes_oracle(criterion):
    t0 = time.perf_counter()
    spec = SyntheticSpec(priors="uniform", n_train=0, n_val=0, n_test=50_000, seed=0)
    ds = gen_gaussian_mixture(spec)
    r = evaluate(BayesOracle(spec), *ds.test, n_bins=15)
    elapsed = time.perf_counter() - t0
    criterion(6, r.ece <= 0.02 and elapsed < 30,
              f"Bayes posterior on 50000 samples: ECE={r.ece:.4f} (<= 0.02), {elapsed:.2f}s (< 30s)")
    assert r.n_samples == 50_000
    assert r.ece <= 0.02
    assert elapsed < 30


@pytest.fixture(scope="session")
def default_suite():
    t0 = time.perf_counter()
    result = run_suite(SuiteConfig(), jobs=1)
    return result, time.perf_counter() - t0


def _medians(result, method):
    reports = [c["report"] for c in result.cells if c["method"] == method and c["report"] is not None]
    assert len(reports) == 5, f"{method}: {5 - len(reports)} cell(s) failed"
    return {k: float(np.median([getattr(r, k) for r in reports])) for k in ("accuracy", "ece", "nll")}


@pytest.mark.slow
def test_criterion_7_trend_reproduction(default_suite, criterion):
    result, elapsed = default_suite
    sl1h, mh4, dens = _medians(result, "SL1H"), _medians(result, "4HML"), _medians(result, "D-Ens")
    clauses = {
        "ECE(4HML) < ECE(SL1H)": (mh4["ece"] < sl1h["ece"], f"{mh4['ece']:.4f} vs {sl1h['ece']:.4f}"),
        "NLL(4HML) <= NLL(SL1H)": (mh4["nll"] <= sl1h["nll"], f"{mh4['nll']:.4f} vs {sl1h['nll']:.4f}"),
        "ACC(4HML) >= ACC(SL1H) - 0.01": (mh4["accuracy"] >= sl1h["accuracy"] - 0.01,
                                          f"{mh4['accuracy']:.4f} vs {sl1h['accuracy']:.4f}"),
        "NLL(D-Ens) <= NLL(SL1H)": (dens["nll"] <= sl1h["nll"], f"{dens['nll']:.4f} vs {sl1h['nll']:.4f}"),
        "runtime < 600s single core": (elapsed < 600, f"{elapsed:.0f}s"),
    }
    detail = "; ".join(f"{name}: {'ok' if ok else 'NOT MET'} ({vals})" for name, (ok, vals) in clauses.items())
    ok = all(v[0] for v in clauses.values())
    criterion(7, ok, detail)
    assert ok, detail


@pytest.mark.slow
def test_criterion_8_temperature_scaling(default_suite, criterion):
    result, _ = default_suite
    cells = [c for c in result.cells if c["report"] is not None]
    acc_bad = [(c["method"], c["seed_index"]) for c in cells if c["ts"]["pre"].accuracy != c["ts"]["post"].accuracy]
    nll_bad = [(c["method"], c["seed_index"]) for c in cells
               if not c["ts"]["val_nll_fit"] <= c["ts"]["val_nll_t1"] + 1e-12]
    ok = len(cells) == 30 and not acc_bad and not nll_bad
    criterion(8, ok, f"{len(cells)} trained models; accuracy changed in {len(acc_bad)}, "
                     f"validation NLL worse than T=1 in {len(nll_bad)}")
    assert len(cells) == 30
    assert not acc_bad and not nll_bad


def test_criterion_9_reproducibility(tmp_path, criterion, capsys):
    cfg = {
        "data": {"n_train": 1500, "n_val": 300, "n_test": 600},
        "train": {"epochs": 3, "hidden": [16, 16], "ensemble_size": 2},
        "n_seeds": 2,
        "seed": 7,
    }
    first_cfg = tmp_path / "cfg.json"
    first_cfg.write_text(json.dumps(cfg))
    first, second = tmp_path / "first.json", tmp_path / "second.json"
    assert main(["suite", "--config", str(first_cfg), "--out", str(first)]) == 0
    emitted = tmp_path / "emitted.json"
    emitted.write_text(json.dumps(json.loads(first.read_text())["config"]))
    assert main(["suite", "--config", str(emitted), "--out", str(second)]) == 0
    capsys.readouterr()
    same = first.read_bytes() == second.read_bytes()
    doc = json.loads(first.read_text())
    criterion(9, same, f"suite over {len(doc['config']['methods'])} methods x 2 seeds re-run from its emitted "
                       f"config: result documents {'byte-identical' if same else 'DIFFER'}")
    assert same
