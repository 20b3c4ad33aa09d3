"""Synthetic Gaussian-mixture benchmark, baseline trainers and the suite runner.

Class means sit on a circle in the first two coordinates, so the Bayes
posterior is available in closed form and serves as a calibration oracle.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .calibration import TemperatureScaledClassifier, temperature_nll
from .estimators import DeepEnsembleClassifier, MultiHeadClassifier
from .metrics import DEFAULT_N_BINS, CalibrationReport, calibration_report, fmt6, rank_aggregate

log = logging.getLogger(__name__)

__all__ = [
    "METHODS",
    "SyntheticSpec",
    "Dataset",
    "MethodConfig",
    "SuiteConfig",
    "ExperimentResult",
    "class_means",
    "gen_gaussian_mixture",
    "bayes_posterior",
    "build_estimator",
    "train_method",
    "train_deep_ensemble",
    "evaluate",
    "run_suite",
    "render_table",
]

METHODS = ("SL1H", "LS", "D-Ens", "2HSL", "2HML", "4HML")


def geometric_priors(n_classes, ratio=0.8):
    p = ratio ** np.arange(n_classes)
    return (p / p.sum()).tolist()


@dataclass
class SyntheticSpec:
    n_classes: int = 8
    dim: int = 8
    radius: float = 2.0
    sigma: float = 1.2
    priors: list | None = None  # None -> geometric, p_k proportional to 0.8**k
    n_train: int = 20000
    n_val: int = 4000
    n_test: int = 10000
    seed: int = 0

    def __post_init__(self):
        if self.priors is None:
            self.priors = geometric_priors(self.n_classes)
        elif isinstance(self.priors, str):
            if self.priors == "uniform":
                self.priors = [1.0 / self.n_classes] * self.n_classes
            elif self.priors == "geometric":
                self.priors = geometric_priors(self.n_classes)
            else:
                raise ValueError(f"unknown priors {self.priors!r}")
        self.priors = [float(p) for p in self.priors]
        self.validate()

    def validate(self):
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.dim < 2:
            raise ValueError("dim must be >= 2 (means live in the first two coordinates)")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if len(self.priors) != self.n_classes:
            raise ValueError("priors must have one entry per class")
        pr = np.asarray(self.priors)
        if np.any(pr < 0) or abs(pr.sum() - 1.0) > 1e-12:
            raise ValueError("priors must be non-negative and sum to 1")
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise ValueError("split sizes must be non-negative")


def class_means(spec: SyntheticSpec) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(spec.n_classes) / spec.n_classes
    mu = np.zeros((spec.n_classes, spec.dim))
    mu[:, 0] = spec.radius * np.cos(angles)
    mu[:, 1] = spec.radius * np.sin(angles)
    return mu


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_train: int
    n_val: int
    n_test: int
    spec: SyntheticSpec | None = None

    @property
    def train(self):
        return self.X[: self.n_train], self.y[: self.n_train]

    @property
    def val(self):
        a = self.n_train
        return self.X[a: a + self.n_val], self.y[a: a + self.n_val]

    @property
    def test(self):
        a = self.n_train + self.n_val
        return self.X[a: a + self.n_test], self.y[a: a + self.n_test]

    @property
    def n_classes(self) -> int:
        return self.spec.n_classes if self.spec is not None else int(self.y.max()) + 1


def gen_gaussian_mixture(spec: SyntheticSpec) -> Dataset:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n_train + spec.n_val + spec.n_test
    y = rng.choice(spec.n_classes, size=n, p=np.asarray(spec.priors))
    X = class_means(spec)[y] + spec.sigma * rng.standard_normal((n, spec.dim))
    return Dataset(X, y.astype(np.int64), spec.n_train, spec.n_val, spec.n_test, spec)


def bayes_posterior(spec: SyntheticSpec, x) -> np.ndarray:
    """``P(y = k | x)`` for one point or a batch of points."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != spec.dim:
        raise ValueError(f"expected {spec.dim} features, got {X.shape[1]}")
    sq = ((X[:, None, :] - class_means(spec)[None]) ** 2).sum(axis=2)
    with np.errstate(divide="ignore"):
        logits = np.log(np.asarray(spec.priors)) - sq / (2.0 * spec.sigma**2)
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p[0] if single else p


class BayesOracle:
    """The true posterior wrapped as a predictor."""

    def __init__(self, spec: SyntheticSpec):
        self.spec = spec

    def predict_proba(self, X):
        return bayes_posterior(self.spec, X)


@dataclass
class MethodConfig:
    kind: str = "SL1H"
    epochs: int = 40
    batch_size: int = 128
    lr: float = 1e-2
    momentum: float = 0.9
    ls_epsilon: float = 0.1
    ensemble_size: int = 5
    hidden: list = field(default_factory=lambda: [64, 64])
    w_hi: float | None = None
    w_lo: float | None = None
    n_heads: int | None = None  # overrides the head count of 2HSL / 2HML / 4HML
    seed: int = 0

    def validate(self):
        if self.kind not in METHODS:
            raise ValueError(f"unknown method {self.kind!r}; expected one of {METHODS}")
        if self.kind == "D-Ens" and self.ensemble_size < 2:
            raise ValueError("D-Ens needs ensemble_size >= 2")


def build_estimator(config: MethodConfig, n_classes: int):
    """Unfitted estimator for a method kind."""
    config.validate()
    common = dict(
        hidden_layer_sizes=tuple(config.hidden),
        epochs=config.epochs,
        batch_size=config.batch_size,
        learning_rate=config.lr,
        momentum=config.momentum,
        n_classes=n_classes,
        random_state=config.seed,
    )
    kind = config.kind
    if kind == "SL1H":
        return MultiHeadClassifier(n_heads=1, loss="ce", **common)
    if kind == "LS":
        return MultiHeadClassifier(n_heads=1, loss="ce", label_smoothing=config.ls_epsilon, **common)
    if kind == "D-Ens":
        return DeepEnsembleClassifier(n_members=config.ensemble_size, **common)
    if kind == "2HSL":
        return MultiHeadClassifier(n_heads=config.n_heads or 2, loss="multi-head", weighting="uniform", **common)
    n_heads = config.n_heads or (2 if kind == "2HML" else 4)
    return MultiHeadClassifier(
        n_heads=n_heads, loss="multi-head", weighting="specialized", w_hi=config.w_hi, w_lo=config.w_lo, **common
    )


def train_method(config: MethodConfig, dataset: Dataset):
    if config.kind == "D-Ens":
        return train_deep_ensemble(config, dataset)
    X, y = dataset.train
    return build_estimator(config, dataset.n_classes).fit(X, y)


def train_deep_ensemble(config: MethodConfig, dataset: Dataset):
    if config.ensemble_size < 2:
        raise ValueError("a deep ensemble needs ensemble_size >= 2")
    est = build_estimator(MethodConfig(**{**asdict(config), "kind": "D-Ens"}), dataset.n_classes)
    X, y = dataset.train
    return est.fit(X, y)


def evaluate(predictor, X, y, n_bins=DEFAULT_N_BINS, method="", split="test") -> CalibrationReport:
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty split")
    return calibration_report(predictor.predict_proba(X), y, n_bins, method=method, split=split)


@dataclass
class SuiteConfig:
    data: SyntheticSpec = field(default_factory=SyntheticSpec)
    methods: list = field(default_factory=lambda: list(METHODS))
    train: MethodConfig = field(default_factory=MethodConfig)
    n_seeds: int = 5
    seed: int = 0
    n_bins: int = DEFAULT_N_BINS
    temperature_scaling: bool = True

    def cell_seeds(self) -> list[int]:
        return [int(s) for s in np.random.SeedSequence(self.seed).generate_state(self.n_seeds)]

    def resolved(self) -> "SuiteConfig":
        """Copy with the data seed tied to the master seed."""
        return SuiteConfig.from_dict({**self.to_dict(), "data": {**asdict(self.data), "seed": self.seed}})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"].pop("kind")
        d["train"].pop("seed")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SuiteConfig":
        d = dict(d)
        _reject_unknown(cls, d, "suite config")
        data = d.pop("data", {})
        train = d.pop("train", {})
        _reject_unknown(SyntheticSpec, data, "data")
        _reject_unknown(MethodConfig, train, "train")
        cfg = cls(data=SyntheticSpec(**data), train=MethodConfig(**train), **d)
        for m in cfg.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")
        if not cfg.methods or cfg.n_seeds < 1:
            raise ValueError("a suite needs at least one method and one seed")
        return cfg


def _reject_unknown(cls, d, what):
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ValueError(f"unknown {what} keys: {sorted(extra)}")


def _ts_block(est, dataset: Dataset, n_bins, method) -> dict:
    """Temperature scaling on logit-averaged outputs; reports pre/post metrics."""
    est.set_params(averaging="logit")
    X_val, y_val = dataset.val
    X_te, y_te = dataset.test
    pre = evaluate(est, X_te, y_te, n_bins, method=method)
    ts = TemperatureScaledClassifier(est).fit(X_val, y_val)
    post = evaluate(ts, X_te, y_te, n_bins, method=method + "+TS")
    val_logits = est.decision_function(X_val)
    return {
        "temperature": ts.temperature_,
        "val_nll_t1": temperature_nll(val_logits, y_val, 1.0),
        "val_nll_fit": temperature_nll(val_logits, y_val, ts.temperature_),
        "pre": pre,
        "post": post,
    }


def _run_cell(args):
    cfg, method, seed_index, seed = args
    try:
        dataset = gen_gaussian_mixture(cfg.data)
        mcfg = MethodConfig(**{**asdict(cfg.train), "kind": method, "seed": seed})
        est = train_method(mcfg, dataset)
        X_te, y_te = dataset.test
        cell = {"method": method, "seed_index": seed_index, "seed": seed,
                "report": evaluate(est, X_te, y_te, cfg.n_bins, method=method), "error": None}
        if cfg.temperature_scaling:
            cell["ts"] = _ts_block(est, dataset, cfg.n_bins, method)
        return cell
    except Exception as exc:  # recorded per cell; the suite carries on
        log.exception("cell %s/%d failed", method, seed_index)
        return {"method": method, "seed_index": seed_index, "seed": seed, "report": None,
                "error": f"{type(exc).__name__}: {exc}"}


@dataclass
class ExperimentResult:
    config: dict
    cells: list
    summary: dict  # method -> {metric: {"median", "std"}}
    ranks: dict
    ts_summary: dict = field(default_factory=dict)

    def median_reports(self) -> list[CalibrationReport]:
        return [_median_report(m, s) for m, s in self.summary.items()]

    def to_dict(self) -> dict:
        def cell_dict(c):
            out = {k: v for k, v in c.items() if k not in ("report", "ts")}
            out["report"] = None if c["report"] is None else c["report"].to_dict()
            if "ts" in c:
                ts = c["ts"]
                out["ts"] = {
                    "temperature": fmt6(ts["temperature"]),
                    "val_nll_t1": fmt6(ts["val_nll_t1"]),
                    "val_nll_fit": fmt6(ts["val_nll_fit"]),
                    "accuracy_unchanged": ts["pre"].accuracy == ts["post"].accuracy,
                    "val_nll_not_worse": ts["val_nll_fit"] <= ts["val_nll_t1"] + 1e-12,
                    "pre": ts["pre"].to_dict(),
                    "post": ts["post"].to_dict(),
                }
            return out

        return {
            "format": "mhml-result",
            "version": 1,
            "config": self.config,
            "cells": [cell_dict(c) for c in self.cells],
            "summary": self.summary,
            "ranks": self.ranks,
            "ts_summary": self.ts_summary,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _median_report(method, stats) -> CalibrationReport:
    return CalibrationReport(
        method=method, split="test", n_samples=int(stats["n_samples"]),
        accuracy=stats["accuracy"]["median"], ece=stats["ece"]["median"],
        nll=stats["nll"]["median"], brier=stats["brier"]["median"],
    )


def _summarize(reports: list[CalibrationReport]) -> dict:
    out = {"n_samples": reports[0].n_samples, "n_runs": len(reports)}
    for k in ("accuracy", "ece", "nll", "brier"):
        vals = np.array([getattr(r, k) for r in reports])
        out[k] = {"median": fmt6(np.median(vals)), "std": fmt6(np.std(vals))}
    return out


def run_suite(cfg: SuiteConfig, jobs: int = 1) -> ExperimentResult:
    """Train and evaluate every (method, seed) cell and aggregate the results."""
    cfg = cfg.resolved()
    seeds = cfg.cell_seeds()
    tasks = [(cfg, m, i, s) for m in cfg.methods for i, s in enumerate(seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_run_cell, tasks))
    else:
        cells = [_run_cell(t) for t in tasks]

    summary, ts_summary = {}, {}
    for m in cfg.methods:
        ok = [c for c in cells if c["method"] == m and c["report"] is not None]
        if not ok:
            continue
        summary[m] = _summarize([c["report"] for c in ok])
        if cfg.temperature_scaling:
            ts_summary[m] = {
                "pre": _summarize([c["ts"]["pre"] for c in ok]),
                "post": _summarize([c["ts"]["post"] for c in ok]),
                "temperature_median": fmt6(np.median([c["ts"]["temperature"] for c in ok])),
            }

    ranks = {}
    if len(summary) >= 2:
        table = rank_aggregate([_median_report(m, s) for m, s in summary.items()])
        ranks = table.to_dict()
    return ExperimentResult(config=cfg.to_dict(), cells=cells, summary=summary, ranks=ranks, ts_summary=ts_summary)


def render_table(doc: dict, percent: bool = True) -> str:
    """Aligned ACC / ECE / NLL / Rank table from a result document.

    With ``percent`` the three metrics are shown multiplied by 100.
    """
    scale = 100.0 if percent else 1.0
    summary, ranks = doc["summary"], doc.get("ranks") or {}
    avg = dict(zip(ranks.get("methods", []), ranks.get("average", [])))
    # stored documents have sorted keys; list methods in the configured order
    order = [m for m in doc.get("config", {}).get("methods", list(summary)) if m in summary]
    lines = [f"{'Method':<8} {'ACC':>8} {'ECE':>8} {'NLL':>8} {'Rank':>6}"]
    lines.append("-" * len(lines[0]))
    for m in order:
        s = summary[m]
        rank = f"{avg[m]:.1f}" if m in avg else "-"
        lines.append(
            f"{m:<8} {s['accuracy']['median'] * scale:>8.2f} {s['ece']['median'] * scale:>8.2f} "
            f"{s['nll']['median'] * scale:>8.2f} {rank:>6}"
        )
    ts = doc.get("ts_summary") or {}
    if ts:
        lines.append("")
        lines.append("Temperature scaling (logit-averaged outputs)")
        lines.append(f"{'Method':<8} {'ACC':>8} {'ECE':>8} {'NLL':>8} {'T':>7}")
        lines.append("-" * len(lines[-1]))
        for m in (m for m in order if m in ts):
            t = ts[m]
            for tag, block in (("", t["pre"]), ("+TS", t["post"])):
                T = f"{t['temperature_median']:.3f}" if tag else ""
                lines.append(
                    f"{(m + tag):<8} {block['accuracy']['median'] * scale:>8.2f} "
                    f"{block['ece']['median'] * scale:>8.2f} {block['nll']['median'] * scale:>8.2f} {T:>7}"
                )
    failed = [c for c in doc.get("cells", []) if c.get("error")]
    if failed:
        lines.append("")
        lines.append(f"{len(failed)} cell(s) failed:")
        lines.extend(f"  {c['method']} seed#{c['seed_index']}: {c['error']}" for c in failed)
    return "\n".join(lines)

