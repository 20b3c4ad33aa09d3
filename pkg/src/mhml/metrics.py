"""Calibration and accuracy metrics, reliability tables and rank aggregation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .heads import LOG_CLAMP

__all__ = [
    "DEFAULT_N_BINS",
    "BinStats",
    "CalibrationReport",
    "RankTable",
    "bin_edges",
    "bin_index",
    "ece",
    "nll",
    "brier",
    "accuracy",
    "reliability_table",
    "ece_from_table",
    "calibration_report",
    "rank_aggregate",
    "fmt6",
]

DEFAULT_N_BINS = 15
RANK_METRICS = ("accuracy", "ece", "nll")


def fmt6(x: float) -> float:
    """Round to 6 significant digits (the serialized precision of reports)."""
    return float(f"{float(x):.6g}")


def _check_conf(confidences, correct, n_bins):
    c = np.asarray(confidences, dtype=np.float64).reshape(-1)
    ok = np.asarray(correct).reshape(-1).astype(bool)
    if c.size == 0:
        raise ValueError("need at least one prediction")
    if c.shape != ok.shape:
        raise ValueError("confidences and correct must have the same length")
    if not np.all(np.isfinite(c)) or np.any(c < 0) or np.any(c > 1):
        raise ValueError("confidences must lie in [0, 1]")
    if int(n_bins) < 1:
        raise ValueError("n_bins must be >= 1")
    return c, ok, int(n_bins)


def bin_edges(n_bins: int) -> np.ndarray:
    return np.arange(n_bins + 1) / n_bins


def bin_index(confidences, n_bins) -> np.ndarray:
    """0-based bin of each confidence for right-closed bins ``((s-1)/n, s/n]``.

    A confidence of exactly 0 goes to the first bin.
    """
    idx = np.searchsorted(bin_edges(n_bins), np.asarray(confidences, dtype=np.float64), side="left") - 1
    return np.clip(idx, 0, n_bins - 1)


@dataclass
class BinStats:
    lo: float
    hi: float
    count: int
    acc: float
    conf: float


def reliability_table(confidences, correct, n_bins=DEFAULT_N_BINS) -> list[BinStats]:
    """Per-bin counts, accuracy and mean confidence; empty bins report zeros."""
    c, ok, n_bins = _check_conf(confidences, correct, n_bins)
    idx = bin_index(c, n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    hits = np.bincount(idx, weights=ok.astype(np.float64), minlength=n_bins)
    conf_sum = np.bincount(idx, weights=c, minlength=n_bins)
    edges = bin_edges(n_bins)
    table = []
    for s in range(n_bins):
        n = int(counts[s])
        table.append(
            BinStats(
                lo=float(edges[s]),
                hi=float(edges[s + 1]),
                count=n,
                acc=float(hits[s] / n) if n else 0.0,
                conf=float(conf_sum[s] / n) if n else 0.0,
            )
        )
    return table


def ece_from_table(table: list[BinStats]) -> float:
    total = sum(b.count for b in table)
    return float(sum((b.count / total) * abs(b.acc - b.conf) for b in table if b.count))


def ece(confidences, correct, n_bins=DEFAULT_N_BINS) -> float:
    """Expected calibration error over ``n_bins`` equal-width confidence bins."""
    return ece_from_table(reliability_table(confidences, correct, n_bins))


def _check_probs(probs, labels):
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    y = np.atleast_1d(np.asarray(labels)).astype(np.int64)
    if p.ndim != 2 or p.shape[0] != y.shape[0]:
        raise ValueError(f"probs {p.shape} and labels {y.shape} do not line up")
    if p.shape[0] == 0:
        raise ValueError("need at least one sample")
    if np.any(y < 0) or np.any(y >= p.shape[1]):
        raise ValueError(f"labels must lie in [0, {p.shape[1]})")
    return p, y


def nll(probs, labels) -> float:
    p, y = _check_probs(probs, labels)
    py = p[np.arange(len(y)), y]
    return float(np.mean(-np.log(np.maximum(py, LOG_CLAMP))))


def brier(probs, labels) -> float:
    p, y = _check_probs(probs, labels)
    d = p.copy()
    d[np.arange(len(y)), y] -= 1.0
    return float(np.mean(np.sum(d * d, axis=1)))


def accuracy(probs, labels) -> float:
    p, y = _check_probs(probs, labels)
    return float(np.mean(p.argmax(axis=1) == y))


@dataclass
class CalibrationReport:
    method: str
    split: str
    n_samples: int
    accuracy: float
    ece: float
    nll: float
    brier: float
    bins: list[BinStats] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("accuracy", "ece", "nll", "brier"):
            d[k] = fmt6(d[k])
        for b in d["bins"]:
            b["acc"], b["conf"] = fmt6(b["acc"]), fmt6(b["conf"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationReport":
        d = dict(d)
        d["bins"] = [BinStats(**b) for b in d.get("bins", [])]
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CalibrationReport":
        return cls.from_dict(json.loads(text))


def calibration_report(probs, labels, n_bins=DEFAULT_N_BINS, method="", split="test") -> CalibrationReport:
    p, y = _check_probs(probs, labels)
    conf = p.max(axis=1)
    correct = p.argmax(axis=1) == y
    table = reliability_table(conf, correct, n_bins)
    return CalibrationReport(
        method=method,
        split=split,
        n_samples=int(len(y)),
        accuracy=float(np.mean(correct)),
        ece=ece_from_table(table),
        nll=nll(p, y),
        brier=brier(p, y),
        bins=table,
    )


@dataclass
class RankTable:
    methods: list[str]
    ranks: dict[str, list[float]]  # metric -> rank per method
    average: list[float]

    def average_rank(self, method: str) -> float:
        return self.average[self.methods.index(method)]

    def to_dict(self) -> dict:
        return {"methods": list(self.methods), "ranks": {k: list(v) for k, v in self.ranks.items()},
                "average": list(self.average)}


def rank_aggregate(reports) -> RankTable:
    """Rank methods on accuracy (high is good), ECE and NLL (low is good).

    ``reports`` is a sequence of :class:`CalibrationReport` or a mapping
    ``method -> report``. Ties share the mean of their positions.
    """
    if isinstance(reports, dict):
        reports = [
            r if r.method else CalibrationReport(**{**asdict(r), "method": name, "bins": r.bins})
            for name, r in reports.items()
        ]
    reports = list(reports)
    if len(reports) < 2:
        raise ValueError("rank aggregation needs at least two methods")
    splits = {r.split for r in reports}
    if len(splits) > 1:
        raise ValueError(f"reports come from different splits: {sorted(splits)}")
    methods = [r.method for r in reports]
    ranks = {
        "accuracy": rankdata([-r.accuracy for r in reports], method="average").tolist(),
        "ece": rankdata([r.ece for r in reports], method="average").tolist(),
        "nll": rankdata([r.nll for r in reports], method="average").tolist(),
    }
    average = [float(np.mean([ranks[m][i] for m in RANK_METRICS])) for i in range(len(reports))]
    return RankTable(methods, ranks, average)
