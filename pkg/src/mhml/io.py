"""CSV datasets and predictions, JSON checkpoints."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .estimators import DeepEnsembleClassifier, MultiHeadClassifier
from .heads import MultiHeadModel, WeightScheme
from .nn import Layer, MlpParams

__all__ = [
    "CHECKPOINT_FORMAT",
    "CHECKPOINT_VERSION",
    "write_dataset_csv",
    "read_dataset_csv",
    "splits_path",
    "write_predictions_csv",
    "read_predictions_csv",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT = "mhml-checkpoint"
CHECKPOINT_VERSION = 1


def write_dataset_csv(path, X, y):
    """Header ``f0,...,f{d-1},label``; features with 9 significant digits."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(X.shape[1])] + ["label"])
        for row, label in zip(X, y):
            w.writerow([f"{v:.9g}" for v in row] + [int(label)])


def read_dataset_csv(path):
    """Return ``(X, y)`` from a dataset CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    d = len(header) - 1
    if header != [f"f{j}" for j in range(d)] + ["label"]:
        raise ValueError(f"{path}: expected header f0,...,f{{d-1}},label, got {','.join(header)}")
    body = rows[1:]
    X = np.array([[float(v) for v in r[:d]] for r in body], dtype=np.float64).reshape(len(body), d)
    y = np.array([int(r[d]) for r in body], dtype=np.int64)
    return X, y


def splits_path(path) -> Path:
    """Sidecar JSON that records split sizes and the generator settings."""
    p = Path(path)
    return p.with_name(p.name + ".splits.json")


def write_predictions_csv(path, probs, labels):
    probs = np.asarray(probs, dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"p{j}" for j in range(probs.shape[1])] + ["label"])
        for row, label in zip(probs, labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def read_predictions_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    K = len(header) - 1
    if K < 1 or header != [f"p{j}" for j in range(K)] + ["label"]:
        raise ValueError(f"{path}: expected header p0,...,p{{K-1}},label, got {','.join(header)}")
    body = rows[1:]
    P = np.array([[float(v) for v in r[:K]] for r in body], dtype=np.float64).reshape(len(body), K)
    y = np.array([int(r[K]) for r in body], dtype=np.int64)
    return P, y


# JSON floats are written with repr, which round-trips float64 exactly.

def _model_to_dict(model: MultiHeadModel) -> dict:
    return {
        "averaging": model.averaging,
        "scheme": model.scheme.to_dict(),
        "backbone": [{"W": l.W.tolist(), "b": l.b.tolist()} for l in model.backbone.layers],
        "heads": [{"W": h.W.tolist(), "b": h.b.tolist()} for h in model.heads],
    }


def _layer(d) -> Layer:
    W = np.array(d["W"], dtype=np.float64)
    return Layer(W.reshape(len(d["W"]), -1), np.array(d["b"], dtype=np.float64))


def _model_from_dict(d) -> MultiHeadModel:
    return MultiHeadModel(
        MlpParams([_layer(l) for l in d["backbone"]]),
        [_layer(h) for h in d["heads"]],
        WeightScheme.from_dict(d["scheme"]),
        d["averaging"],
    )


def _jsonable_params(est) -> dict:
    params = est.get_params(deep=False)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()}


def _estimator_to_dict(est) -> dict:
    if isinstance(est, MultiHeadClassifier):
        return {
            "kind": "multihead",
            "params": _jsonable_params(est),
            "n_features_in": int(est.n_features_in_),
            "model": _model_to_dict(est.model_),
        }
    if isinstance(est, DeepEnsembleClassifier):
        return {
            "kind": "ensemble",
            "params": _jsonable_params(est),
            "n_features_in": int(est.n_features_in_),
            "members": [_estimator_to_dict(m) for m in est.estimators_],
        }
    raise TypeError(f"cannot checkpoint {type(est).__name__}")


def _estimator_from_dict(d):
    params = dict(d["params"])
    if "hidden_layer_sizes" in params:
        params["hidden_layer_sizes"] = tuple(params["hidden_layer_sizes"])
    if d["kind"] == "multihead":
        est = MultiHeadClassifier(**params)
        est.model_ = _model_from_dict(d["model"])
        est.scheme_ = est.model_.scheme
        est.classes_ = np.arange(est.model_.n_classes)
    elif d["kind"] == "ensemble":
        est = DeepEnsembleClassifier(**params)
        est.estimators_ = [_estimator_from_dict(m) for m in d["members"]]
        est.classes_ = est.estimators_[0].classes_
    else:
        raise ValueError(f"unknown checkpoint kind {d['kind']!r}")
    est.n_features_in_ = int(d["n_features_in"])
    return est


def save_checkpoint(est, path, extra=None):
    """Write a fitted estimator (and optional metadata) as JSON."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "estimator": _estimator_to_dict(est),
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path):
    """Return ``(estimator, extra)``."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    return _estimator_from_dict(doc["estimator"]), doc.get("extra", {})
