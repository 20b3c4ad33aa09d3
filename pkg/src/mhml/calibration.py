"""Post-hoc temperature scaling, including the logit-averaged multi-head variant."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_labels, check_logits
from .metrics import nll
from .nn import softmax

__all__ = [
    "FitTrace",
    "apply_temperature",
    "temperature_nll",
    "fit_temperature",
    "TemperatureScaler",
    "TemperatureScaledClassifier",
    "ts_for_multihead",
]

LOG_T_RANGE = (-3.0, 3.0)
GRID_POINTS = 61
REFINE_TOL = 1e-6
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def _check_temperature(T) -> float:
    T = float(T)
    if not (math.isfinite(T) and T > 0):
        raise ValueError(f"temperature must be positive and finite, got {T}")
    return T


def apply_temperature(z, T):
    """``softmax(z / T)`` row-wise."""
    return softmax(np.asarray(z, dtype=np.float64) / _check_temperature(T))


def temperature_nll(z, y, T) -> float:
    return nll(apply_temperature(z, T), y)


@dataclass
class FitTrace:
    evaluations: list[tuple[float, float]] = field(default_factory=list)  # (T, nll)
    temperature: float = 1.0
    final_nll: float = float("nan")


def fit_temperature(val_logits, val_labels):
    """Fit a scalar temperature by minimising validation NLL.

    A 61-point grid over ``log T`` in ``[-3, 3]`` locates the basin, then
    golden-section search refines ``log T`` to within ``1e-6``. The returned
    temperature is the best of every evaluated point, so its NLL never exceeds
    the NLL at ``T = 1`` (a grid point).

    Returns ``(T, FitTrace)``.
    """
    z = check_logits(val_logits)
    y = check_labels(val_labels, n_samples=z.shape[0], n_classes=z.shape[1])
    trace = FitTrace()

    def objective(log_t):
        T = math.exp(log_t)
        val = temperature_nll(z, y, T)
        trace.evaluations.append((T, val))
        return val

    lo, hi = LOG_T_RANGE
    grid = np.linspace(lo, hi, GRID_POINTS)
    grid[np.argmin(np.abs(grid))] = 0.0  # T = 1 exactly
    values = [objective(float(g)) for g in grid]
    i = int(np.argmin(values))
    a = float(grid[max(i - 1, 0)])
    b = float(grid[min(i + 1, len(grid) - 1)])

    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = objective(c), objective(d)
    while b - a > REFINE_TOL:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = objective(d)

    T_best, nll_best = min(trace.evaluations, key=lambda e: (e[1], abs(math.log(e[0]))))
    trace.temperature = T_best
    trace.final_nll = nll_best
    return T_best, trace


class TemperatureScaler(BaseEstimator):
    """Learn a temperature on held-out logits and rescale new logits.

    ``fit(logits, y)``; ``predict_proba(logits)`` (alias ``transform``)
    returns ``softmax(logits / temperature_)``.
    """

    def fit(self, logits, y):
        self.temperature_, self.trace_ = fit_temperature(logits, y)
        return self

    def predict_proba(self, logits):
        check_is_fitted(self, "temperature_")
        return apply_temperature(check_logits(logits), self.temperature_)

    transform = predict_proba

    def predict(self, logits):
        return self.predict_proba(logits).argmax(axis=1)


class TemperatureScaledClassifier(ClassifierMixin, BaseEstimator):
    """Wrap a fitted classifier exposing ``decision_function`` (averaged logits).

    Multi-head estimators must average logits (``averaging="logit"``) for
    their ``decision_function`` to be the quantity the softmax is applied to.
    """

    def __init__(self, estimator=None):
        self.estimator = estimator

    def fit(self, X, y):
        _require_logit_averaging(self.estimator)
        self.scaler_ = TemperatureScaler().fit(self.estimator.decision_function(X), y)
        self.temperature_ = self.scaler_.temperature_
        self.classes_ = getattr(self.estimator, "classes_", None)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "scaler_")
        return self.estimator.decision_function(X) / self.temperature_

    def predict_proba(self, X):
        check_is_fitted(self, "scaler_")
        return self.scaler_.predict_proba(self.estimator.decision_function(X))

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)


def _require_logit_averaging(estimator):
    mode = getattr(estimator, "averaging", "logit")
    n_heads = getattr(estimator, "n_heads", 1)
    if mode not in ("logit", "logit-average") and n_heads != 1:
        raise ValueError(
            "temperature scaling needs logit-averaged outputs, but this model averages "
            "probabilities; re-run its forward pass in logit-average mode with "
            "estimator.set_params(averaging='logit')"
        )


def ts_for_multihead(estimator, X_val, y_val) -> TemperatureScaledClassifier:
    """Fit one temperature on the head-averaged validation logits."""
    return TemperatureScaledClassifier(estimator).fit(X_val, y_val)
