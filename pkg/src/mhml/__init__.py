"""Multi-head classifiers with specialised weighted cross-entropy, plus calibration tooling."""

from .calibration import TemperatureScaledClassifier, TemperatureScaler, fit_temperature
from .estimators import DeepEnsembleClassifier, MultiHeadClassifier

__version__ = "0.1.0"

__all__ = [
    "MultiHeadClassifier",
    "DeepEnsembleClassifier",
    "TemperatureScaler",
    "TemperatureScaledClassifier",
    "fit_temperature",
]
