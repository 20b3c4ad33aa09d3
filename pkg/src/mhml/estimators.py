"""scikit-learn compatible classifiers built on the numpy engine."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_labels
from .heads import (
    WeightScheme,
    backprop_logit_grads,
    backward,
    build_weight_scheme,
    forward,
    init_multihead,
    uniform_scheme,
)
from .nn import OptimizerState, one_hot, sgd_step, softmax

__all__ = ["MultiHeadClassifier", "DeepEnsembleClassifier"]

LOSSES = ("ce", "multi-head")
WEIGHTINGS = ("specialized", "uniform")


class MultiHeadClassifier(ClassifierMixin, BaseEstimator):
    """MLP backbone with ``n_heads`` linear heads, trained by minibatch SGD.

    Parameters
    ----------
    n_heads : int
        Number of linear heads on the shared backbone.
    loss : {"ce", "multi-head"}
        ``"ce"`` trains only the averaged prediction with cross-entropy
        (a single-head "ce" model is the plain baseline). ``"multi-head"``
        adds a weighted cross-entropy term per head.
    weighting : {"specialized", "uniform"}
        Per-head class weights for ``loss="multi-head"``. ``"specialized"``
        deals classes to heads (weight ``w_hi`` on a head's own classes,
        ``w_lo`` elsewhere); ``"uniform"`` gives every head all-ones weights.
    w_hi, w_lo : float, optional
        Specialisation weights; default to ``n_heads`` and ``1 / n_heads``.
    label_smoothing : float
        Target smoothing ``(1 - eps) * onehot + eps / K``; single-head
        ``loss="ce"`` only.
    hidden_layer_sizes : tuple of int
        Backbone widths; the last one is the feature width fed to the heads.
    averaging : {"prob", "logit"}
        How head outputs are combined. Used both in training and prediction,
        so it can be switched on a fitted model with ``set_params``.
    epochs, batch_size, learning_rate, momentum
        SGD settings. Gradients are batch means.
    n_classes : int, optional
        Number of classes; inferred as ``max(y) + 1`` when omitted.
    random_state : int
        Seeds initialisation, the class-to-head dealing and batch shuffling.
    """

    def __init__(
        self,
        n_heads=1,
        loss="ce",
        weighting="specialized",
        w_hi=None,
        w_lo=None,
        label_smoothing=0.0,
        hidden_layer_sizes=(64, 64),
        averaging="prob",
        epochs=40,
        batch_size=128,
        learning_rate=1e-2,
        momentum=0.9,
        n_classes=None,
        random_state=0,
    ):
        self.n_heads = n_heads
        self.loss = loss
        self.weighting = weighting
        self.w_hi = w_hi
        self.w_lo = w_lo
        self.label_smoothing = label_smoothing
        self.hidden_layer_sizes = hidden_layer_sizes
        self.averaging = averaging
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.n_classes = n_classes
        self.random_state = random_state

    def _validate_params(self, n_classes):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}, got {self.weighting!r}")
        if int(self.n_heads) < 1:
            raise ValueError("n_heads must be >= 1")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must lie in [0, 1)")
        if self.label_smoothing and (self.loss != "ce" or self.n_heads != 1):
            raise ValueError("label_smoothing is only supported for a single head with loss='ce'")
        if int(self.epochs) < 0 or int(self.batch_size) < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if n_classes < 2:
            raise ValueError("need at least two classes")

    def _make_scheme(self, K, seed) -> WeightScheme:
        M = int(self.n_heads)
        if self.loss == "ce":
            return WeightScheme(K, M, np.zeros((M, K)))
        if self.weighting == "uniform":
            return uniform_scheme(K, M, 1.0)
        return build_weight_scheme(K, M, self.w_hi, self.w_lo, seed=seed)

    def fit(self, X, y):
        X = check_features(X)
        y = check_labels(y, n_samples=X.shape[0], n_classes=self.n_classes)
        K = int(self.n_classes) if self.n_classes is not None else int(y.max()) + 1
        self._validate_params(K)

        init_seq, scheme_seq, shuffle_seq = np.random.SeedSequence(self.random_state).spawn(3)
        scheme = self._make_scheme(K, int(scheme_seq.generate_state(1)[0]))
        model = init_multihead(X.shape[1], self.hidden_layer_sizes, scheme, self.averaging, seed=init_seq)
        rng = np.random.default_rng(shuffle_seq)

        arrays = model.arrays()
        state = OptimizerState.zeros_like(arrays, self.learning_rate, self.momentum)
        single_ce = self.loss == "ce" and model.n_heads == 1
        n, bs = X.shape[0], int(self.batch_size)
        for _ in range(int(self.epochs)):
            order = rng.permutation(n)
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                out, trace = forward(model, X[idx], return_trace=True)
                if single_ce:
                    grads = backprop_logit_grads(model, trace, self._ce_grad(out.p_heads[0], y[idx], K)[None])
                else:
                    grads = backward(model, trace, out, y[idx])
                sgd_step(arrays, grads, state)

        self.model_ = model
        self.scheme_ = scheme
        self.classes_ = np.arange(K)
        self.n_features_in_ = X.shape[1]
        return self

    def _ce_grad(self, p, y, K):
        eps = float(self.label_smoothing)
        target = (1.0 - eps) * one_hot(y, K) + eps / K
        return (p - target) / p.shape[0]

    def _outputs(self, X):
        check_is_fitted(self, "model_")
        X = check_features(X, self.n_features_in_)
        return forward(self.model_, X, averaging=self.averaging)

    def predict_proba(self, X):
        return self._outputs(X).p_mean

    def predict(self, X):
        p = self.predict_proba(X)
        return self.classes_[p.argmax(axis=1)]

    def decision_function(self, X):
        """Head-averaged logits."""
        return self._outputs(X).z_mean

    def head_proba(self, X):
        """Per-head probabilities, shape ``(n_heads, n_samples, n_classes)``."""
        return self._outputs(X).p_heads


class DeepEnsembleClassifier(ClassifierMixin, BaseEstimator):
    """Independently trained single-head networks with averaged predictions.

    ``member_seeds`` fixes each member's ``random_state``; by default the
    seeds are drawn from ``random_state``. Other parameters are forwarded to
    every :class:`MultiHeadClassifier` member.
    """

    def __init__(
        self,
        n_members=5,
        hidden_layer_sizes=(64, 64),
        averaging="prob",
        epochs=40,
        batch_size=128,
        learning_rate=1e-2,
        momentum=0.9,
        member_seeds=None,
        n_classes=None,
        random_state=0,
    ):
        self.n_members = n_members
        self.hidden_layer_sizes = hidden_layer_sizes
        self.averaging = averaging
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.member_seeds = member_seeds
        self.n_classes = n_classes
        self.random_state = random_state

    def _seeds(self):
        if self.member_seeds is not None:
            seeds = [int(s) for s in self.member_seeds]
            if len(seeds) != self.n_members:
                raise ValueError("member_seeds must list one seed per member")
            return seeds
        return [int(s) for s in np.random.SeedSequence(self.random_state).generate_state(self.n_members)]

    def fit(self, X, y):
        if int(self.n_members) < 2:
            raise ValueError(f"a deep ensemble needs at least 2 members, got {self.n_members}")
        X = check_features(X)
        y = check_labels(y, n_samples=X.shape[0], n_classes=self.n_classes)
        K = int(self.n_classes) if self.n_classes is not None else int(y.max()) + 1
        self.estimators_ = [
            MultiHeadClassifier(
                n_heads=1,
                loss="ce",
                hidden_layer_sizes=self.hidden_layer_sizes,
                epochs=self.epochs,
                batch_size=self.batch_size,
                learning_rate=self.learning_rate,
                momentum=self.momentum,
                n_classes=K,
                random_state=seed,
            ).fit(X, y)
            for seed in self._seeds()
        ]
        self.classes_ = np.arange(K)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "estimators_")
        return np.mean([m.decision_function(X) for m in self.estimators_], axis=0)

    def predict_proba(self, X):
        check_is_fitted(self, "estimators_")
        if self.averaging in ("logit", "logit-average"):
            return softmax(self.decision_function(X))
        return np.mean([m.predict_proba(X) for m in self.estimators_], axis=0)

    def predict(self, X):
        p = self.predict_proba(X)
        return self.classes_[p.argmax(axis=1)]
