"""Multi-head classifiers supervised with per-head weighted cross-entropy.

A shared backbone feeds ``M`` linear heads. Head ``m`` yields logits
``z^m`` and probabilities ``p^m = softmax(z^m)``; the model prediction is
``p_mean = mean_m p^m`` ("prob" averaging) or ``softmax(mean_m z^m)``
("logit" averaging, needed for temperature scaling).

Training minimises

    L = CE(p_mean, y) + sum_m  w^m[y] * CE(p^m, y)

where each head gets its own class-weight vector ``w^m`` from a
:class:`WeightScheme`. In prob-averaging mode the gradient at head ``m`` is

    dL/dz^m = (w^m[y] + p^m[y] / sum_i p^i[y]) * (p^m - onehot(y)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import ForwardTrace, Layer, MlpParams, glorot_uniform, init_mlp, mlp_backward, mlp_forward, one_hot, softmax

__all__ = [
    "AVERAGING_MODES",
    "LOG_CLAMP",
    "WeightScheme",
    "build_weight_scheme",
    "uniform_scheme",
    "MultiHeadModel",
    "HeadOutputs",
    "MultiHeadTrace",
    "init_multihead",
    "outputs_from_logits",
    "forward",
    "weighted_ce",
    "mh_loss",
    "mh_grad_logits",
    "logit_average_grad_logits",
    "backprop_logit_grads",
    "backward",
    "predict",
]

LOG_CLAMP = 1e-12
AVERAGING_MODES = ("prob", "logit")
_MODE_ALIASES = {"prob": "prob", "prob-average": "prob", "logit": "logit", "logit-average": "logit"}


def _normalize_mode(mode: str) -> str:
    try:
        return _MODE_ALIASES[mode]
    except (KeyError, TypeError):
        raise ValueError(f"averaging mode must be one of {AVERAGING_MODES}, got {mode!r}") from None


@dataclass
class WeightScheme:
    """Per-head class weights ``vectors[m, j]``.

    ``assignment[m]`` lists the classes head ``m`` specialises in, or is
    ``None`` for schemes without specialisation (uniform weights).
    """

    n_classes: int
    n_heads: int
    vectors: np.ndarray
    w_hi: float | None = None
    w_lo: float | None = None
    assignment: tuple[tuple[int, ...], ...] | None = None
    seed: int | None = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.shape != (self.n_heads, self.n_classes):
            raise ValueError(
                f"vectors must have shape ({self.n_heads}, {self.n_classes}), got {self.vectors.shape}"
            )

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "n_heads": self.n_heads,
            "w_hi": self.w_hi,
            "w_lo": self.w_lo,
            "assignment": None if self.assignment is None else [list(a) for a in self.assignment],
            "seed": self.seed,
            "vectors": self.vectors.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WeightScheme":
        assignment = d.get("assignment")
        return cls(
            n_classes=int(d["n_classes"]),
            n_heads=int(d["n_heads"]),
            vectors=np.array(d["vectors"], dtype=np.float64),
            w_hi=d.get("w_hi"),
            w_lo=d.get("w_lo"),
            assignment=None if assignment is None else tuple(tuple(int(c) for c in a) for a in assignment),
            seed=d.get("seed"),
        )


def _check_assignment(assignment, n_classes, n_heads):
    if len(assignment) != n_heads:
        raise ValueError(f"assignment lists {len(assignment)} heads, expected {n_heads}")
    seen = sorted(c for block in assignment for c in block)
    if seen != list(range(n_classes)):
        raise ValueError("assignment must specialise every class in exactly one head")
    q = n_classes // n_heads
    for block in assignment:
        if len(block) not in (q, q + 1):
            raise ValueError(f"each head must specialise {q} or {q + 1} classes, got {len(block)}")


def build_weight_scheme(n_classes, n_heads, w_hi=None, w_lo=None, seed=0, assignment=None) -> WeightScheme:
    """Deal classes to heads and build complementary weight vectors.

    Classes are shuffled with ``seed`` and dealt to heads in contiguous
    blocks of ``K // M``; the ``K % M`` leftover classes go one each to
    distinct randomly chosen heads. A class gets ``w_hi`` in the head that
    specialises it and ``w_lo`` everywhere else. ``w_hi`` and ``w_lo`` default
    to ``M`` and ``1/M``.

    Pass ``assignment`` (one class list per head) to fix the dealing instead.
    """
    K, M = int(n_classes), int(n_heads)
    if M < 1 or K < 1:
        raise ValueError("n_classes and n_heads must be positive")
    if M > K:
        raise ValueError(f"need n_heads <= n_classes, got M={M} > K={K}")
    w_hi = float(M) if w_hi is None else float(w_hi)
    w_lo = 1.0 / M if w_lo is None else float(w_lo)
    if not (w_lo > 0 and w_hi > 0):
        raise ValueError("weights must be positive")
    if M > 1 and not w_hi > w_lo:
        raise ValueError(f"need w_hi > w_lo, got w_hi={w_hi}, w_lo={w_lo}")

    if assignment is None:
        rng = np.random.default_rng(seed)
        perm = rng.permutation(K)
        q, r = divmod(K, M)
        blocks = [list(perm[m * q:(m + 1) * q]) for m in range(M)]
        if r:
            heads = rng.choice(M, size=r, replace=False)
            for c, m in zip(perm[M * q:], heads):
                blocks[m].append(c)
        assignment = tuple(tuple(sorted(int(c) for c in b)) for b in blocks)
    else:
        assignment = tuple(tuple(sorted(int(c) for c in b)) for b in assignment)
    _check_assignment(assignment, K, M)

    vectors = np.full((M, K), w_lo)
    for m, block in enumerate(assignment):
        vectors[m, list(block)] = w_hi
    return WeightScheme(K, M, vectors, w_hi=w_hi, w_lo=w_lo, assignment=assignment, seed=seed)


def uniform_scheme(n_classes, n_heads, weight=1.0) -> WeightScheme:
    """Every head gets the same constant weight vector (2HSL uses all-ones)."""
    vectors = np.full((int(n_heads), int(n_classes)), float(weight))
    return WeightScheme(int(n_classes), int(n_heads), vectors, w_hi=float(weight), w_lo=float(weight))


@dataclass
class MultiHeadModel:
    backbone: MlpParams
    heads: list[Layer]
    scheme: WeightScheme
    averaging: str = "prob"

    def __post_init__(self):
        self.averaging = _normalize_mode(self.averaging)
        if len(self.heads) != self.scheme.n_heads:
            raise ValueError(f"{len(self.heads)} heads but scheme has {self.scheme.n_heads}")
        for h in self.heads:
            if h.in_features != self.backbone.out_features:
                raise ValueError("every head must read the backbone feature width")
            if h.out_features != self.scheme.n_classes:
                raise ValueError("head output width must equal the number of classes")

    @property
    def n_heads(self) -> int:
        return len(self.heads)

    @property
    def n_classes(self) -> int:
        return self.scheme.n_classes

    def arrays(self) -> list[np.ndarray]:
        """Backbone arrays followed by ``[W, b]`` of every head (views)."""
        out = self.backbone.arrays()
        for h in self.heads:
            out.extend([h.W, h.b])
        return out

    def copy(self) -> "MultiHeadModel":
        return MultiHeadModel(
            self.backbone.copy(),
            [Layer(h.W.copy(), h.b.copy()) for h in self.heads],
            self.scheme,
            self.averaging,
        )


def init_multihead(n_features, hidden, scheme: WeightScheme, averaging="prob", seed=0) -> MultiHeadModel:
    """Seeded initialisation. Backbone and each head draw from separate streams."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = [np.random.default_rng(s) for s in ss.spawn(1 + scheme.n_heads)]
    hidden = list(hidden)
    if not hidden:
        raise ValueError("the backbone needs at least one hidden layer")
    backbone = init_mlp([n_features, *hidden], streams[0])
    N, K = hidden[-1], scheme.n_classes
    heads = [Layer(glorot_uniform(rng, K, N), np.zeros(K)) for rng in streams[1:]]
    return MultiHeadModel(backbone, heads, scheme, averaging)


@dataclass
class HeadOutputs:
    z_heads: np.ndarray  # (M, B, K)
    p_heads: np.ndarray  # (M, B, K)
    p_mean: np.ndarray  # (B, K)
    z_mean: np.ndarray  # (B, K)
    averaging: str = "prob"

    @property
    def n_heads(self) -> int:
        return self.z_heads.shape[0]

    @property
    def batch_size(self) -> int:
        return self.z_heads.shape[1]


@dataclass
class MultiHeadTrace:
    backbone: ForwardTrace
    features: np.ndarray
    extra: dict = field(default_factory=dict)


def outputs_from_logits(z_heads, averaging="prob") -> HeadOutputs:
    """Build :class:`HeadOutputs` from raw per-head logits.

    ``z_heads`` has shape ``(M, B, K)``; a ``(M, K)`` array is read as a
    single sample.
    """
    mode = _normalize_mode(averaging)
    z = np.asarray(z_heads, dtype=np.float64)
    if z.ndim == 2:
        z = z[:, None, :]
    if z.ndim != 3:
        raise ValueError(f"z_heads must have shape (M, B, K), got {z.shape}")
    p = softmax(z)
    z_mean = z.mean(axis=0)
    p_mean = p.mean(axis=0) if mode == "prob" else softmax(z_mean)
    return HeadOutputs(z, p, p_mean, z_mean, mode)


def _head_logits(model: MultiHeadModel, features):
    return np.stack([features @ h.W.T + h.b for h in model.heads])


def forward(model: MultiHeadModel, X, return_trace=False, averaging=None):
    """Run backbone and heads on a batch ``X``.

    ``averaging`` overrides ``model.averaging`` for this call only.
    """
    features, bb_trace = mlp_forward(model.backbone, X)
    mode = model.averaging if averaging is None else averaging
    out = outputs_from_logits(_head_logits(model, features), mode)
    if return_trace:
        return out, MultiHeadTrace(bb_trace, features)
    return out


def weighted_ce(p, y, w):
    """``-w[y] * log(p[y])`` with ``p[y]`` clamped at ``1e-12``.

    Works on a single vector or row-wise on a batch (then returns one loss
    per row).
    """
    p = np.asarray(p, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    y = np.asarray(y)
    if p.ndim == 1:
        return float(-w[y] * np.log(max(p[y], LOG_CLAMP)))
    py = np.take_along_axis(p, y[:, None], axis=1)[:, 0]
    return -w[y] * np.log(np.maximum(py, LOG_CLAMP))


def _check_heads(outputs: HeadOutputs, scheme: WeightScheme):
    if outputs.n_heads != scheme.n_heads:
        raise ValueError(f"outputs have {outputs.n_heads} heads, scheme has {scheme.n_heads}")
    if outputs.p_mean.shape[-1] != scheme.n_classes:
        raise ValueError("outputs and scheme disagree on the number of classes")


def _labels(y, batch_size):
    y = np.atleast_1d(np.asarray(y))
    if y.shape != (batch_size,):
        raise ValueError(f"expected {batch_size} labels, got shape {y.shape}")
    return y.astype(np.int64)


def mh_loss(outputs: HeadOutputs, y, scheme: WeightScheme) -> float:
    """Multi-head loss averaged over the batch."""
    _check_heads(outputs, scheme)
    y = _labels(y, outputs.batch_size)
    ones = np.ones(scheme.n_classes)
    total = weighted_ce(outputs.p_mean, y, ones)
    for m in range(outputs.n_heads):
        total = total + weighted_ce(outputs.p_heads[m], y, scheme.vectors[m])
    return float(np.mean(total))


def mh_grad_logits(outputs: HeadOutputs, y, scheme: WeightScheme) -> np.ndarray:
    """Per-sample gradient of the multi-head loss w.r.t. each head's logits.

    Returns an ``(M, B, K)`` array (not divided by the batch size).
    Only defined for prob averaging.
    """
    if outputs.averaging != "prob":
        raise ValueError(
            "mh_grad_logits needs prob-averaged outputs; logit averaging is trained "
            "through logit_average_grad_logits"
        )
    _check_heads(outputs, scheme)
    y = _labels(y, outputs.batch_size)
    Y = one_hot(y, scheme.n_classes)
    py = np.take_along_axis(outputs.p_heads, np.broadcast_to(y[None, :, None], (outputs.n_heads, len(y), 1)), axis=2)
    share = py / py.sum(axis=0, keepdims=True)  # (M, B, 1)
    w_y = scheme.vectors[:, y][:, :, None]  # (M, B, 1)
    return (w_y + share) * (outputs.p_heads - Y[None])


def logit_average_grad_logits(outputs: HeadOutputs, y, scheme: WeightScheme) -> np.ndarray:
    """Gradient for logit averaging: ``(p_mean - y) / M + w^m[y] (p^m - y)``."""
    if outputs.averaging != "logit":
        raise ValueError("outputs are not logit-averaged")
    _check_heads(outputs, scheme)
    y = _labels(y, outputs.batch_size)
    Y = one_hot(y, scheme.n_classes)
    w_y = scheme.vectors[:, y][:, :, None]
    return (outputs.p_mean - Y)[None] / outputs.n_heads + w_y * (outputs.p_heads - Y[None])


def backprop_logit_grads(model: MultiHeadModel, trace: MultiHeadTrace, grad_z) -> list[np.ndarray]:
    """Map logit gradients ``(M, B, K)`` to gradients for :meth:`MultiHeadModel.arrays`.

    The backbone receives the sum over heads of ``grad_z[m] @ W^m``.
    Nothing is rescaled here.
    """
    grad_z = np.asarray(grad_z, dtype=np.float64)
    feats = trace.features
    if grad_z.shape != (model.n_heads, feats.shape[0], model.n_classes):
        raise ValueError(f"grad_z shape {grad_z.shape} does not match the model and trace")
    head_grads = []
    g_feat = np.zeros_like(feats)
    for m, h in enumerate(model.heads):
        head_grads.extend([grad_z[m].T @ feats, grad_z[m].sum(axis=0)])
        g_feat += grad_z[m] @ h.W
    bb_grads, _ = mlp_backward(model.backbone, trace.backbone, g_feat)
    return bb_grads + head_grads


def backward(model: MultiHeadModel, trace: MultiHeadTrace, outputs: HeadOutputs, y, scheme=None):
    """Gradients of the batch-mean multi-head loss for every parameter array."""
    scheme = model.scheme if scheme is None else scheme
    if trace.features.shape[0] != outputs.batch_size or not np.array_equal(
        _head_logits(model, trace.features), outputs.z_heads
    ):
        raise ValueError("trace does not match these outputs (stale trace or modified parameters)")
    if outputs.averaging == "prob":
        gz = mh_grad_logits(outputs, y, scheme)
    else:
        gz = logit_average_grad_logits(outputs, y, scheme)
    return backprop_logit_grads(model, trace, gz / outputs.batch_size)


def predict(model: MultiHeadModel, X):
    """Return ``(p_mean, confidence, predicted_class)``; ties go to the lowest index."""
    p = forward(model, X).p_mean
    return p, p.max(axis=1), p.argmax(axis=1)
