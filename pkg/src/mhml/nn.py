"""Dense feed-forward engine: ReLU MLP backbone, softmax, manual backprop, SGD.

Everything runs in float64. Weight matrices are stored ``(out, in)`` and a
layer computes ``X @ W.T + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Layer",
    "MlpParams",
    "ForwardTrace",
    "OptimizerState",
    "softmax",
    "log_softmax",
    "one_hot",
    "glorot_uniform",
    "init_mlp",
    "mlp_forward",
    "mlp_backward",
    "sgd_step",
]


def softmax(z):
    """Row-wise softmax with max subtraction.

    Accepts a single logit vector or a ``(n, K)`` batch and returns an array
    of the same shape.
    """
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax input contains non-finite values")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z):
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("log_softmax input contains non-finite values")
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def one_hot(y, n_classes):
    """One-hot encode a label or an array of labels into ``n_classes`` columns."""
    y_arr = np.asarray(y)
    if not np.issubdtype(y_arr.dtype, np.integer):
        if np.any(y_arr != np.round(y_arr)):
            raise ValueError("labels must be integers")
        y_arr = y_arr.astype(np.int64)
    if n_classes < 1:
        raise ValueError(f"n_classes must be >= 1, got {n_classes}")
    if np.any(y_arr < 0) or np.any(y_arr >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes}), got {y_arr!r}")
    out = np.zeros(y_arr.shape + (n_classes,), dtype=np.float64)
    np.put_along_axis(out, y_arr[..., None], 1.0, axis=-1)
    return out


@dataclass
class Layer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)

    @property
    def in_features(self) -> int:
        return self.W.shape[1]

    @property
    def out_features(self) -> int:
        return self.W.shape[0]


@dataclass
class MlpParams:
    """ReLU MLP. Every layer, including the last, is followed by a ReLU."""

    layers: list[Layer]

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_features != nxt.in_features:
                raise ValueError(
                    f"layer dimensions do not chain: {prev.out_features} -> {nxt.in_features}"
                )
        for layer in self.layers:
            if layer.b.shape != (layer.out_features,):
                raise ValueError("bias shape must equal (out_features,)")

    @property
    def in_features(self) -> int:
        return self.layers[0].in_features

    @property
    def out_features(self) -> int:
        return self.layers[-1].out_features

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order ``[W0, b0, W1, b1, ...]`` (views)."""
        out = []
        for layer in self.layers:
            out.extend([layer.W, layer.b])
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([Layer(l.W.copy(), l.b.copy()) for l in self.layers])


@dataclass
class ForwardTrace:
    inputs: list[np.ndarray] = field(default_factory=list)  # input to each layer
    pre: list[np.ndarray] = field(default_factory=list)  # pre-activation of each layer

    @property
    def batch_size(self) -> int:
        return self.inputs[0].shape[0]


@dataclass
class OptimizerState:
    lr: float
    momentum: float
    buffers: list[np.ndarray]

    @classmethod
    def zeros_like(cls, arrays, lr=1e-2, momentum=0.9) -> "OptimizerState":
        return cls(lr=float(lr), momentum=float(momentum), buffers=[np.zeros_like(a) for a in arrays])


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in))


def init_mlp(sizes, rng) -> MlpParams:
    """Initialise an MLP with layer widths ``sizes = [in, h1, ..., hL]``.

    Weights are Glorot-uniform, biases zero. ``rng`` is a seed or a
    ``numpy.random.Generator``.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2:
        raise ValueError("sizes needs at least an input and one output width")
    if any(s < 1 for s in sizes):
        raise ValueError(f"layer widths must be positive, got {sizes}")
    rng = np.random.default_rng(rng)
    layers = [
        Layer(glorot_uniform(rng, n_out, n_in), np.zeros(n_out))
        for n_in, n_out in zip(sizes[:-1], sizes[1:])
    ]
    return MlpParams(layers)


def mlp_forward(params: MlpParams, X) -> tuple[np.ndarray, ForwardTrace]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.in_features:
        raise ValueError(
            f"expected a batch with {params.in_features} columns, got shape {X.shape}"
        )
    trace = ForwardTrace()
    h = X
    for layer in params.layers:
        trace.inputs.append(h)
        a = h @ layer.W.T + layer.b
        trace.pre.append(a)
        h = np.maximum(a, 0.0)
    return h, trace


def mlp_backward(params: MlpParams, trace: ForwardTrace, grad_features):
    """Backpropagate ``dL/dfeatures`` through the MLP.

    Returns ``(grads, grad_input)`` where ``grads`` follows the order of
    :meth:`MlpParams.arrays`. Parameter gradients are summed over the batch;
    callers that want a batch mean scale ``grad_features`` first.
    """
    g = np.asarray(grad_features, dtype=np.float64)
    if len(trace.pre) != len(params.layers):
        raise ValueError("trace does not belong to these parameters")
    if g.shape != trace.pre[-1].shape:
        raise ValueError(f"gradient shape {g.shape} does not match features {trace.pre[-1].shape}")
    grads: list[np.ndarray] = [None] * (2 * len(params.layers))  # type: ignore[list-item]
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        g = g * (trace.pre[i] > 0.0)  # ReLU subgradient is 0 at exactly 0
        grads[2 * i] = g.T @ trace.inputs[i]
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ layer.W
    return grads, g


def sgd_step(arrays, grads, state: OptimizerState):
    """In-place SGD with heavy-ball momentum.

    ``buffer <- momentum * buffer + grad``; ``param <- param - lr * buffer``.
    """
    if not (len(arrays) == len(grads) == len(state.buffers)):
        raise ValueError("parameter, gradient and buffer lists differ in length")
    for p, g, buf in zip(arrays, grads, state.buffers):
        if p.shape != g.shape or p.shape != buf.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, buffer {buf.shape}")
        buf *= state.momentum
        buf += g
        p -= state.lr * buf
    return arrays, state
