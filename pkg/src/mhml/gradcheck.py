"""Central finite differences and randomized checks of the head gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import heads as _heads
from .heads import WeightScheme, build_weight_scheme, mh_loss, outputs_from_logits
from .nn import one_hot

__all__ = [
    "GradCheckReport",
    "NonFiniteError",
    "finite_diff",
    "rel_err",
    "verify_property1",
    "verify_property2",
    "verify_symmetry",
]

DEFAULT_EPS = 1e-5

# Analytic gradient under test. Tests swap this out to exercise the failure path.
_analytic_grad = _heads.mh_grad_logits


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class GradCheckReport:
    name: str
    tol: float
    trials: int = 0
    max_abs_err: float = 0.0
    max_rel_err: float = 0.0
    failures: list[tuple] = field(default_factory=list)  # (trial, coordinate, analytic, numeric)

    @property
    def ok(self) -> bool:
        return not self.failures

    def record(self, trial, analytic, numeric, rel=None):
        analytic = np.asarray(analytic, dtype=np.float64)
        numeric = np.asarray(numeric, dtype=np.float64)
        abs_err = np.abs(analytic - numeric)
        rel = rel_err(analytic, numeric) if rel is None else rel
        self.max_abs_err = max(self.max_abs_err, float(abs_err.max(initial=0.0)))
        self.max_rel_err = max(self.max_rel_err, float(np.max(rel, initial=0.0)))
        for idx in zip(*np.nonzero(rel > self.tol)):
            self.failures.append((trial, tuple(int(i) for i in idx), float(analytic[idx]), float(numeric[idx])))

    def summary_row(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return (
            f"{self.name:<12} trials={self.trials:<5d} max_abs={self.max_abs_err:.3e} "
            f"max_rel={self.max_rel_err:.3e} tol={self.tol:.1e} failures={len(self.failures):<4d} {status}"
        )


def rel_err(a, n):
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(1e-8, np.maximum(np.abs(a), np.abs(n)))


def finite_diff(fn, x, eps=DEFAULT_EPS):
    """Central-difference gradient of scalar ``fn`` at ``x`` (any shape).

    Raises :class:`NonFiniteError` if ``fn`` is not finite at a probe point.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = fn(x)
        flat[i] = orig - eps
        f_minus = fn(x)
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError(
                f"non-finite function value at coordinate {np.unravel_index(i, x.shape)}: "
                f"f(x+eps)={f_plus}, f(x-eps)={f_minus}"
            )
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def _random_instance(rng, k_range=(2, 6), m_range=(1, 4)):
    K = int(rng.integers(k_range[0], k_range[1] + 1))
    M = int(rng.integers(m_range[0], min(m_range[1], K) + 1))
    z = rng.uniform(-3.0, 3.0, size=(M, K))
    y = int(rng.integers(K))
    return K, M, z, y


def _check_logit_grad(report, trial, z, y, scheme, eps):
    def loss(zz):
        return mh_loss(outputs_from_logits(zz), [y], scheme)

    analytic = _analytic_grad(outputs_from_logits(z), [y], scheme)[:, 0, :]
    numeric = finite_diff(loss, z, eps)
    report.record(trial, analytic, numeric)


def verify_property1(trials=100, tol=1e-6, seed=0, eps=DEFAULT_EPS) -> GradCheckReport:
    """Gradient of CE on the averaged prediction only (all head weights zero)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    report = GradCheckReport("property1", tol)
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        K, M, z, y = _random_instance(rng)
        scheme = WeightScheme(K, M, np.zeros((M, K)))
        _check_logit_grad(report, t, z, y, scheme, eps)
        report.trials += 1
    return report


def verify_property2(trials=100, tol=1e-6, seed=0, eps=DEFAULT_EPS) -> GradCheckReport:
    """Gradient of the full multi-head loss under random weight schemes."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    report = GradCheckReport("property2", tol)
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        K, M, z, y = _random_instance(rng)
        w_lo = float(rng.uniform(0.1, 1.0))
        w_hi = w_lo + float(rng.uniform(0.1, 4.0))
        scheme = build_weight_scheme(K, M, w_hi, w_lo, seed=int(rng.integers(2**31)))
        _check_logit_grad(report, t, z, y, scheme, eps)
        report.trials += 1
    return report


def verify_symmetry(trials=100, seed=0, tol_equal=1e-12, tol_diff=1e-9) -> GradCheckReport:
    """Tied heads: equal weights give equal gradients, unequal weights differ
    in L1 by ``|dw_y| * ||p - onehot(y)||_1``.

    ``max_rel_err`` holds the largest absolute deviation from the expected
    L1 difference, compared against ``tol_equal`` or ``tol_diff``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    report = GradCheckReport("symmetry", tol_diff)
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        K, M, z, y = _random_instance(rng, m_range=(2, 4))
        tied = np.repeat(z[:1], M, axis=0)
        out = outputs_from_logits(tied)
        p = out.p_heads[0, 0]
        dir_l1 = float(np.abs(p - one_hot(y, K)).sum())

        # equal weights in every head
        w = rng.uniform(0.1, 4.0, size=K)
        g = _analytic_grad(out, [y], WeightScheme(K, M, np.tile(w, (M, 1))))[:, 0, :]
        for m in range(1, M):
            dev = float(np.abs(g[m] - g[0]).sum())
            _record_dev(report, t, (0, m), dev, 0.0, tol_equal)

        # distinct weights per head
        W = rng.uniform(0.1, 4.0, size=(M, K))
        g = _analytic_grad(out, [y], WeightScheme(K, M, W))[:, 0, :]
        for m in range(1, M):
            got = float(np.abs(g[m] - g[0]).sum())
            expected = abs(W[m, y] - W[0, y]) * dir_l1
            _record_dev(report, t, (0, m), got, expected, tol_diff)
        report.trials += 1
    return report


def _record_dev(report, trial, coord, got, expected, tol):
    dev = abs(got - expected)
    report.max_abs_err = max(report.max_abs_err, dev)
    report.max_rel_err = max(report.max_rel_err, dev)
    if dev > tol:
        report.failures.append((trial, coord, got, expected))
