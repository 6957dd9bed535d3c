"""Finite-difference verification of tape gradients.

This is the independent oracle used throughout the test suite: analytic
gradients from ``backward`` are compared against central differences of the
same scalar function, parameter by parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, UsageError
from .tensor import Tape, Tensor, backward

# Entries where both gradients are below this magnitude are compared as
# zero-vs-zero (pass); dead ReLU regions land here.
_ZERO_FLOOR = 1e-6


@dataclass
class CheckReport:
    """Per-parameter maximum relative error between analytic and numeric."""

    per_param: dict = field(default_factory=dict)
    max_rel_error: float = 0.0
    worst_param: str = ""

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance

    def summary(self) -> str:
        return f"max relative error {self.max_rel_error:.3e} ({self.worst_param})"


def _scalar(t: Tensor) -> float:
    if t.size != 1:
        raise UsageError(f"finite_diff_check: f must return a scalar, got {t.shape}")
    return float(t.data.reshape(-1)[0])


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric)
    rel = np.where(scale > _ZERO_FLOOR, err / np.maximum(scale, _ZERO_FLOOR), 0.0)
    return float(rel.max()) if rel.size else 0.0


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[tuple[str, Tensor]],
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
) -> CheckReport:
    """Compare tape gradients of ``f`` against central differences.

    ``f`` is a deterministic closure over the given parameter tensors and
    returns a scalar loss. Central differences are taken per coordinate:
    (f(p+eps) - f(p-eps)) / (2 eps), evaluated without a tape.

    Relative error per entry is |a - n| / max(|a|, |n|), with entries where
    both magnitudes are below 1e-6 counted as exact (zero-vs-zero).
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise UsageError(f"epsilon {epsilon} outside [1e-7, 1e-4]")
    params = list(params)
    for name, p in params:
        if not isinstance(p, Tensor) or not p.requires_grad:
            raise UsageError(f"parameter {name!r} must be a requires_grad tensor")
        p.zero_grad()

    with Tape():
        loss = f()
        if not np.isfinite(loss.data).all():
            raise NumericError("finite_diff_check: loss is non-finite")
        backward(loss)

    analytic = {}
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.isfinite(g).all():
            raise NumericError(f"finite_diff_check: non-finite gradient for {name!r}")
        analytic[name] = g.copy()
        p.zero_grad()

    report = CheckReport()
    for name, p in params:
        flat = p.data.reshape(-1)
        if flat.size and not np.shares_memory(flat, p.data):
            raise UsageError(f"parameter {name!r} must be a contiguous array")
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = _scalar(f())
            flat[i] = orig - epsilon
            lo = _scalar(f())
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericError(f"finite_diff_check: non-finite probe for {name!r}")
            numeric[i] = (hi - lo) / (2.0 * epsilon)
        rel = _rel_error(analytic[name].reshape(-1), numeric)
        report.per_param[name] = rel
        if rel >= report.max_rel_error:
            report.max_rel_error = rel
            report.worst_param = name
    return report
