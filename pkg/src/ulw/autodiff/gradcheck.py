"""Central finite-difference verification of recorded gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ulw.autodiff.tensor import Graph, Tensor, no_grad
from ulw.errors import NumericError, UsageError


@dataclass
class GradCheckReport:
    """Per-input worst relative errors between analytic and numeric gradients."""

    per_input: list[float]
    tol: float

    @property
    def max_rel_err(self) -> float:
        return max(self.per_input) if self.per_input else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def __str__(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        errs = ", ".join(f"{e:.3e}" for e in self.per_input)
        return f"grad_check {verdict}: max_rel_err={self.max_rel_err:.3e} tol={self.tol:.1e} [{errs}]"


def _scalar_eval(f, inputs) -> float:
    with no_grad():
        out = f(*inputs)
    if out.size != 1:
        raise UsageError(f"grad_check: f must return a scalar, got shape {out.shape}")
    return float(out.data)


def grad_check(f, inputs: list[Tensor], h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of f against central differences.

    f maps the given tensors to a scalar Tensor and may close over further
    tensors (e.g. frozen weights).  Every input with requires_grad=True is
    checked element by element with a +-h perturbation.  Relative error is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-6); the floor keeps
    finite-difference roundoff on near-zero gradients from reading as failure.
    Run with float64 inputs for tolerances below 1e-3.
    """
    for t in inputs:
        t.grad = None
    with Graph() as graph:
        loss = f(*inputs)
    if loss.size != 1:
        raise UsageError(f"grad_check: f must return a scalar, got shape {loss.shape}")
    if not np.isfinite(loss.data):
        raise NumericError(
            f"grad_check: non-finite loss; ops recorded: {graph.op_kinds()}")
    graph.backward(loss)

    per_input: list[float] = []
    for t in inputs:
        if not t.requires_grad:
            per_input.append(0.0)
            continue
        analytic = t.grad
        if analytic is None or not np.all(np.isfinite(analytic)):
            raise NumericError(
                f"grad_check: non-finite or missing analytic gradient; ops: {graph.op_kinds()}")
        worst = 0.0
        for idx in np.ndindex(*t.shape):
            original = t.data[idx]
            t.data[idx] = original + h
            f_plus = _scalar_eval(f, inputs)
            t.data[idx] = original - h
            f_minus = _scalar_eval(f, inputs)
            t.data[idx] = original
            numeric = (f_plus - f_minus) / (2.0 * h)
            if not np.isfinite(numeric):
                raise NumericError(
                    f"grad_check: non-finite numeric gradient at index {idx}; ops: {graph.op_kinds()}")
            a = float(analytic[idx])
            denom = max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, abs(a - numeric) / denom)
        per_input.append(worst)
    return GradCheckReport(per_input=per_input, tol=tol)
