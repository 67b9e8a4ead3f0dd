"""Finite-difference verification of tape gradients.

``grad_check`` runs entirely in 64-bit mode: it evaluates the function on a
fresh tape for the analytic pass, then perturbs every parameter element with
central differences and compares. Relative error uses
|a - n| / max(|a|, |n|, 1e-8).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NonDeterministicError
from .tensor import Tape, using_dtype


@dataclass
class GradCheckReport:
    per_param: dict
    max_rel_err: float
    worst_param: str

    def __str__(self):
        lines = [f"grad_check: max rel err {self.max_rel_err:.3e} (worst: {self.worst_param})"]
        for name, err in sorted(self.per_param.items()):
            lines.append(f"  {name}: {err:.3e}")
        return "\n".join(lines)


def _eval(f, params: dict) -> tuple:
    tape = Tape()
    handles = {name: tape.param(name, arr) for name, arr in params.items()}
    out = f(tape, handles)
    return tape, out


def grad_check(f, params: dict, eps: float = 1e-5) -> GradCheckReport:
    """Compare tape gradients of a scalar function against central differences.

    f(tape, handles) -> scalar Tensor, where handles maps each name in
    ``params`` to a registered parameter. f must be deterministic; two
    forward passes are compared to detect violations.
    """
    with using_dtype("float64"):
        params64 = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

        _, out_a = _eval(f, params64)
        _, out_b = _eval(f, params64)
        if not np.array_equal(out_a.data, out_b.data):
            raise NonDeterministicError("two forward passes differ; grad_check requires determinism")

        tape, out = _eval(f, params64)
        tape.backward(out)
        analytic = tape.gradients()

        per_param = {}
        for name, base in params64.items():
            flat = base.reshape(-1)
            num = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                _, hi = _eval(f, params64)
                flat[i] = orig - eps
                _, lo = _eval(f, params64)
                flat[i] = orig
                num[i] = (hi.item() - lo.item()) / (2.0 * eps)
            a = analytic[name].reshape(-1)
            denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-8)
            per_param[name] = float(np.max(np.abs(a - num) / denom)) if flat.size else 0.0

    worst = max(per_param, key=per_param.get)
    return GradCheckReport(per_param=per_param, max_rel_err=per_param[worst], worst_param=worst)
