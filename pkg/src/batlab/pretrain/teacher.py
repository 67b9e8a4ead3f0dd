"""EMA teacher state and regression-target generation.

The teacher is an exponential moving average of the student:
theta_bar(t) = lambda * theta_bar(t-1) + (1 - lambda) * theta(t), applied
once per optimizer step, after the student update. Targets are built from
the teacher's per-layer patch embeddings (cls rows dropped) with the
two-stage standardization: per channel across tokens, layer average, then
per token across features. The global target o is the token mean of z.

Everything here is plain numpy; no gradients ever flow into the teacher.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..encoder.model import LayerStack, collect_stack
from ..errors import DegenerateInputWarning, DimensionError


@dataclass
class LambdaSchedule:
    """Linear anneal from start to end over anneal_steps, then fixed."""

    start: float = 0.999
    end: float = 0.9999
    anneal_steps: int = 0

    def value(self, step: int) -> float:
        if self.anneal_steps <= 0 or step >= self.anneal_steps:
            return self.end if self.anneal_steps > 0 else self.start
        frac = step / self.anneal_steps
        return self.start + (self.end - self.start) * frac


@dataclass
class TeacherState:
    weights: dict
    lam: LambdaSchedule = field(default_factory=LambdaSchedule)
    step: int = 0

    @classmethod
    def from_student(cls, student_weights: dict, lam: LambdaSchedule | None = None) -> "TeacherState":
        return cls(weights={k: v.copy() for k, v in student_weights.items()},
                   lam=lam or LambdaSchedule(), step=0)


def ema_update(state: TeacherState, student_weights: dict) -> TeacherState:
    """In-place convex blend with the schedule's current decay."""
    if set(state.weights) != set(student_weights):
        raise DimensionError("teacher/student parameter sets differ")
    lam = state.lam.value(state.step)
    for name, w in state.weights.items():
        s = student_weights[name]
        if s.shape != w.shape:
            raise DimensionError(f"teacher/student shape drift on {name!r}: {w.shape} vs {s.shape}")
        w *= lam
        w += (1.0 - lam) * s
    state.step += 1
    return state


@dataclass
class Targets:
    z: np.ndarray  # (N, D) or (B, N, D) target patch embeddings
    o: np.ndarray  # (D,) or (B, D) global target, token mean of z


def _standardize(x: np.ndarray, axis: int, eps: float) -> np.ndarray:
    mu = x.mean(axis=axis, keepdims=True)
    var = x.var(axis=axis, keepdims=True)
    if np.any(var < eps):
        warnings.warn("near-zero variance during target standardization; eps-guarded",
                      DegenerateInputWarning)
    return (x - mu) / np.sqrt(var + eps)


def make_targets(traces_or_stack, source: str = "eob", top_k: int | None = None,
                 eps: float = 1e-6) -> Targets:
    """Build (z, o) regression targets from a full-input teacher forward.

    Accepts the trace list of forward_full or a ready LayerStack. cls rows
    are excluded before processing; all arithmetic runs without gradient
    tracking.
    """
    if isinstance(traces_or_stack, LayerStack):
        stack = traces_or_stack
    else:
        stack = collect_stack(traces_or_stack, tap=source)
    patch = stack.patch  # (L, ..., N, D)
    if top_k is not None:
        patch = patch[-top_k:]
    per_layer = _standardize(patch, axis=-2, eps=eps)  # across the token axis
    averaged = per_layer.mean(axis=0)
    z = _standardize(averaged, axis=-1, eps=eps)  # across the feature axis
    o = z.mean(axis=-2)
    return Targets(z=z, o=o)
