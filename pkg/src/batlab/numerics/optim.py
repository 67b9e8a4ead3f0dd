"""AdamW with decoupled weight decay, plus the warmup+cosine LR schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, NumericsError, ParameterError


@dataclass
class OptimState:
    """Per-parameter moment accumulators and the shared step counter."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class AdamW:
    """Decoupled-weight-decay Adam operating on a dict of numpy parameters."""

    def __init__(self, params: dict, lr: float, beta1: float = 0.9, beta2: float = 0.95,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        if lr <= 0:
            raise ParameterError(f"lr must be > 0, got {lr}")
        self.params = params
        self.state = OptimState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)
        for name, p in params.items():
            self.state.m[name] = np.zeros_like(p)
            self.state.v[name] = np.zeros_like(p)

    def step(self, grads: dict, lr: float | None = None) -> None:
        """One update. ``lr`` overrides the stored rate (for schedules).

        Weight decay is applied to the parameter directly (never through the
        gradient); moments are bias-corrected. A NaN/Inf gradient aborts with
        the parameter's name.
        """
        s = self.state
        s.step += 1
        lr_t = s.lr if lr is None else lr
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p)
            if g.shape != p.shape:
                raise DimensionError(f"gradient for {name!r} has shape {g.shape}, expected {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NumericsError(f"non-finite gradient for parameter {name!r} at step {s.step}")
            m = s.m[name]
            v = s.v[name]
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * (g * g)
            m_hat = m / (1.0 - s.beta1 ** s.step)
            v_hat = v / (1.0 - s.beta2 ** s.step)
            if s.weight_decay != 0.0:
                p -= lr_t * s.weight_decay * p
            p -= lr_t * m_hat / (np.sqrt(v_hat) + s.eps)

    def state_arrays(self) -> dict:
        """Moment tensors under 'adam.m.'/'adam.v.' prefixes, for checkpoints."""
        out = {}
        for name in self.params:
            out[f"adam.m.{name}"] = self.state.m[name]
            out[f"adam.v.{name}"] = self.state.v[name]
        return out

    def load_state_arrays(self, arrays: dict, step: int) -> None:
        for name in self.params:
            self.state.m[name] = arrays[f"adam.m.{name}"].copy()
            self.state.v[name] = arrays[f"adam.v.{name}"].copy()
        self.state.step = step


def lr_schedule(step: int, peak_lr: float, warmup_steps: int, total_steps: int,
                start_lr: float = 1e-6, min_lr: float = 1e-6) -> float:
    """Linear warmup from start_lr to peak_lr, then cosine decay to min_lr."""
    if step < warmup_steps:
        frac = step / max(1, warmup_steps)
        return start_lr + (peak_lr - start_lr) * frac
    span = max(1, total_steps - warmup_steps)
    frac = min(1.0, (step - warmup_steps) / span)
    return min_lr + 0.5 * (peak_lr - min_lr) * (1.0 + np.cos(np.pi * frac))
