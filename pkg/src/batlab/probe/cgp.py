"""Convex gated probing over frozen layer stacks.

The probe owns K prototype directions, a length-L gate vector and a linear
classifier on 3K pooled similarity features:

    normalize every layer's patch/cls embedding and the prototypes (L2),
    mix layers with alpha = softmax(gate),
    cosine-score tokens against prototypes,
    pool each prototype's token scores to [min, max] and append the cls
    similarity, giving exactly 3K features for the classifier.

The backbone is never touched: stacks enter as constants, gradients reach
only (prototypes, gate, classifier).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..encoder.model import LayerStack
from ..errors import DegenerateInputWarning, DimensionError, ParameterError
from ..numerics import Tape, ops
from ..numerics.tensor import Tensor, constant, get_dtype


@dataclass
class ProbeConfig:
    kind: str = "cgp"  # cgp | linear
    n_prototypes: int = 10000
    steps: int = 2000
    lr: float = 1e-3
    weight_decay_cgp: float = 0.5
    weight_decay_linear: float = 0.005
    batch_size: int = 32
    loss: str = "bce"  # bce (multi-label) | ce (multi-class)
    beta1: float = 0.9
    beta2: float = 0.999
    warmup_steps: int = 50
    min_lr: float = 1e-6
    eval_every: int = 100
    pooling: str = "cls"  # linear probes: cls | mean_patch

    def __post_init__(self):
        if self.lr <= 0:
            raise ParameterError(f"probe lr must be > 0, got {self.lr}")
        if self.loss not in ("bce", "ce"):
            raise ParameterError(f"probe loss must be bce or ce, got {self.loss!r}")

    @property
    def weight_decay(self) -> float:
        return self.weight_decay_cgp if self.kind == "cgp" else self.weight_decay_linear


@dataclass
class ProbeState:
    prototypes: np.ndarray  # (K, D)
    gate: np.ndarray  # (L,)
    w: np.ndarray  # (C, 3K)
    b: np.ndarray  # (C,)
    history: list = field(default_factory=list)

    @property
    def n_prototypes(self) -> int:
        return self.prototypes.shape[0]

    def copy(self) -> "ProbeState":
        return ProbeState(self.prototypes.copy(), self.gate.copy(), self.w.copy(),
                          self.b.copy(), list(self.history))


def init_probe_state(n_layers: int, dim: int, n_prototypes: int, n_classes: int,
                     rng: np.random.Generator) -> ProbeState:
    """Prototypes uniform on the unit sphere, neutral gate, zero classifier."""
    p = rng.normal(size=(n_prototypes, dim))
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    return ProbeState(
        prototypes=p.astype(get_dtype()),
        gate=np.zeros(n_layers, dtype=get_dtype()),
        w=np.zeros((n_classes, 3 * n_prototypes), dtype=get_dtype()),
        b=np.zeros(n_classes, dtype=get_dtype()),
    )


def _unit_rows(x: np.ndarray, axis: int = -1) -> np.ndarray:
    norm = np.linalg.norm(x, axis=axis, keepdims=True)
    if np.any(norm == 0):
        warnings.warn("zero rows passed through normalize_stack", DegenerateInputWarning)
    return x / np.where(norm == 0, 1.0, norm)


def normalize_stack(stack: LayerStack) -> tuple[np.ndarray, np.ndarray]:
    """L2-normalize patch and cls embeddings along the feature axis."""
    return _unit_rows(stack.patch), _unit_rows(stack.cls)


def gate_aggregate(z_hat, o_hat, gate: Tensor) -> tuple[Tensor, Tensor]:
    """Convex layer mix: alpha = softmax(gate); z_bar = sum_l alpha_l z_hat_l.

    z_hat: (L, N, D) or (L, B, N, D) constants; outputs (N, D)/(B, N, D) and
    (D,)/(B, D). Every output token lies in the convex hull of unit vectors,
    so its norm is at most 1.
    """
    z_hat = z_hat if isinstance(z_hat, Tensor) else constant(z_hat)
    o_hat = o_hat if isinstance(o_hat, Tensor) else constant(o_hat)
    n_layers = z_hat.shape[0]
    alpha = ops.softmax(gate, axis=-1)
    alpha_row = ops.reshape(alpha, (1, n_layers))
    z_flat = ops.reshape(z_hat, (n_layers, -1))
    o_flat = ops.reshape(o_hat, (n_layers, -1))
    z_bar = ops.reshape(ops.matmul(alpha_row, z_flat), z_hat.shape[1:])
    o_bar = ops.reshape(ops.matmul(alpha_row, o_flat), o_hat.shape[1:])
    return z_bar, o_bar


def prototype_similarity(z_bar: Tensor, o_bar: Tensor, p_hat: Tensor) -> tuple[Tensor, Tensor]:
    """Cosine scores against unit prototypes: s_z = z_bar P^T, s_o = o_bar P^T."""
    pt = ops.transpose(p_hat)
    return ops.matmul(z_bar, pt), ops.matmul(o_bar, pt)


def pool_features(s_z: Tensor, s_o: Tensor) -> Tensor:
    """[min over tokens, max over tokens, cls similarity] -> 3K features."""
    mins = ops.min_along(s_z, axis=-2)
    maxs = ops.max_along(s_z, axis=-2)
    return ops.concat([mins, maxs, s_o], axis=-1)


class CGPModel:
    """Trainable probe parameters plus the batched forward pass."""

    def __init__(self, state: ProbeState):
        self.state = state
        self.params = {
            "prototypes": state.prototypes,
            "gate": state.gate,
            "w": state.w,
            "b": state.b,
        }

    def forward(self, handles: dict, z_hat, o_hat) -> Tensor:
        z_bar, o_bar = gate_aggregate(z_hat, o_hat, handles["gate"])
        p_hat = ops.l2_normalize(handles["prototypes"], axis=-1)
        s_z, s_o = prototype_similarity(z_bar, o_bar, p_hat)
        feats = pool_features(s_z, s_o)
        return ops.add(ops.matmul(feats, ops.transpose(handles["w"])), handles["b"])


def cgp_forward(stack: LayerStack, state: ProbeState, tape: Tape | None = None) -> Tensor:
    """Logits for one frozen stack; differentiable in the probe parameters."""
    n_layers, _, dim = stack.patch.shape
    if state.gate.shape[0] != n_layers:
        raise DimensionError(f"gate has {state.gate.shape[0]} layers, stack has {n_layers}")
    if state.prototypes.shape[1] != dim:
        raise DimensionError(
            f"prototype width {state.prototypes.shape[1]} != embedding width {dim}")
    z_hat, o_hat = normalize_stack(stack)
    model = CGPModel(state)
    if tape is None:
        handles = {k: constant(v, name=k) for k, v in model.params.items()}
    else:
        handles = {k: tape.param(k, v) for k, v in model.params.items()}
    zc = constant(z_hat[:, None].astype(get_dtype()))  # (L, 1, N, D)
    oc = constant(o_hat[:, None].astype(get_dtype()))
    logits = model.forward(handles, zc, oc)
    return ops.reshape(logits, (logits.shape[-1],))


def gate_report(state: ProbeState) -> dict:
    """Convex layer weights and the dominant layer index."""
    g = state.gate.astype(np.float64)
    e = np.exp(g - g.max())
    alpha = e / e.sum()
    return {"alpha": alpha, "argmax_layer": int(np.argmax(alpha))}
