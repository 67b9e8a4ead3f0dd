"""ViT encoder with optional sigmoid-gated attention and per-block traces.

Block algebra (post-norm, residual-then-LayerNorm twice):

    z_a = MHSA(x)            attention output (gated when configured)
    z_b = LN1(x + z_a)
    z_c = MLP(z_b)
    z_d = LN2(z_b + z_c)     end-of-block output

All four intermediates are recorded per block so targets and probes can tap
any layer. The gate reads the block's MHSA input x, full width, and
multiplies the head-concatenated attention-weighted values elementwise.

Forward passes run on numerics ops: with constant weights nothing is taped
(teacher / frozen paths); with tape parameters the same code is trainable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, ParameterError
from ..numerics import Tape, ops
from ..numerics.tensor import Tensor, constant, get_dtype


@dataclass
class EncoderConfig:
    depth: int = 4
    width: int = 64
    heads: int = 4
    mlp_ratio: float = 4.0
    gated: bool = True
    patch_dim: int = 256  # k*k
    grid: tuple = (7, 8)
    dropout: float = 0.0

    def __post_init__(self):
        if self.depth < 1:
            raise ParameterError(f"depth must be >= 1, got {self.depth}")
        if self.width % self.heads:
            raise ParameterError(f"width {self.width} not divisible by heads {self.heads}")
        if self.dropout != 0.0:
            raise ParameterError("dropout is fixed at 0 for this laboratory")

    @property
    def n_tokens(self) -> int:
        return self.grid[0] * self.grid[1]

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    @property
    def mlp_width(self) -> int:
        return int(round(self.width * self.mlp_ratio))


@dataclass
class BlockTrace:
    """Recorded intermediates of one block; rows include the cls token."""

    z_a: Tensor
    z_b: Tensor
    z_c: Tensor
    z_d: Tensor
    attn: np.ndarray | None = None  # (B, H, T, T) when retained


@dataclass
class LayerStack:
    """Per-layer patch and cls embeddings of one forward pass (numpy)."""

    patch: np.ndarray  # (L, N, D) or (L, B, N, D)
    cls: np.ndarray  # (L, D) or (L, B, D)
    taps: tuple = ()

    @property
    def depth(self) -> int:
        return self.patch.shape[0]

    def sample(self, i: int) -> "LayerStack":
        if self.patch.ndim != 4:
            raise DimensionError("sample() needs a batched stack")
        return LayerStack(self.patch[:, i], self.cls[:, i], self.taps)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) resampled until within +-bound*std."""
    out = rng.normal(0.0, std, size=shape)
    limit = bound * std
    bad = np.abs(out) > limit
    while np.any(bad):
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > limit
    return out


def _sincos_1d(positions: np.ndarray, dim: int) -> np.ndarray:
    omega = 1.0 / (10000.0 ** (np.arange(dim // 2) / (dim / 2.0)))
    angles = positions[:, None] * omega[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def sincos_pos_2d(grid: tuple, dim: int) -> np.ndarray:
    """Fixed 2-D sinusoidal encodings over a (time, freq) grid, shape (N, dim)."""
    if dim % 4:
        raise ParameterError(f"2-D sincos encoding needs dim divisible by 4, got {dim}")
    gt, gf = grid
    tt, ff = np.meshgrid(np.arange(gt), np.arange(gf), indexing="ij")
    emb_t = _sincos_1d(tt.reshape(-1).astype(np.float64), dim // 2)
    emb_f = _sincos_1d(ff.reshape(-1).astype(np.float64), dim // 2)
    return np.concatenate([emb_t, emb_f], axis=1)


def init_encoder_weights(cfg: EncoderConfig, rng: np.random.Generator) -> dict:
    """Truncated-normal projections, zero biases, unit LN gains, bias-free gate."""
    d, m = cfg.width, cfg.mlp_width
    w = {
        "embed.w": trunc_normal(rng, (cfg.patch_dim, d)),
        "embed.b": np.zeros(d),
        "cls": trunc_normal(rng, (d,)),
    }
    for i in range(cfg.depth):
        p = f"b{i}."
        for name in ("wq", "wk", "wv", "wo"):
            w[p + name] = trunc_normal(rng, (d, d))
            if name != "wk":  # a shared key offset cancels under softmax
                w[p + name.replace("w", "b")] = np.zeros(d)
        if cfg.gated:
            w[p + "wg"] = trunc_normal(rng, (d, d))
        w[p + "ln1.g"] = np.ones(d)
        w[p + "ln1.b"] = np.zeros(d)
        w[p + "ln2.g"] = np.ones(d)
        w[p + "ln2.b"] = np.zeros(d)
        w[p + "mlp.w1"] = trunc_normal(rng, (d, m))
        w[p + "mlp.b1"] = np.zeros(m)
        w[p + "mlp.w2"] = trunc_normal(rng, (m, d))
        w[p + "mlp.b2"] = np.zeros(d)
    return {k: v.astype(get_dtype()) for k, v in w.items()}


def wrap_weights(weights: dict, tape: Tape | None = None, prefix: str = "") -> dict:
    """Lift numpy weights to Tensors: tape params (trainable) or constants."""
    if tape is None:
        return {k: constant(v, name=prefix + k) for k, v in weights.items()}
    return {k: tape.param(prefix + k, v) for k, v in weights.items()}


def embed_tokens(patches, weights: dict, cfg: EncoderConfig, visible=None) -> Tensor:
    """Project patches, add grid-position encodings, prepend the cls token.

    patches: (B, N, k*k) or (N, k*k); when ``visible`` indices are given only
    those rows are embedded, but position encodings follow the original grid
    index, never the visible rank. Output is (B, n+1, D) / (n+1, D).
    """
    x = patches if isinstance(patches, Tensor) else constant(patches)
    squeeze = x.ndim == 2
    if squeeze:
        x = ops.reshape(x, (1,) + x.shape)
    pos = sincos_pos_2d(cfg.grid, cfg.width).astype(get_dtype())
    if visible is not None:
        visible = np.asarray(visible)
        if visible.min() < 0 or visible.max() >= cfg.n_tokens:
            raise DimensionError("mask plan references positions outside the grid")
        x = ops.gather_tokens(x, visible)
        pos = pos[visible]  # (n, D) or (B, n, D); indexed by grid position
    tok = ops.add(ops.add(ops.matmul(x, weights["embed.w"]), weights["embed.b"]), constant(pos))
    cls = ops.reshape(weights["cls"], (1, 1, cfg.width))
    cls_rows = ops.add(cls, constant(np.zeros((tok.shape[0], 1, cfg.width), dtype=get_dtype())))
    out = ops.concat([cls_rows, tok], axis=1)
    return ops.reshape(out, out.shape[1:]) if squeeze else out


def mhsa_forward(x: Tensor, weights: dict, cfg: EncoderConfig, prefix: str = "",
                 retain_attn: bool = False) -> tuple:
    """Multi-head self-attention over (B, T, D) tokens.

    Ungated: O = (softmax(Q K^T / sqrt(d_h)) V) W_O.
    Gated:   the same attention-weighted values are multiplied elementwise by
    sigma(x W_G) before the output projection.
    """
    b, t, d = x.shape
    h, dh = cfg.heads, cfg.head_dim

    def proj(name, bias=None):
        z = ops.matmul(x, weights[prefix + name])
        return z if bias is None else ops.add(z, weights[prefix + bias])

    def split_heads(z):
        return ops.transpose(ops.reshape(z, (b, t, h, dh)), (0, 2, 1, 3))

    q = split_heads(proj("wq", "bq"))
    k = split_heads(proj("wk"))
    v = split_heads(proj("wv", "bv"))
    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    attn = ops.softmax(scores, axis=-1)
    vbar = ops.reshape(ops.transpose(ops.matmul(attn, v), (0, 2, 1, 3)), (b, t, d))
    if cfg.gated:
        gate = ops.sigmoid(ops.matmul(x, weights[prefix + "wg"]))
        vbar = ops.mul(gate, vbar)
    z_a = ops.add(ops.matmul(vbar, weights[prefix + "wo"]), weights[prefix + "bo"])
    maps = attn.data.copy() if retain_attn else None
    return z_a, maps


def encoder_block(x: Tensor, weights: dict, cfg: EncoderConfig, prefix: str = "",
                  retain_attn: bool = False, eps: float = 1e-6) -> BlockTrace:
    z_a, maps = mhsa_forward(x, weights, cfg, prefix=prefix, retain_attn=retain_attn)
    z_b = ops.layer_norm(ops.add(x, z_a), weights[prefix + "ln1.g"], weights[prefix + "ln1.b"], eps)
    hidden = ops.gelu(ops.add(ops.matmul(z_b, weights[prefix + "mlp.w1"]), weights[prefix + "mlp.b1"]))
    z_c = ops.add(ops.matmul(hidden, weights[prefix + "mlp.w2"]), weights[prefix + "mlp.b2"])
    z_d = ops.layer_norm(ops.add(z_b, z_c), weights[prefix + "ln2.g"], weights[prefix + "ln2.b"], eps)
    return BlockTrace(z_a=z_a, z_b=z_b, z_c=z_c, z_d=z_d, attn=maps)


def forward_full(patches, cfg: EncoderConfig, weights: dict, mask=None,
                 retain_attn: bool = False) -> tuple:
    """Run embed + all blocks; returns (final tokens, list of BlockTrace).

    ``mask`` may be a MaskPlan (its visible indices are used) or an index
    array; None runs the full token set.
    """
    visible = getattr(mask, "visible", mask)
    x = embed_tokens(patches, weights, cfg, visible=visible)
    squeeze = x.ndim == 2
    if squeeze:
        x = ops.reshape(x, (1,) + x.shape)
    traces = []
    for i in range(cfg.depth):
        trace = encoder_block(x, weights, cfg, prefix=f"b{i}.", retain_attn=retain_attn)
        traces.append(trace)
        x = trace.z_d
    if squeeze:
        for tr in traces:
            tr.z_a, tr.z_b, tr.z_c, tr.z_d = (
                ops.reshape(z, z.shape[1:]) for z in (tr.z_a, tr.z_b, tr.z_c, tr.z_d)
            )
        x = traces[-1].z_d
    return x, traces


def collect_stack(traces: list, tap: str = "eob") -> LayerStack:
    """Stack one intermediate of every layer, split into patch rows and cls.

    tap 'eob' takes z_d (the block output), 'mlp' takes z_c.
    """
    if tap not in ("eob", "mlp"):
        raise ParameterError(f"tap must be 'eob' or 'mlp', got {tap!r}")
    layers = [tr.z_d if tap == "eob" else tr.z_c for tr in traces]
    data = np.stack([z.data for z in layers], axis=0)
    cls = data[..., 0, :]
    patch = data[..., 1:, :]
    return LayerStack(patch=patch, cls=cls, taps=(tap,) * len(traces))


def attention_sink_stat(attn_maps: list) -> float:
    """Sink score: max over key columns of the mean attention each receives,
    averaged over heads and layers. 1/T for perfectly uniform attention."""
    scores = []
    for maps in attn_maps:
        if maps is None:
            continue
        col_mass = maps.mean(axis=-2)  # mean over queries -> (..., T)
        scores.append(col_mass.max(axis=-1).mean())
    return float(np.mean(scores)) if scores else float("nan")
