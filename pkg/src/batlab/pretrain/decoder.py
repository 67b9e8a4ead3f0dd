"""Latent-space decoders: six-layer CNN or ViT predicting all N patch tokens.

Both kinds receive the student's visible patch embeddings scattered onto a
full-length sequence whose masked slots hold a shared learnable mask token
plus the grid position encoding, and end in a linear projection back to D.

CNN: tokens reshaped onto the 2-D grid; each layer is a width-preserving
kxk convolution (zero-padded), residual when shapes allow, layer-normalized.
ViT: standard ungated transformer blocks over the full token sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..encoder.model import EncoderConfig, encoder_block, sincos_pos_2d, trunc_normal
from ..errors import DimensionError, ParameterError
from ..numerics import ops
from ..numerics.tensor import Tensor, constant, get_dtype


@dataclass
class DecoderConfig:
    kind: str = "vit"  # vit | cnn
    depth: int = 6
    channels: int | None = None  # CNN width; defaults to the embedding width
    kernel_size: int = 3
    heads: int = 4
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.kind not in ("vit", "cnn"):
            raise ParameterError(f"decoder kind must be 'vit' or 'cnn', got {self.kind!r}")
        if self.kernel_size % 2 == 0:
            raise ParameterError("CNN kernel size must be odd")


def _vit_cfg(cfg: DecoderConfig, width: int, grid: tuple) -> EncoderConfig:
    return EncoderConfig(depth=cfg.depth, width=width, heads=cfg.heads,
                         mlp_ratio=cfg.mlp_ratio, gated=False, patch_dim=1, grid=grid)


def init_decoder_weights(cfg: DecoderConfig, width: int, grid: tuple,
                         rng: np.random.Generator) -> dict:
    w = {"mask_token": trunc_normal(rng, (width,))}
    if cfg.kind == "vit":
        from ..encoder.model import init_encoder_weights

        enc = init_encoder_weights(_vit_cfg(cfg, width, grid), rng)
        for k, v in enc.items():
            if k.startswith("b"):
                w[f"dec.{k}"] = v
    else:
        c = cfg.channels or width
        kk = cfg.kernel_size * cfg.kernel_size
        for i in range(cfg.depth):
            c_in = width if i == 0 else c
            w[f"dec.b{i}.conv.w"] = trunc_normal(rng, (kk * c_in, c))
            w[f"dec.b{i}.conv.b"] = np.zeros(c)
            w[f"dec.b{i}.ln.g"] = np.ones(c)
            w[f"dec.b{i}.ln.b"] = np.zeros(c)
    c_out = width if cfg.kind == "vit" else (cfg.channels or width)
    w["out.w"] = trunc_normal(rng, (c_out, width))
    w["out.b"] = np.zeros(width)
    return {k: np.asarray(v, dtype=get_dtype()) for k, v in w.items()}


def neighbor_index(grid: tuple, kernel_size: int) -> np.ndarray:
    """Flat (N * k*k,) gather map into a sequence with a zero-pad row at N."""
    rows, cols = grid
    n = rows * cols
    half = kernel_size // 2
    idx = np.full((n, kernel_size * kernel_size), n, dtype=np.int64)
    for r in range(rows):
        for c in range(cols):
            for j, (dr, dc) in enumerate(
                (dr, dc) for dr in range(-half, half + 1) for dc in range(-half, half + 1)
            ):
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols:
                    idx[r * cols + c, j] = rr * cols + cc
    return idx.reshape(-1)


def decoder_forward(visible: Tensor, plan_idx: np.ndarray, cfg: DecoderConfig,
                    width: int, grid: tuple, weights: dict) -> Tensor:
    """Predict all N patch embeddings from visible ones.

    visible: (B, n, D) student encoder outputs (cls excluded); plan_idx:
    (B, n) or (n,) original grid positions of the visible tokens.
    """
    n_tokens = grid[0] * grid[1]
    plan_idx = np.asarray(plan_idx)
    if plan_idx.max() >= n_tokens or plan_idx.min() < 0:
        raise DimensionError(f"mask plan does not fit grid {grid}")
    b = visible.shape[0]
    pos = sincos_pos_2d(grid, width).astype(get_dtype())
    base = ops.add(ops.add(weights["mask_token"], constant(pos)),
                   constant(np.zeros((b, n_tokens, width), dtype=get_dtype())))
    x = ops.scatter_tokens(visible, plan_idx, base)

    if cfg.kind == "vit":
        vcfg = _vit_cfg(cfg, width, grid)
        for i in range(cfg.depth):
            x = encoder_block(x, weights, vcfg, prefix=f"dec.b{i}.").z_d
    else:
        nb_idx = neighbor_index(grid, cfg.kernel_size)
        kk = cfg.kernel_size * cfg.kernel_size
        for i in range(cfg.depth):
            c_in = x.shape[-1]
            pad = constant(np.zeros((b, 1, c_in), dtype=get_dtype()))
            gathered = ops.gather_tokens(ops.concat([x, pad], axis=1), nb_idx)
            stacked = ops.reshape(gathered, (b, n_tokens, kk * c_in))
            h = ops.add(ops.matmul(stacked, weights[f"dec.b{i}.conv.w"]),
                        weights[f"dec.b{i}.conv.b"])
            if h.shape == x.shape:
                h = ops.add(x, h)
            x = ops.layer_norm(h, weights[f"dec.b{i}.ln.g"], weights[f"dec.b{i}.ln.b"], 1e-6)
    return ops.add(ops.matmul(x, weights["out.w"]), weights["out.b"])
