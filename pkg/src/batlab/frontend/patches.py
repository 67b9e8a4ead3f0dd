"""Non-overlapping k x k patch extraction and its exact inverse."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, ParameterError
from .dsp import MelSpec


@dataclass
class PatchSequence:
    patches: np.ndarray  # (N, k*k), row-major over the (T/k, F/k) grid, time-major
    grid: tuple  # (grid_t, grid_f)
    k: int
    t_frames: int  # time extent before tail padding
    pad_t: int


def patchify(mel, k: int = 16) -> PatchSequence:
    """Split a (T, F) matrix into flattened k x k patches.

    T is tail-padded with zeros to a multiple of k; F must already be
    divisible by k (the frequency extent is fixed by the filterbank).
    """
    if k <= 0:
        raise ParameterError(f"patch size must be positive, got {k}")
    values = mel.values if isinstance(mel, MelSpec) else np.asarray(mel)
    t, f = values.shape
    if f % k:
        raise DimensionError(f"frequency extent {f} not divisible by patch size {k}")
    pad_t = (-t) % k
    if pad_t:
        values = np.concatenate([values, np.zeros((pad_t, f), dtype=values.dtype)], axis=0)
    grid_t, grid_f = values.shape[0] // k, f // k
    patches = (
        values.reshape(grid_t, k, grid_f, k)
        .transpose(0, 2, 1, 3)
        .reshape(grid_t * grid_f, k * k)
    )
    return PatchSequence(patches=patches, grid=(grid_t, grid_f), k=k, t_frames=t, pad_t=pad_t)


def unpatchify(p: PatchSequence) -> np.ndarray:
    """Exact inverse of patchify; trims the tail padding."""
    grid_t, grid_f = p.grid
    k = p.k
    values = (
        p.patches.reshape(grid_t, grid_f, k, k)
        .transpose(0, 2, 1, 3)
        .reshape(grid_t * k, grid_f * k)
    )
    return values[: p.t_frames]
