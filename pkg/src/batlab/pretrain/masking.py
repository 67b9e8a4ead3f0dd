"""Mask plans: uniform random masking and inverse-block masking.

A plan partitions token indices {0..N-1} into a masked set I_m and the
visible complement; |I_m| is always round(ratio * N) (half-up), clamped so
both sides stay non-empty.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import MaskAdjustedWarning, ParameterError


@dataclass
class MaskPlan:
    masked: np.ndarray  # sorted unique indices
    visible: np.ndarray  # sorted complement
    n_total: int
    ratio: float

    def __post_init__(self):
        if len(self.masked) + len(self.visible) != self.n_total:
            raise ParameterError("mask plan does not partition the token set")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _clamped_count(raw: int, n: int, what: str) -> int:
    count = min(max(raw, 1), n - 1)
    if count != raw:
        warnings.warn(f"{what} adjusted from {raw} to {count} to keep both sides non-empty",
                      MaskAdjustedWarning)
    return count


def random_mask(n: int, ratio: float = 0.8, rng: np.random.Generator | None = None) -> MaskPlan:
    """Uniform sample without replacement of round(ratio * n) masked indices."""
    if not 0 < ratio < 1:
        raise ParameterError(f"mask ratio must be in (0, 1), got {ratio}")
    if n < 2:
        raise ParameterError(f"need at least 2 tokens to mask, got {n}")
    rng = rng or np.random.default_rng()
    m = _clamped_count(round_half_up(ratio * n), n, "masked count")
    masked = np.sort(rng.choice(n, size=m, replace=False))
    keep = np.ones(n, dtype=bool)
    keep[masked] = False
    return MaskPlan(masked=masked, visible=np.nonzero(keep)[0], n_total=n, ratio=ratio)


def inverse_block_mask(grid: tuple, keep_ratio: float = 0.2,
                       block_aspect: tuple = (0.5, 2.0),
                       rng: np.random.Generator | None = None) -> MaskPlan:
    """Keep one contiguous rectangle of ~keep_ratio * N tokens, mask the rest.

    The rectangle's aspect is sampled log-uniformly within ``block_aspect``
    (height/width), its position uniformly. The kept count is trimmed to
    exactly round(keep_ratio * N) by shaving trailing raster-order cells,
    which keeps the kept set 4-connected.
    """
    rows, cols = grid
    n = rows * cols
    if keep_ratio * n < 1:
        raise ParameterError(f"keep_ratio {keep_ratio} keeps no tokens on grid {grid}")
    rng = rng or np.random.default_rng()
    target = _clamped_count(round_half_up(keep_ratio * n), n, "kept count")

    aspect = float(np.exp(rng.uniform(np.log(block_aspect[0]), np.log(block_aspect[1]))))
    h = round_half_up(math.sqrt(target * aspect))
    w = round_half_up(math.sqrt(target / aspect))
    if h > rows or w > cols:
        warnings.warn(f"sampled {h}x{w} block clipped to grid {grid}", MaskAdjustedWarning)
    h = min(max(h, 1), rows)
    w = min(max(w, 1), cols)
    while h * w < target:
        if h < rows:
            h += 1
        elif w < cols:
            w += 1
        else:
            break

    r0 = int(rng.integers(0, rows - h + 1))
    c0 = int(rng.integers(0, cols - w + 1))
    cells = [(r0 + dr) * cols + (c0 + dc) for dr in range(h) for dc in range(w)]
    kept = np.array(sorted(cells[:target]))
    mask = np.ones(n, dtype=bool)
    mask[kept] = False
    return MaskPlan(masked=np.nonzero(mask)[0], visible=kept, n_total=n, ratio=1.0 - keep_ratio)
