"""Constructed frozen encoder for the layered-information probing task.

Goal: a corpus + encoder pair where the class is fully linearly decodable
from exactly one designated middle block, with a graded information profile
around it (the shape a layer-wise probe sweep and a learned layer gate
should both recover).

Mechanism. Each clip carries five presence tones u0..u4 at fixed mel rows;
the class bits are three-way parities, b1 = u0^u1^u2 and b2 = u2^u3^u4, so
a linear readout of the input reaches at best ~62% per bit. The encoder:

    block 0            uniform attention averages each clip's per-token tone
                       evidence and broadcasts it onto fresh directions, so
                       every token carries the same clip-level tone summary
                       (linear, class-opaque),
    block 1            MLP computes the first parity stage, xor(u0,u1) and
                       xor(u3,u4), via paired GELUs -> |s_i + s_j|,
                       sign-centered onto fresh directions,
    block 2 = l*       the same trick pairs each stage-one bit with u2,
                       producing both class bits: full linear decodability
                       appears here,
    blocks 3, 4        erasers: MLPs in the exact-linear GELU regime remove
                       every measured signal direction, then re-emit the two
                       class directions attenuated (a decaying, coherent
                       copy: the post-peak staircase),
    block 5..L-1       ordinary random blocks.

All readout duals are projected onto the token-shared broadcast subspace
(per-token detector responses would corrupt them otherwise), and every
threshold is calibrated empirically on the generated corpus itself, so the
construction is robust to the DSP details upstream.
"""

from __future__ import annotations

import numpy as np

from ..encoder.model import EncoderConfig, forward_full, wrap_weights
from ..errors import ParameterError
from ..numerics.tensor import get_dtype

ABS_SLOPE = 40.0  # paired-GELU sharpness for the parity features
STAGE1_GAIN = 4.0  # magnitude of the first-stage xor features
FEATURE_GAIN = 6.0  # magnitude of the class-bit features at the peak
ERASER_OFFSET = 16.0  # keeps every eraser GELU in its exact-linear tail
ERASER_REWRITE = (0.0, 0.0)  # optional contrast retention of a coherent copy
AGG_SCALE = 3.0  # broadcast strength of the tone evidence
TAIL_SCALE = 0.5  # random tail-block weight scale


def _zero_block(d: int, m: int) -> dict:
    return {
        "wq": np.zeros((d, d)), "bq": np.zeros(d),
        "wk": np.zeros((d, d)),
        "wv": np.zeros((d, d)), "bv": np.zeros(d),
        "wo": np.zeros((d, d)), "bo": np.zeros(d),
        "ln1.g": np.ones(d), "ln1.b": np.zeros(d),
        "ln2.g": np.ones(d), "ln2.b": np.zeros(d),
        "mlp.w1": np.zeros((d, m)), "mlp.b1": np.zeros(m),
        "mlp.w2": np.zeros((m, d)), "mlp.b2": np.zeros(d),
    }


def _random_block(d: int, m: int, rng) -> dict:
    blk = _zero_block(d, m)
    for key, shape in (("wq", (d, d)), ("wk", (d, d)), ("wv", (d, d)), ("wo", (d, d)),
                       ("mlp.w1", (d, m)), ("mlp.w2", (m, d))):
        blk[key] = rng.normal(0.0, TAIL_SCALE * shape[0] ** -0.5, size=shape)
    return blk


def _orthonormal(columns: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    u, s, _ = np.linalg.svd(columns, full_matrices=False)
    return u[:, s > tol * s[0]]


def _tone_row_tokens(grid: tuple, tone_bins, patch_size: int) -> list:
    gt, gf = grid
    rows = [b // patch_size for b in tone_bins]
    return [np.array([t * gf + r for t in range(gt)]) for r in rows]


def _forward_traces(patches, cfg, weights):
    _, traces = forward_full(patches, cfg, wrap_weights({k: v.astype(np.float64)
                                                         for k, v in weights.items()}))
    return traces


def _contrast(rep: np.ndarray, flag: np.ndarray) -> np.ndarray:
    return rep[flag == 1].mean(axis=0) - rep[flag == 0].mean(axis=0)


def _token_duals(z_tokens: np.ndarray, bits: list, ridge: float = 1e-4) -> tuple:
    """Per-token ridge readouts: w_i minimizing sum_t (<w, z_t - center> - y_t)^2
    with y = bit - 1/2 broadcast over each clip's tokens.

    Fitting on tokens (not clip means) makes the regression cancel every
    predictable per-token nuisance (position encodings above all), so the
    readout is near-uniform across a clip's tokens.
    """
    b, n, d = z_tokens.shape
    x = z_tokens.reshape(b * n, d)
    center = x.mean(axis=0)
    xc = x - center
    gram = xc.T @ xc / (b * n) + ridge * np.eye(d)
    duals = []
    for bit in bits:
        y = np.repeat(np.asarray(bit, dtype=np.float64) - 0.5, n)
        rhs = xc.T @ y / (b * n)
        w = np.linalg.solve(gram, rhs)
        s = xc @ w
        gap = s[y > 0].mean() - s[y < 0].mean()
        if abs(gap) < 1e-9:
            raise ParameterError("token readout calibration found no usable signal")
        duals.append(w / gap)
    return np.stack(duals, axis=1), center


def _parity_mlp(w1, b1, w2, col: int, dual_pair: np.ndarray, offset: float,
                out_dir: np.ndarray, gain: float) -> None:
    """Two hidden units computing gain * (|<pair,z>-offset| - 1/2) on out_dir."""
    w1[:, col] = ABS_SLOPE * dual_pair
    b1[col] = -ABS_SLOPE * offset
    w1[:, col + 1] = -ABS_SLOPE * dual_pair
    b1[col + 1] = ABS_SLOPE * offset
    w2[col] = w2[col + 1] = (gain / ABS_SLOPE) * out_dir


def build_layered_encoder(patches: np.ndarray, grid: tuple, u_bits: np.ndarray,
                          classes: np.ndarray, tone_bins, depth: int, width: int,
                          l_star: int, patch_size: int, rng: np.random.Generator):
    """Construct the frozen encoder; returns (EncoderConfig, weights, diagnostics).

    patches: (B, N, k*k) featurized corpus; u_bits: (B, 5) tone presences;
    classes: (B,) class indices; l_star: 0-based designated block.
    """
    if not 2 <= l_star <= depth - 4:
        raise ParameterError(
            f"designated layer {l_star} needs two blocks before and three after in depth {depth}")
    d = width
    cfg = EncoderConfig(depth=depth, width=d, heads=4, mlp_ratio=4.0, gated=False,
                        patch_dim=patches.shape[-1], grid=grid)
    m = cfg.mlp_width
    patches = patches.astype(np.float64)
    b1_bit = classes & 1
    b2_bit = (classes >> 1) & 1
    xor01 = u_bits[:, 0] ^ u_bits[:, 1]
    xor34 = u_bits[:, 3] ^ u_bits[:, 4]
    n_tones = u_bits.shape[1]

    # -- patch-space tone detectors ------------------------------------------
    row_tokens = _tone_row_tokens(grid, tone_bins, patch_size)
    detectors = []
    gains = []
    for j in range(n_tones):
        resp = patches[:, row_tokens[j], :].mean(axis=1)
        delta = _contrast(resp, u_bits[:, j])
        for prev in detectors:
            delta = delta - prev * (prev @ delta)
        norm = np.linalg.norm(delta)
        if norm < 1e-9:
            raise ParameterError(f"tone {j} produced no detectable patch-space response")
        detectors.append(delta / norm)
        gains.append(norm)

    det = np.stack(detectors, axis=1)  # (k*k, n_tones)
    # signal directions orthogonal to the ones vector, so LayerNorm's mean
    # subtraction cannot square tone products into other layers
    raw_dirs = rng.normal(size=(d, d))
    raw_dirs -= np.ones((d, 1)) * raw_dirs.sum(axis=0) / d
    basis = np.linalg.qr(raw_dirs)[0]
    v_dirs = basis[:, :n_tones]  # per-token detector responses land here
    w_dirs = basis[:, n_tones : 2 * n_tones]  # clip-level broadcast lands here
    h_dirs = basis[:, 2 * n_tones : 2 * n_tones + 2]  # stage-one xor features
    g_dirs = basis[:, 2 * n_tones + 2 : 2 * n_tones + 4]  # class-bit features

    reserved = basis[:, : 2 * n_tones + 4]
    base = rng.normal(0.0, 0.05, size=(patches.shape[-1], d))
    base -= det @ (det.T @ base)  # base map is blind to the tone patterns
    base -= (base @ reserved) @ reserved.T  # and writes nothing on signal dirs
    w_emb = base.copy()
    for j in range(n_tones):
        w_emb += np.outer(det[:, j], v_dirs[:, j]) * (2.0 / gains[j])

    weights = {
        "embed.w": w_emb,
        "embed.b": np.zeros(d),
        "cls": np.zeros(d),
    }
    # the cls row must look like an average token, or the per-token readout
    # offsets (calibrated on patch tokens) misfire on it and the resulting
    # garbage features leak class information past the erasers
    from ..encoder.model import embed_tokens

    def embed_all():
        return embed_tokens(
            patches, wrap_weights({k: v.astype(np.float64) for k, v in weights.items()}), cfg
        ).data

    weights["cls"] = embed_all()[:, 1:, :].mean(axis=(0, 1))

    blocks = [_zero_block(d, m) for _ in range(depth)]
    # uniform attention; values map v-components onto the shared w directions.
    # The output bias removes the corpus-mean broadcast: the shared components
    # must be symmetric around zero, or per-token LayerNorm scale wobble
    # multiplies the baseline into readout noise.
    blocks[0]["wv"] = v_dirs @ w_dirs.T
    blocks[0]["wo"] = AGG_SCALE * np.eye(d)
    blocks[0]["bo"] = -AGG_SCALE * (embed_all().mean(axis=(0, 1)) @ blocks[0]["wv"])
    for i in range(l_star + 3, depth):
        blocks[i] = _random_block(d, m, rng)

    def install():
        for i, blk in enumerate(blocks):
            for key, val in blk.items():
                weights[f"b{i}.{key}"] = val

    def token_mean_rep(block_idx):
        install()
        traces = _forward_traces(patches, cfg, weights)
        z = traces[block_idx].z_b.data
        return z, z[:, 1:, :].mean(axis=1)

    pair_dirs = []  # readout directions whose values carry parity variance

    # -- stage one: xor(u0,u1) and xor(u3,u4) at block l*-1 -------------------
    stage1 = l_star - 1
    z_full, _ = token_mean_rep(stage1)
    dual, center = _token_duals(z_full[:, 1:, :], [u_bits[:, j] for j in range(n_tones)])
    w1 = np.zeros((d, m))
    bias1 = np.zeros(m)
    w2 = np.zeros((m, d))
    for col, (a, b) in enumerate(((0, 1), (3, 4))):
        pair = dual[:, a] + dual[:, b]
        pair_dirs.append(pair)
        _parity_mlp(w1, bias1, w2, 2 * col, pair, pair @ center, h_dirs[:, col], STAGE1_GAIN)
    blocks[stage1]["mlp.w1"] = w1
    blocks[stage1]["mlp.b1"] = bias1
    blocks[stage1]["mlp.w2"] = w2
    blocks[stage1]["mlp.b2"] = -(STAGE1_GAIN / 2.0) * h_dirs.sum(axis=1)

    # -- the designated block: both class bits --------------------------------
    z_full, _ = token_mean_rep(l_star)
    dual, center = _token_duals(z_full[:, 1:, :], [xor01, xor34, u_bits[:, 2]])
    w1 = np.zeros((d, m))
    bias1 = np.zeros(m)
    w2 = np.zeros((m, d))
    for col in (0, 1):
        pair = dual[:, col] + dual[:, 2]
        pair_dirs.append(pair)
        _parity_mlp(w1, bias1, w2, 2 * col, pair, pair @ center, g_dirs[:, col], FEATURE_GAIN)
    blocks[l_star]["mlp.w1"] = w1
    blocks[l_star]["mlp.b1"] = bias1
    blocks[l_star]["mlp.w2"] = w2
    blocks[l_star]["mlp.b2"] = -(FEATURE_GAIN / 2.0) * g_dirs.sum(axis=1)

    # -- erasers with attenuated coherent rewrite ------------------------------
    g_proj = g_dirs @ g_dirs.T

    def class_contrast_at(block_idx, field="z_d"):
        install()
        traces = _forward_traces(patches, cfg, weights)
        z = getattr(traces[block_idx], field).data
        rep_l = z[:, 1:, :].mean(axis=1)
        return np.linalg.norm(_contrast(rep_l, b1_bit)) + np.linalg.norm(_contrast(rep_l, b2_bit))

    for step, block_idx in enumerate((l_star + 1, l_star + 2)):
        z_full, rep_e = token_mean_rep(block_idx)
        contrast_in = (np.linalg.norm(_contrast(rep_e, b1_bit))
                       + np.linalg.norm(_contrast(rep_e, b2_bit)))
        bits = [u_bits[:, j] for j in range(n_tones)] + [xor01, xor34, b1_bit, b2_bit]
        contrasts = [_contrast(rep_e, b) for b in bits]
        for j in range(n_tones):
            rows = z_full[:, 1 + row_tokens[j], :].mean(axis=1)
            contrasts.append(_contrast(rows, u_bits[:, j]))
        # known signal directions: parity-value variance has zero mean-contrast
        # and would survive a purely contrast-based erasure
        contrasts += [w_dirs[:, j] for j in range(n_tones)]
        contrasts += [h_dirs[:, 0], h_dirs[:, 1], g_dirs[:, 0], g_dirs[:, 1]]
        contrasts += pair_dirs
        s_basis = _orthonormal(np.stack(contrasts, axis=1))
        r = s_basis.shape[1]
        e_w1 = np.zeros((d, m))
        e_b1 = np.zeros(m)
        e_w2 = np.zeros((m, d))
        e_w1[:, :r] = s_basis
        e_b1[:r] = ERASER_OFFSET
        e_w2[:r] = -s_basis.T
        e_b2 = ERASER_OFFSET * s_basis.sum(axis=1)
        rewrite_rows = []
        for extra, bit in enumerate((b1_bit, b2_bit)):
            if ERASER_REWRITE[step] <= 0.0:
                continue
            c_dir = g_proj @ _contrast(rep_e, bit)
            norm = np.linalg.norm(c_dir)
            if norm < 1e-9:
                continue
            c_dir = c_dir / norm
            col = r + extra
            e_w1[:, col] = c_dir
            e_b1[col] = ERASER_OFFSET
            e_w2[col] = ERASER_REWRITE[step] * c_dir
            e_b2 -= ERASER_REWRITE[step] * ERASER_OFFSET * c_dir
            rewrite_rows.append(col)
        blocks[block_idx]["mlp.w1"] = e_w1
        blocks[block_idx]["mlp.b1"] = e_b1
        blocks[block_idx]["mlp.w2"] = e_w2
        blocks[block_idx]["mlp.b2"] = e_b2

        # one correction pass: LayerNorm rescales the block output, so measure
        # the realized contrast and rescale the rewrite to hit the target ratio
        if rewrite_rows and contrast_in > 1e-9:
            realized = class_contrast_at(block_idx) / contrast_in
            if realized > 1e-9:
                scale = ERASER_REWRITE[step] / realized
                for col in rewrite_rows:
                    e_w2[col] *= scale
                blocks[block_idx]["mlp.b2"] = (
                    ERASER_OFFSET * s_basis.sum(axis=1)
                    - sum(ERASER_OFFSET * e_w2[col] for col in rewrite_rows)
                )

    # -- verify localization ---------------------------------------------------
    install()
    traces = _forward_traces(patches, cfg, weights)
    layer_contrasts = []
    for tr in traces:
        rep_l = tr.z_d.data[:, 1:, :].mean(axis=1)
        c = np.linalg.norm(_contrast(rep_l, b1_bit)) + np.linalg.norm(_contrast(rep_l, b2_bit))
        layer_contrasts.append(float(c))
    peak = layer_contrasts[l_star]
    post = layer_contrasts[l_star + 1 :]
    head = max(layer_contrasts[:l_star])
    ordered = all(post[i] >= post[i + 1] - 0.05 * peak for i in range(len(post) - 1))
    if peak < 1.8 * max(post) or peak < 3.0 * head or not ordered:
        raise ParameterError(
            f"layered construction failed to localize the class signal: {layer_contrasts}")

    diagnostics = {"layer_class_contrasts": layer_contrasts, "designated_layer": l_star}
    final = {k: v.astype(get_dtype()) for k, v in weights.items()}
    return cfg, final, diagnostics
