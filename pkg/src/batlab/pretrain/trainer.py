"""Masked latent regression: loss, collapse diagnostics, training loop.

One step: a single teacher forward per sample builds targets that all V
masked views of that sample reuse; the student encodes each view's visible
tokens, the decoder predicts every patch embedding, and the objective is
the unweighted sum of the global (cls vs token-mean) and local (masked
token) squared errors, averaged over views and batch. After the AdamW
update the teacher EMA advances once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..encoder.model import EncoderConfig, collect_stack, forward_full, init_encoder_weights, wrap_weights
from ..errors import NumericsError, ParameterError
from ..numerics import AdamW, Tape, lr_schedule, ops
from ..numerics.tensor import Tensor
from .decoder import DecoderConfig, decoder_forward, init_decoder_weights
from .masking import MaskPlan, inverse_block_mask, random_mask
from .teacher import LambdaSchedule, Targets, TeacherState, ema_update, make_targets


@dataclass
class PretrainConfig:
    steps: int = 2000
    batch_size: int = 8
    views: int = 4
    mask_kind: str = "inverse_block"  # inverse_block | random
    mask_ratio: float = 0.8
    keep_ratio: float = 0.2
    block_aspect: tuple = (0.5, 2.0)
    target_source: str = "eob"  # eob | mlp
    top_k_layers: int | None = None
    local_norm: str = "over_N"  # over_N (literal objective) | over_masked
    peak_lr: float = 5e-4
    start_lr: float = 1e-6
    min_lr: float = 1e-6
    warmup_steps: int = 100
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.95
    adam_eps: float = 1e-8
    lam_start: float = 0.999
    lam_end: float = 0.9999
    lam_anneal_frac: float = 0.5
    log_every: int = 10
    diag_every: int = 50

    def __post_init__(self):
        if self.mask_kind not in ("inverse_block", "random"):
            raise ParameterError(f"unknown mask kind {self.mask_kind!r}")
        if self.local_norm not in ("over_N", "over_masked"):
            raise ParameterError(f"unknown local_norm {self.local_norm!r}")
        if self.target_source not in ("eob", "mlp"):
            raise ParameterError(f"unknown target source {self.target_source!r}")


@dataclass
class LossReport:
    """Loss breakdown; the total is always the plain sum of the two parts."""

    loss_global: float
    loss_local: float
    per_view: list = field(default_factory=list)
    loss: float = field(init=False)

    def __post_init__(self):
        self.loss = self.loss_global + self.loss_local


def mlr_loss(targets: Targets, z_tilde: Tensor, o_m: Tensor, plan,
             local_norm: str = "over_N", tags=None) -> tuple:
    """Masked latent regression objective.

    z_tilde: (B, N, D) decoder predictions; o_m: (B, D) student cls outputs;
    plan: MaskPlan, (m,) or (B, m) masked indices. Per sample,
    global = ||o - o_m||^2 and local = sum_{i in I_m} ||z_i - z~_i||^2
    scaled by 1/N (over_N, the objective as written) or 1/|I_m|.
    Returns (scalar loss Tensor, LossReport); no weighting knobs exist.
    """
    masked = plan.masked if isinstance(plan, MaskPlan) else np.asarray(plan)
    squeeze = z_tilde.ndim == 2
    if squeeze:
        z_tilde = ops.reshape(z_tilde, (1,) + z_tilde.shape)
        o_m = ops.reshape(o_m, (1,) + o_m.shape)
    b, n_tokens, _ = z_tilde.shape
    z = targets.z.reshape((b,) + targets.z.shape[-2:])
    o = targets.o.reshape((b, -1))
    if masked.ndim == 1:
        masked = np.broadcast_to(masked, (b, masked.size))

    z_masked = np.take_along_axis(z, masked[..., None], axis=-2)
    pred = ops.gather_tokens(z_tilde, masked)
    diff = ops.sub(pred, z_masked.astype(z_tilde.data.dtype))
    local_vec = ops.sum_along(ops.mul(diff, diff), axis=(-2, -1))
    denom = n_tokens if local_norm == "over_N" else masked.shape[-1]
    local_vec = ops.scale(local_vec, 1.0 / denom)

    gdiff = ops.sub(o_m, o.astype(o_m.data.dtype))
    global_vec = ops.sum_along(ops.mul(gdiff, gdiff), axis=-1)

    gv, lv = global_vec.data, local_vec.data
    bad = ~(np.isfinite(gv) & np.isfinite(lv))
    if np.any(bad):
        i = int(np.nonzero(bad)[0][0])
        tag = tags[i] if tags else f"batch element {i}"
        raise NumericsError(f"non-finite loss for {tag}")

    loss = ops.add(ops.mean_along(global_vec), ops.mean_along(local_vec))
    report = LossReport(
        loss_global=float(gv.mean()),
        loss_local=float(lv.mean()),
        per_view=[(float(g), float(l)) for g, l in zip(gv, lv)],
    )
    return loss, report


def effective_rank(x: np.ndarray) -> float:
    """exp of the entropy of the normalized singular-value distribution."""
    s = np.linalg.svd(x, compute_uv=False)
    total = s.sum()
    if total <= 0:
        return 0.0
    p = s / total
    p = p[p > 0]
    return float(np.exp(-(p * np.log(p)).sum()))


def collapse_diagnostics(embeddings: np.ndarray, max_rows: int = 256) -> dict:
    """Variance/similarity health check over embedding rows.

    Flags collapse when the median per-dimension std falls below 0.01 or the
    mean pairwise cosine exceeds 0.99.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    x = x.reshape(-1, x.shape[-1])
    per_dim_std = x.std(axis=0)
    if x.shape[0] > max_rows:
        pick = np.linspace(0, x.shape[0] - 1, max_rows).astype(int)
        sub = x[pick]
    else:
        sub = x
    norms = np.linalg.norm(sub, axis=1, keepdims=True)
    unit = sub / np.where(norms == 0, 1.0, norms)
    cos = unit @ unit.T
    off = cos[~np.eye(cos.shape[0], dtype=bool)]
    median_std = float(np.median(per_dim_std))
    mean_cos = float(off.mean()) if off.size else 1.0
    return {
        "median_per_dim_std": median_std,
        "mean_pairwise_cosine": mean_cos,
        "mean_pairwise_abs_cosine": float(np.abs(off).mean()) if off.size else 1.0,
        "effective_rank": effective_rank(x),
        "flagged": bool(median_std < 0.01 or mean_cos > 0.99),
    }


class PretrainTrainer:
    """Owns the student, decoder, teacher and optimizer for one SSL run."""

    def __init__(self, data: np.ndarray, grid: tuple, enc_cfg: EncoderConfig,
                 dec_cfg: DecoderConfig, cfg: PretrainConfig,
                 rng_init: np.random.Generator, rng_mask: np.random.Generator,
                 rng_order: np.random.Generator, sample_ids=None, log_path=None):
        if data.ndim != 3:
            raise ParameterError("data must be (clips, tokens, patch_dim)")
        self.data = data
        self.grid = grid
        self.enc_cfg = enc_cfg
        self.dec_cfg = dec_cfg
        self.cfg = cfg
        self.sample_ids = list(sample_ids) if sample_ids else [str(i) for i in range(len(data))]
        self.rng_mask = rng_mask
        self.rng_order = rng_order
        self.log_path = log_path

        self.enc_weights = init_encoder_weights(enc_cfg, rng_init)
        self.dec_weights = init_decoder_weights(dec_cfg, enc_cfg.width, grid, rng_init)
        lam = LambdaSchedule(cfg.lam_start, cfg.lam_end,
                             int(round(cfg.steps * cfg.lam_anneal_frac)))
        self.teacher = TeacherState.from_student(self.enc_weights, lam)
        self.params = {f"enc.{k}": v for k, v in self.enc_weights.items()}
        self.params.update({f"dec.{k}": v for k, v in self.dec_weights.items()})
        self.opt = AdamW(self.params, lr=cfg.peak_lr, beta1=cfg.beta1, beta2=cfg.beta2,
                         eps=cfg.adam_eps, weight_decay=cfg.weight_decay)
        self.step_idx = 0
        self.history: list[dict] = []
        self.teacher_forwards = 0
        self.student_forwards = 0
        self.last_diagnostics: dict | None = None

    # -- plans ------------------------------------------------------------

    def _make_plans(self, count: int) -> tuple[np.ndarray, np.ndarray]:
        plans = []
        for _ in range(count):
            if self.cfg.mask_kind == "inverse_block":
                plans.append(inverse_block_mask(self.grid, self.cfg.keep_ratio,
                                                self.cfg.block_aspect, self.rng_mask))
            else:
                n = self.grid[0] * self.grid[1]
                plans.append(random_mask(n, self.cfg.mask_ratio, self.rng_mask))
        visible = np.stack([p.visible for p in plans])
        masked = np.stack([p.masked for p in plans])
        return visible, masked

    # -- one optimization step --------------------------------------------

    def step(self) -> LossReport:
        cfg = self.cfg
        b = min(cfg.batch_size, len(self.data))
        idx = self.rng_order.choice(len(self.data), size=b, replace=False)
        batch = self.data[idx]

        teacher_w = wrap_weights(self.teacher.weights)
        _, teacher_traces = forward_full(batch, self.enc_cfg, teacher_w)
        self.teacher_forwards += b
        targets = make_targets(teacher_traces, source=cfg.target_source, top_k=cfg.top_k_layers)

        v = cfg.views
        visible, masked = self._make_plans(b * v)
        tape = Tape()
        enc_p = wrap_weights(self.enc_weights, tape, prefix="enc.")
        dec_p = wrap_weights(self.dec_weights, tape, prefix="dec.")
        patches_rep = np.repeat(batch, v, axis=0)
        final, _ = forward_full(patches_rep, self.enc_cfg, enc_p, mask=visible)
        self.student_forwards += b * v
        d = self.enc_cfg.width
        o_m = ops.reshape(ops.gather_tokens(final, np.array([0])), (b * v, d))
        patch_tokens = ops.gather_tokens(final, np.arange(1, final.shape[1]))
        z_tilde = decoder_forward(patch_tokens, visible, self.dec_cfg, d, self.grid, dec_p)

        rep = Targets(z=np.repeat(targets.z, v, axis=0), o=np.repeat(targets.o, v, axis=0))
        tags = [f"sample {self.sample_ids[s]} view {j}" for s in idx for j in range(v)]
        loss, report = mlr_loss(rep, z_tilde, o_m, masked, cfg.local_norm, tags=tags)

        tape.backward(loss)
        lr = lr_schedule(self.step_idx, cfg.peak_lr, cfg.warmup_steps, cfg.steps,
                         cfg.start_lr, cfg.min_lr)
        self.opt.step(tape.gradients(), lr=lr)
        ema_update(self.teacher, self.enc_weights)
        self.step_idx += 1

        record = {
            "step": self.step_idx,
            "loss": report.loss,
            "loss_global": report.loss_global,
            "loss_local": report.loss_local,
            "lr": lr,
            "lambda": self.teacher.lam.value(self.teacher.step - 1),
        }
        if cfg.diag_every and self.step_idx % cfg.diag_every == 0:
            student_emb = patch_tokens.data.reshape(-1, d)
            teacher_emb = collect_stack(teacher_traces, tap=cfg.target_source).patch[-1].reshape(-1, d)
            record["collapse"] = {
                "student": collapse_diagnostics(student_emb),
                "teacher": collapse_diagnostics(teacher_emb),
            }
            self.last_diagnostics = record["collapse"]
        if cfg.log_every and (self.step_idx % cfg.log_every == 0 or "collapse" in record):
            self.history.append(record)
            if self.log_path:
                with open(self.log_path, "a") as fh:
                    fh.write(json.dumps(record, sort_keys=True) + "\n")
        return report

    def run(self, steps: int | None = None) -> list[dict]:
        for _ in range(steps if steps is not None else self.cfg.steps):
            self.step()
        return self.history

    # -- checkpoint plumbing ------------------------------------------------

    def checkpoint_arrays(self) -> dict:
        arrays = dict(self.params)
        arrays.update({f"teacher.{k}": v for k, v in self.teacher.weights.items()})
        arrays.update(self.opt.state_arrays())
        return arrays

    def sidecar_state(self) -> dict:
        return {
            "step": self.step_idx,
            "opt_step": self.opt.state.step,
            "teacher_step": self.teacher.step,
            "rng_mask": self.rng_mask.bit_generator.state,
            "rng_order": self.rng_order.bit_generator.state,
        }

    def restore(self, arrays: dict, sidecar: dict) -> None:
        for k, v in self.enc_weights.items():
            np.copyto(v, arrays[f"enc.{k}"])
        for k, v in self.dec_weights.items():
            np.copyto(v, arrays[f"dec.{k}"])
        for k, v in self.teacher.weights.items():
            np.copyto(v, arrays[f"teacher.{k}"])
        self.opt.load_state_arrays({k: v for k, v in arrays.items() if k.startswith("adam.")},
                                   step=sidecar["opt_step"])
        self.step_idx = sidecar["step"]
        self.teacher.step = sidecar["teacher_step"]
        self.rng_mask.bit_generator.state = sidecar["rng_mask"]
        self.rng_order.bit_generator.state = sidecar["rng_order"]
