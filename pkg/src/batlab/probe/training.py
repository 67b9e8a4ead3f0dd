"""Probe training on frozen stacks: CGP, linear, and layer-wise linear.

All probes share one AdamW/cosine loop. Stacks are constants; a probe run
touches nothing but its own parameters, and identical seeds give
bit-identical parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, ParameterError
from ..metrics import accuracy, mean_average_precision
from ..numerics import AdamW, Tape, lr_schedule, ops
from ..numerics.tensor import constant, get_dtype
from .cgp import CGPModel, ProbeConfig, ProbeState, init_probe_state, normalize_stack


@dataclass
class ProbeDataset:
    stacks: list
    labels: np.ndarray  # (B, C) multi-label floats or (B,) class indices
    n_classes: int
    task: str  # multi-label | multi-class

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.task == "multi-label":
            if self.labels.ndim != 2 or self.labels.shape[1] != self.n_classes:
                raise DimensionError(
                    f"multi-label labels must be (samples, {self.n_classes}), got {self.labels.shape}")
        elif self.task == "multi-class":
            if self.labels.ndim != 1:
                raise DimensionError("multi-class labels must be a 1-D index array")
            if self.labels.size and self.labels.max() >= self.n_classes:
                raise DimensionError(
                    f"label {self.labels.max()} outside {self.n_classes} classes")
        else:
            raise ParameterError(f"unknown task {self.task!r}")
        if len(self.stacks) != len(self.labels):
            raise DimensionError("stacks and labels differ in length")

    def __len__(self):
        return len(self.stacks)

    @property
    def dims(self) -> tuple:
        l, _, d = self.stacks[0].patch.shape
        return l, d


def _loss_fn(task):
    if task == "multi-label":
        return lambda logits, labels: ops.bce_with_logits(logits, labels)
    return lambda logits, labels: ops.cross_entropy(logits, labels)


def _metric(task, scores, labels) -> float:
    if task == "multi-label":
        return mean_average_precision(scores, labels)[0]
    return accuracy(scores, labels)


def _grouped_batches(token_counts, batch_size, rng) -> list:
    """Same-length batches: shuffle within length groups, then shuffle batches."""
    groups = {}
    for i, n in enumerate(token_counts):
        groups.setdefault(n, []).append(i)
    batches = []
    for n in sorted(groups):
        idx = np.array(groups[n])
        rng.shuffle(idx)
        for start in range(0, len(idx), batch_size):
            batches.append(idx[start : start + batch_size])
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


class _StackData:
    """Normalized per-sample stacks ready for constant batching."""

    def __init__(self, dataset: ProbeDataset):
        self.z = []
        self.o = []
        self.token_counts = []
        for stack in dataset.stacks:
            z_hat, o_hat = normalize_stack(stack)
            self.z.append(z_hat.astype(get_dtype()))
            self.o.append(o_hat.astype(get_dtype()))
            self.token_counts.append(z_hat.shape[1])
        self.labels = dataset.labels
        self.task = dataset.task

    def batch(self, idx):
        z = np.stack([self.z[i] for i in idx], axis=1)  # (L, b, N, D)
        o = np.stack([self.o[i] for i in idx], axis=1)  # (L, b, D)
        return constant(z), constant(o), self.labels[idx]


def _evaluate(forward_const, data: _StackData, batch_size: int = 64) -> float:
    outs = [None] * len(data.labels)
    for batch in _grouped_batches(data.token_counts, batch_size, np.random.default_rng(0)):
        z, o, _ = data.batch(batch)
        out = forward_const(z, o)
        for j, i in enumerate(batch):
            outs[i] = out.data[j]
    scores = np.stack(outs)
    return _metric(data.task, scores, data.labels)


def _fit(model_params: dict, forward, train: _StackData, val: _StackData | None,
         cfg: ProbeConfig, rng: np.random.Generator, weight_decay: float) -> list:
    """Shared AdamW loop; restores the best-validation snapshot in place."""
    opt = AdamW(model_params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                weight_decay=weight_decay)
    loss_fn = _loss_fn(train.task)
    history = []
    best_metric = -np.inf
    best = None
    step = 0
    while step < cfg.steps:
        for batch in _grouped_batches(train.token_counts, cfg.batch_size, rng):
            if step >= cfg.steps:
                break
            z, o, labels = train.batch(batch)
            tape = Tape()
            handles = {k: tape.param(k, v) for k, v in model_params.items()}
            logits = forward(handles, z, o)
            loss = loss_fn(logits, labels)
            tape.backward(loss)
            lr = lr_schedule(step, cfg.lr, cfg.warmup_steps, cfg.steps, min_lr=cfg.min_lr)
            opt.step(tape.gradients(), lr=lr)
            step += 1
            record = {"step": step, "loss": loss.item()}
            if val is not None and cfg.eval_every and step % cfg.eval_every == 0:
                metric = _evaluate(
                    lambda z2, o2: forward({k: constant(v) for k, v in model_params.items()}, z2, o2),
                    val,
                )
                record["val_metric"] = metric
                # ties go to the later checkpoint: with equal validation
                # metrics the longer-trained probe is the better-calibrated one
                if metric >= best_metric:
                    best_metric = metric
                    best = {k: v.copy() for k, v in model_params.items()}
            history.append(record)
    if best is not None:
        for k, v in model_params.items():
            np.copyto(v, best[k])
    return history


def train_probe(dataset: ProbeDataset, cfg: ProbeConfig,
                rng: np.random.Generator, val: ProbeDataset | None = None) -> tuple:
    """Fit a CGP probe; returns (ProbeState, history).

    With a validation set the returned state is the best checkpoint by
    validation mAP/accuracy; otherwise the final step's parameters.
    """
    n_layers, dim = dataset.dims
    state = init_probe_state(n_layers, dim, cfg.n_prototypes, dataset.n_classes, rng)
    model = CGPModel(state)
    train_data = _StackData(dataset)
    val_data = _StackData(val) if val is not None else None
    history = _fit(model.params, model.forward, train_data, val_data, cfg, rng,
                   cfg.weight_decay_cgp)
    state.history = history
    return state, history


def extract_linear_features(stacks, layer: int, pooling: str) -> np.ndarray:
    if pooling == "cls":
        feats = [s.cls[layer] for s in stacks]
    elif pooling == "mean_patch":
        feats = [s.patch[layer].mean(axis=0) for s in stacks]
    else:
        raise ParameterError(f"pooling must be cls or mean_patch, got {pooling!r}")
    return np.stack(feats).astype(get_dtype())


@dataclass
class LinearModel:
    """Linear classifier on train-standardized features (the usual probe recipe)."""

    w: np.ndarray
    b: np.ndarray
    feat_mean: np.ndarray | None = None
    feat_std: np.ndarray | None = None
    history: list = field(default_factory=list)

    @property
    def params(self):
        return {"w": self.w, "b": self.b}

    def standardize(self, feats: np.ndarray) -> np.ndarray:
        if self.feat_mean is None:
            return feats
        return (feats - self.feat_mean) / self.feat_std

    def scores(self, feats: np.ndarray) -> np.ndarray:
        return self.standardize(feats) @ self.w.T + self.b


def _resolve_layer(stacks, layer_choice) -> int:
    depth = stacks[0].patch.shape[0]
    if layer_choice == "final":
        return depth - 1
    layer = int(layer_choice)
    if not 0 <= layer < depth:
        raise DimensionError(f"layer {layer} outside stack of depth {depth}")
    return layer


def linear_probe(dataset: ProbeDataset, cfg: ProbeConfig, rng: np.random.Generator,
                 val: ProbeDataset | None = None, layer_choice="final",
                 pooling: str | None = None) -> tuple:
    """Single linear layer on one frozen feature vector; returns (model, history)."""
    pooling = pooling or cfg.pooling
    layer = _resolve_layer(dataset.stacks, layer_choice)
    dim = dataset.dims[1]
    model = LinearModel(
        w=np.zeros((dataset.n_classes, dim), dtype=get_dtype()),
        b=np.zeros(dataset.n_classes, dtype=get_dtype()),
    )

    raw = extract_linear_features(dataset.stacks, layer, pooling)
    model.feat_mean = raw.mean(axis=0)
    model.feat_std = raw.std(axis=0) + np.asarray(1e-8, dtype=raw.dtype)
    feats = {"train": model.standardize(raw)}
    if val is not None:
        feats["val"] = model.standardize(extract_linear_features(val.stacks, layer, pooling))

    class _FeatData(_StackData):
        def __init__(self, f, labels, task):
            self.f = f
            self.labels = labels
            self.task = task
            self.token_counts = [1] * len(labels)

        def batch(self, idx):
            return constant(self.f[idx]), None, self.labels[idx]

    def forward(handles, f_batch, _o):
        return ops.add(ops.matmul(f_batch, ops.transpose(handles["w"])), handles["b"])

    train_data = _FeatData(feats["train"], dataset.labels, dataset.task)
    val_data = _FeatData(feats["val"], val.labels, val.task) if val is not None else None
    history = _fit(model.params, forward, train_data, val_data, cfg, rng,
                   cfg.weight_decay_linear)
    model.history = history
    return model, history


def layerwise_linear_probe(dataset: ProbeDataset, cfg: ProbeConfig, seed: int,
                           val: ProbeDataset | None = None,
                           eval_set: ProbeDataset | None = None) -> list:
    """Independent mean-patch linear probe per block; returns the metric curve."""
    depth = dataset.stacks[0].patch.shape[0]
    curve = []
    measure = eval_set or val or dataset
    for layer in range(depth):
        rng = np.random.default_rng(seed + layer)
        model, _ = linear_probe(dataset, cfg, rng, val=val, layer_choice=layer,
                                pooling="mean_patch")
        feats = extract_linear_features(measure.stacks, layer, "mean_patch")
        curve.append(_metric(measure.task, model.scores(feats), measure.labels))
    return curve
