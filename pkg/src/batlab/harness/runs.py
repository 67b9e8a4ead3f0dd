"""Stage orchestration shared by the CLI and the acceptance suite."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from ..errors import ParameterError
from ..metrics import accuracy, f1, mean_average_precision, spearman_rank
from ..numerics.tensor import constant
from ..pretrain.trainer import PretrainTrainer
from ..probe.cgp import CGPModel, gate_report
from ..probe.training import (
    _StackData,
    extract_linear_features,
    layerwise_linear_probe,
    linear_probe,
    train_probe,
)
from ..seeding import SeedStream
from .checkpoint import save_checkpoint
from .config import RunConfig
from .ingest import cache_root, ingest_manifest, load_cached
from .stacks import load_stack_dataset


def load_manifest(path) -> tuple[dict, Path]:
    path = Path(path)
    with open(path) as fh:
        return json.load(fh), path.parent


def featurized_corpus(manifest: dict, manifest_dir, config: RunConfig, out_dir) -> dict:
    """Ingest and assemble the (clips, tokens, patch_dim) array for training."""
    result = ingest_manifest(manifest, manifest_dir, config.frontend, cache_root(out_dir),
                             target_frames=config.target_frames)
    if result["errors"]:
        raise ParameterError("featurization errors: " + "; ".join(result["errors"][:5]))
    seqs = [load_cached(p) for p in result["prefixes"]]
    grids = {s.grid for s in seqs}
    if len(grids) != 1:
        raise ParameterError(
            f"clips produce {len(grids)} different token grids; set target_frames to unify them")
    return {
        "data": np.stack([s.patches for s in seqs]),
        "grid": seqs[0].grid,
        "prefixes": result["prefixes"],
        "ids": [r["path"] for r in manifest["records"]],
    }


def pretrain_sidecar(trainer: PretrainTrainer, config: RunConfig) -> dict:
    enc = trainer.enc_cfg
    return {
        "kind": "pretrain",
        "config": config.to_dict(),
        "encoder_config": {
            "depth": enc.depth, "width": enc.width, "heads": enc.heads,
            "mlp_ratio": enc.mlp_ratio, "gated": enc.gated,
            "patch_dim": enc.patch_dim, "grid": list(enc.grid),
        },
        **trainer.sidecar_state(),
    }


def build_trainer(config: RunConfig, seed: int, corpus: dict, log_path=None) -> PretrainTrainer:
    stream = SeedStream(seed)
    grid = corpus["grid"]
    enc_cfg = config.encoder.to_runtime(grid, corpus["data"].shape[-1])
    return PretrainTrainer(
        corpus["data"], grid, enc_cfg, config.decoder, config.pretrain,
        rng_init=stream.generator("pretrain.init"),
        rng_mask=stream.generator("pretrain.mask"),
        rng_order=stream.generator("pretrain.order"),
        sample_ids=corpus["ids"],
        log_path=log_path,
    )


def run_pretrain(config: RunConfig, seed: int, manifest_path, out_dir,
                 checkpoint_every: int = 0) -> PretrainTrainer:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.save(out_dir / "config_echo.json")
    manifest, manifest_dir = load_manifest(manifest_path)
    corpus = featurized_corpus(manifest, manifest_dir, config, out_dir)
    log_path = out_dir / "train_log.jsonl"
    log_path.write_text("")
    trainer = build_trainer(config, seed, corpus, log_path=str(log_path))
    total = config.pretrain.steps
    while trainer.step_idx < total:
        trainer.step()
        if checkpoint_every and trainer.step_idx % checkpoint_every == 0 and trainer.step_idx < total:
            save_checkpoint(out_dir / f"checkpoint_step{trainer.step_idx:06d}",
                            trainer.checkpoint_arrays(), pretrain_sidecar(trainer, config))
    save_checkpoint(out_dir / "checkpoint_final", trainer.checkpoint_arrays(),
                    pretrain_sidecar(trainer, config))
    return trainer


def _metric_of(task, scores, labels) -> float:
    if task == "multi-label":
        return mean_average_precision(scores, labels)[0]
    return accuracy(scores, labels)


def _cgp_scores(state, data: _StackData) -> np.ndarray:
    model = CGPModel(state)
    handles = {k: constant(v) for k, v in model.params.items()}
    outs = [None] * len(data.labels)
    from ..probe.training import _grouped_batches

    for batch in _grouped_batches(data.token_counts, 64, np.random.default_rng(0)):
        z, o, _ = data.batch(batch)
        out = model.forward(handles, z, o)
        for j, i in enumerate(batch):
            outs[i] = out.data[j]
    return np.stack(outs)


def run_probe(config: RunConfig, seed: int, stacks_index, out_dir,
              with_layer_curve: bool = True) -> dict:
    """Train the configured probe on cached stacks; writes summary + state."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.save(out_dir / "config_echo.json")
    pcfg = config.probe
    train_set, index = load_stack_dataset(stacks_index, split="train")
    val_set, _ = load_stack_dataset(stacks_index, split="valid")
    test_set, _ = load_stack_dataset(stacks_index, split="test")
    if len(val_set) == 0:
        val_set = None
    stream = SeedStream(seed)

    summary = {"kind": pcfg.kind, "task": index["task"], "stacks_index": str(stacks_index)}
    history = []
    if pcfg.kind == "cgp":
        state, history = train_probe(train_set, pcfg, stream.generator("probe.cgp"), val=val_set)
        report = gate_report(state)
        summary["n_prototypes"] = pcfg.n_prototypes
        summary["gate_alpha"] = [float(a) for a in report["alpha"]]
        summary["gate_argmax"] = report["argmax_layer"]
        scores = {name: _cgp_scores(state, _StackData(ds))
                  for name, ds in (("val", val_set), ("test", test_set)) if ds is not None and len(ds)}
        save_checkpoint(out_dir / "probe_state",
                        {"prototypes": state.prototypes, "gate": state.gate,
                         "w": state.w, "b": state.b},
                        {"kind": "probe", "probe_kind": "cgp", "config": config.to_dict()})
    else:
        model, history = linear_probe(train_set, pcfg, stream.generator("probe.linear"),
                                      val=val_set)
        layer = train_set.stacks[0].patch.shape[0] - 1
        scores = {}
        for name, ds in (("val", val_set), ("test", test_set)):
            if ds is not None and len(ds):
                feats = extract_linear_features(ds.stacks, layer, pcfg.pooling)
                scores[name] = model.scores(feats)
        save_checkpoint(out_dir / "probe_state", {"w": model.w, "b": model.b},
                        {"kind": "probe", "probe_kind": "linear", "config": config.to_dict()})

    for name, ds in (("val", val_set), ("test", test_set)):
        if name in scores and ds is not None:
            summary[f"{name}_metric"] = _metric_of(index["task"], scores[name], ds.labels)
            if index["task"] == "multi-label":
                summary[f"{name}_f1_macro"] = f1(scores[name], ds.labels, averaging="macro")
                summary[f"{name}_f1_micro"] = f1(scores[name], ds.labels, averaging="micro")

    if with_layer_curve:
        lin_cfg = dataclasses.replace(pcfg, kind="linear")
        curve = layerwise_linear_probe(train_set, lin_cfg, seed=stream.seed("probe.layerwise"),
                                       val=val_set, eval_set=test_set if len(test_set) else None)
        summary["layer_curve"] = [float(c) for c in curve]
        if "gate_alpha" in summary:
            summary["spearman_alpha_curve"] = spearman_rank(summary["gate_alpha"], curve)

    with open(out_dir / "probe_history.jsonl", "w") as fh:
        for record in history:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    with open(out_dir / "probe_summary.json", "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return summary
