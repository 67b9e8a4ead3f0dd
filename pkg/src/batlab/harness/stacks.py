"""Frozen-representation extraction: manifest + checkpoint -> LayerStack files.

Each clip yields one container holding the per-layer patch and cls
embeddings; an index JSON ties the stack files to labels and splits so probe
runs need nothing else.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..encoder.model import EncoderConfig, LayerStack, collect_stack, forward_full, wrap_weights
from ..errors import CheckpointError
from .checkpoint import load_checkpoint
from .container import read_container_full, write_container
from .ingest import load_cached


def encoder_from_checkpoint(prefix) -> tuple[EncoderConfig, dict]:
    arrays, sidecar = load_checkpoint(prefix)
    meta = sidecar.get("encoder_config")
    if meta is None:
        raise CheckpointError(f"{prefix}: sidecar carries no encoder_config")
    cfg = EncoderConfig(depth=meta["depth"], width=meta["width"], heads=meta["heads"],
                        mlp_ratio=meta["mlp_ratio"], gated=meta["gated"],
                        patch_dim=meta["patch_dim"], grid=tuple(meta["grid"]))
    weights = {k[len("enc."):]: v for k, v in arrays.items() if k.startswith("enc.")}
    return cfg, weights


def embed_manifest(manifest: dict, cache_prefixes, checkpoint_prefix, out_dir,
                   tap: str = "eob", batch_size: int = 64) -> dict:
    """Run the frozen encoder over every cached clip and write stack files."""
    out_dir = Path(out_dir)
    stack_dir = out_dir / "stacks"
    stack_dir.mkdir(parents=True, exist_ok=True)
    cfg, weights = encoder_from_checkpoint(checkpoint_prefix)
    handles = wrap_weights(weights)

    records = manifest["records"]
    entries = []
    for start in range(0, len(records), batch_size):
        chunk = list(range(start, min(start + batch_size, len(records))))
        patches = np.stack([load_cached(cache_prefixes[i]).patches for i in chunk])
        _, traces = forward_full(patches, cfg, handles)
        stack = collect_stack(traces, tap=tap)
        for j, i in enumerate(chunk):
            sample = stack.sample(j)
            path = stack_dir / f"stack_{i:05d}.batl"
            write_container(path, {"patch": sample.patch.astype(np.float32),
                                   "cls": sample.cls.astype(np.float32)},
                            meta={"taps": list(sample.taps), "clip": records[i]["path"]})
            entries.append({
                "stack": str(path.relative_to(out_dir)),
                "labels": records[i]["labels"],
                "split": records[i]["split"],
                "clip": records[i]["path"],
            })
    index = {
        "task": manifest["task"],
        "classes": manifest["classes"],
        "tap": tap,
        "encoder_checkpoint": str(checkpoint_prefix),
        "records": entries,
    }
    index_path = out_dir / "stacks_index.json"
    with open(index_path, "w") as fh:
        json.dump(index, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return index


def load_stack(path) -> LayerStack:
    arrays, meta = read_container_full(path)
    return LayerStack(patch=arrays["patch"], cls=arrays["cls"],
                      taps=tuple(meta.get("taps", ())))


def load_stack_dataset(index_path, split: str | None = None):
    """Read a stacks index into (ProbeDataset, index dict)."""
    from ..probe.training import ProbeDataset

    index_path = Path(index_path)
    with open(index_path) as fh:
        index = json.load(fh)
    base = index_path.parent
    records = index["records"]
    if split is not None:
        records = [r for r in records if r["split"] == split]
    stacks = [load_stack(base / r["stack"]) for r in records]
    n_classes = len(index["classes"])
    if index["task"] == "multi-label":
        labels = np.zeros((len(records), n_classes))
        for i, r in enumerate(records):
            labels[i, r["labels"]] = 1.0
    else:
        labels = np.array([r["labels"][0] for r in records])
    dataset = ProbeDataset(stacks, labels, n_classes, index["task"])
    return dataset, index
