"""Manifest featurization with a content-addressed cache.

Cache key = sha256 of (clip bytes, frontend config, patching params), so a
config change re-featurizes and a warm cache is a no-op. Records that fail
to read are collected, not fatal; the caller decides the exit code.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ..frontend.dsp import FrontendConfig, load_audio, run_frontend
from ..frontend.patches import PatchSequence, patchify
from .container import read_container_full, write_container

CACHE_ENV = "BATLAB_CACHE_DIR"


def cache_root(out_dir) -> Path:
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else Path(out_dir) / "cache"


def _cache_key(clip_path: Path, cfg: FrontendConfig, target_frames) -> str:
    h = hashlib.sha256()
    h.update(clip_path.read_bytes())
    h.update(json.dumps(dataclasses.asdict(cfg), sort_keys=True).encode())
    h.update(str(target_frames).encode())
    return h.hexdigest()[:32]


def _fit_frames(values: np.ndarray, target_frames) -> np.ndarray:
    if target_frames is None:
        return values
    t = values.shape[0]
    if t >= target_frames:
        return values[:target_frames]
    pad = np.zeros((target_frames - t, values.shape[1]), dtype=values.dtype)
    return np.concatenate([values, pad], axis=0)


def featurize_clip(clip_path, cfg: FrontendConfig, target_frames=None) -> PatchSequence:
    wave = load_audio(clip_path)
    mel = run_frontend(wave, cfg)
    mel.values = _fit_frames(mel.values, target_frames)
    return patchify(mel, k=cfg.patch_size)


def _store(prefix: Path, seq: PatchSequence, clip_path, cfg: FrontendConfig) -> None:
    meta = {
        "clip": str(clip_path),
        "grid": list(seq.grid),
        "k": seq.k,
        "t_frames": seq.t_frames,
        "pad_t": seq.pad_t,
        "pipeline_tag": cfg.pipeline,
    }
    write_container(str(prefix) + ".batl", {"patches": seq.patches.astype(np.float32)},
                    meta=meta)


def load_cached(prefix) -> PatchSequence:
    arrays, meta = read_container_full(str(prefix) + ".batl")
    return PatchSequence(patches=arrays["patches"], grid=tuple(meta["grid"]), k=meta["k"],
                         t_frames=meta["t_frames"], pad_t=meta["pad_t"])


def ingest_manifest(manifest: dict, manifest_dir, cfg: FrontendConfig, cache_dir,
                    target_frames=None, workers: int = 4) -> dict:
    """Featurize every record; returns {prefixes, errors, featurized, cached}."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    manifest_dir = Path(manifest_dir)

    def one(record):
        clip = manifest_dir / record["path"]
        if not clip.exists():
            return None, f"{clip}: missing file", False
        try:
            prefix = cache_dir / _cache_key(clip, cfg, target_frames)
            if Path(str(prefix) + ".batl").exists():
                return prefix, None, False
            seq = featurize_clip(clip, cfg, target_frames)
            _store(prefix, seq, clip, cfg)
            return prefix, None, True
        except Exception as exc:  # per-record isolation
            return None, f"{clip}: {exc}", False

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(one, manifest["records"]))

    prefixes = [r[0] for r in results]
    errors = [r[1] for r in results if r[1]]
    featurized = sum(1 for r in results if r[2])
    return {
        "prefixes": prefixes,
        "errors": errors,
        "featurized": featurized,
        "cached": len(results) - featurized - len(errors),
    }
