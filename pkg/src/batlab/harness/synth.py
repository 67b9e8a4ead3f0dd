"""Synthetic desk-scale corpora: tones, chirps and noise bursts with labels.

Two flavors:
  multi-label  - each class has an acoustic signature event added with
                 probability event_prob; labels are the event subset.
  layered      - fixed-duration multi-class clips built for the layered
                 probing task (see layered.py): three presence tones whose
                 parity encodes the class, plus a constant pilot tone that
                 pins the per-clip dB/min-max scale.

Same seed, same bytes: WAVs and manifest are deterministic.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..errors import ParameterError
from ..frontend.wavio import write_wav
from ..seeding import SeedStream
from .config import SynthConfig

PILOT_AMP = 0.4
TONE_AMP = 0.22
LAYERED_NOISE = 0.003


def _tone(freq: float, sr: int, n: int, phase: float = 0.0) -> np.ndarray:
    return np.sin(2 * np.pi * freq * np.arange(n) / sr + phase)


def _chirp(f0: float, f1: float, sr: int, n: int) -> np.ndarray:
    t = np.arange(n) / sr
    sweep = f0 + (f1 - f0) * t / (n / sr) / 2.0
    return np.sin(2 * np.pi * sweep * t)


def _band_noise(rng, f_lo: float, f_hi: float, sr: int, n: int) -> np.ndarray:
    spec = np.fft.rfft(rng.normal(size=n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    spec[(freqs < f_lo) | (freqs > f_hi)] = 0.0
    x = np.fft.irfft(spec, n=n)
    peak = np.max(np.abs(x))
    return x / peak if peak > 0 else x


def _ramp(n: int, sr: int, ms: float = 10.0) -> np.ndarray:
    k = min(n // 2, max(1, int(sr * ms / 1000)))
    env = np.ones(n)
    env[:k] = np.linspace(0.0, 1.0, k)
    env[-k:] = np.linspace(1.0, 0.0, k)
    return env


def class_signature(c: int) -> dict:
    kinds = ("tone", "chirp", "burst")
    freq = 420.0 * (1.7 ** c)
    while freq > 6500.0:
        freq /= 8.0
    return {"kind": kinds[c % 3], "freq": freq}


def _event(sig: dict, rng, sr: int, n_clip: int) -> np.ndarray:
    length = int(n_clip * rng.uniform(0.3, 0.8))
    onset = int(rng.integers(0, max(1, n_clip - length)))
    amp = rng.uniform(0.25, 0.5)
    if sig["kind"] == "tone":
        seg = _tone(sig["freq"], sr, length, phase=rng.uniform(0, 2 * np.pi))
    elif sig["kind"] == "chirp":
        seg = _chirp(sig["freq"], 1.8 * sig["freq"], sr, length)
    else:
        seg = _band_noise(rng, sig["freq"], 1.35 * sig["freq"], sr, length)
    out = np.zeros(n_clip)
    out[onset : onset + length] = amp * seg * _ramp(length, sr)
    return out


def _draw_split(rng, fractions) -> str:
    u = rng.uniform()
    if u < fractions[0]:
        return "train"
    if u < fractions[0] + fractions[1]:
        return "valid"
    return "test"


def _multi_label_plan(cfg: SynthConfig, rng) -> tuple[np.ndarray, list]:
    """Draw (labels, splits) jointly until every class clears the per-split
    positive minimum; deterministic given the generator state."""
    for _ in range(500):
        labels = (rng.uniform(size=(cfg.n_clips, cfg.n_classes)) < cfg.event_prob).astype(int)
        splits = [_draw_split(rng, cfg.splits) for _ in range(cfg.n_clips)]
        ok = True
        for split in ("train", "valid", "test"):
            members = [i for i, s in enumerate(splits) if s == split]
            if labels[members].sum(axis=0).min() < cfg.min_positives_per_split:
                ok = False
                break
        if ok:
            return labels, splits
    raise ParameterError(
        "could not satisfy min_positives_per_split; corpus too small for the constraint")


def _layered_plan(cfg: SynthConfig, rng) -> tuple[np.ndarray, np.ndarray, list]:
    """Classes (2 bits) and five tone-presence bits carrying them as parities.

    b1 = u0^u1^u2 and b2 = u2^u3^u4: no single tone (nor any linear readout
    of tone presences) reveals a class bit outright.
    """
    for _ in range(500):
        classes = rng.integers(0, cfg.n_classes, size=cfg.n_clips)
        free = rng.integers(0, 2, size=(cfg.n_clips, 3))  # u0, u1, u3
        splits = [_draw_split(rng, cfg.splits) for _ in range(cfg.n_clips)]
        ok = True
        for split in ("train", "valid", "test"):
            members = [i for i, s in enumerate(splits) if s == split]
            counts = np.bincount(classes[members], minlength=cfg.n_classes)
            if counts.min() < cfg.min_positives_per_split:
                ok = False
                break
        if ok:
            b1 = classes & 1
            b2 = (classes >> 1) & 1
            u0, u1, u3 = free[:, 0], free[:, 1], free[:, 2]
            u2 = b1 ^ u0 ^ u1
            u4 = b2 ^ u2 ^ u3
            u = np.stack([u0, u1, u2, u3, u4], axis=1)
            return classes, u, splits
    raise ParameterError("could not balance layered splits; corpus too small")


def layered_tone_frequencies(frontend_cfg, sample_rate: int) -> dict:
    """Tone/pilot frequencies centered on fixed mel filters, one per patch row."""
    from ..frontend.dsp import hz_to_mel, mel_to_hz

    mel_pts = np.linspace(hz_to_mel(frontend_cfg.f_min), hz_to_mel(frontend_cfg.f_max),
                          frontend_cfg.n_mels + 2)
    k = frontend_cfg.patch_size
    # one tone per patch row, each at a different within-patch offset so the
    # tones stay distinguishable in flattened-patch space
    offsets = (3, 6, 9, 12, 8)
    bins = [r * k + offsets[r - 1] for r in range(1, 6)]
    pilot_bin = int(7.25 * k)
    return {
        "tones": [float(mel_to_hz(mel_pts[b + 1])) for b in bins],
        "tone_bins": bins,
        "pilot": float(mel_to_hz(mel_pts[pilot_bin + 1])),
        "pilot_bin": pilot_bin,
    }


def synth_dataset(cfg: SynthConfig, frontend_cfg, seed: int, out_dir) -> dict:
    """Generate WAVs plus a manifest; layered mode also builds and saves the
    frozen constructed encoder (see layered.build_layered_encoder)."""
    if cfg.layered and cfg.n_classes != 4:
        raise ParameterError("the layered task is defined for exactly 4 classes")
    out_dir = Path(out_dir)
    (out_dir / "wavs").mkdir(parents=True, exist_ok=True)
    stream = SeedStream(seed)
    rng_plan = stream.generator("synth.plan")
    rng_audio = stream.generator("synth.audio")
    sr = cfg.sample_rate

    records = []
    if cfg.layered:
        classes, u_bits, splits = _layered_plan(cfg, rng_plan)
        freqs = layered_tone_frequencies(frontend_cfg, sr)
        n_clip = int(round(cfg.duration_min * sr))
        for i in range(cfg.n_clips):
            x = LAYERED_NOISE * rng_audio.normal(size=n_clip)
            x += PILOT_AMP * _tone(freqs["pilot"], sr, n_clip)
            for j, freq in enumerate(freqs["tones"]):
                if u_bits[i, j]:
                    x += TONE_AMP * _tone(freq, sr, n_clip,
                                          phase=rng_audio.uniform(0, 2 * np.pi))
            peak = np.max(np.abs(x))
            if peak > 0.95:
                x *= 0.95 / peak
            path = out_dir / "wavs" / f"clip_{i:05d}.wav"
            write_wav(path, x, sr)
            records.append({"path": str(path.relative_to(out_dir)),
                            "labels": [int(classes[i])], "split": splits[i]})
        manifest = {
            "task": "multi-class",
            "classes": [f"class_{c}" for c in range(cfg.n_classes)],
            "records": records,
            "synth": asdict(cfg),
            "seed": seed,
            "layered": {"tone_frequencies": freqs, "u_bits": u_bits.tolist()},
        }
        _attach_layered_encoder(manifest, cfg, frontend_cfg, seed, out_dir, classes, u_bits)
    else:
        labels, splits = _multi_label_plan(cfg, rng_plan)
        sigs = [class_signature(c) for c in range(cfg.n_classes)]
        for i in range(cfg.n_clips):
            dur = rng_audio.uniform(cfg.duration_min, cfg.duration_max)
            n_clip = max(int(round(dur * sr)), frontend_cfg.win_length)
            x = cfg.noise_level * rng_audio.normal(size=n_clip)
            for c in range(cfg.n_classes):
                if labels[i, c]:
                    x += _event(sigs[c], rng_audio, sr, n_clip)
            peak = np.max(np.abs(x))
            if peak > 0.9:
                x *= 0.9 / peak
            path = out_dir / "wavs" / f"clip_{i:05d}.wav"
            write_wav(path, x, sr)
            records.append({"path": str(path.relative_to(out_dir)),
                            "labels": [c for c in range(cfg.n_classes) if labels[i, c]],
                            "split": splits[i]})
        manifest = {
            "task": "multi-label",
            "classes": [f"class_{c}" for c in range(cfg.n_classes)],
            "records": records,
            "synth": asdict(cfg),
            "seed": seed,
        }

    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1, default=list)
        fh.write("\n")
    return manifest


def _attach_layered_encoder(manifest, cfg: SynthConfig, frontend_cfg, seed, out_dir,
                            classes, u_bits) -> None:
    """Featurize the fresh corpus, build the frozen constructed encoder, and
    record its checkpoint plus the designated layer in the manifest."""
    import dataclasses

    from ..seeding import SeedStream
    from .checkpoint import save_checkpoint
    from .ingest import cache_root, ingest_manifest, load_cached
    from .layered import build_layered_encoder

    out_dir = Path(out_dir)
    result = ingest_manifest(manifest, out_dir, frontend_cfg, cache_root(out_dir))
    if result["errors"]:
        raise ParameterError(f"layered featurization failed: {result['errors'][:3]}")
    seqs = [load_cached(p) for p in result["prefixes"]]
    patches = np.stack([s.patches for s in seqs])
    grid = seqs[0].grid
    enc_cfg, weights, diagnostics = build_layered_encoder(
        patches, grid, u_bits, np.asarray(classes),
        manifest["layered"]["tone_frequencies"]["tone_bins"],
        depth=cfg.layered_depth, width=cfg.layered_width, l_star=cfg.layered_layer,
        patch_size=frontend_cfg.patch_size, rng=SeedStream(seed).generator("layered.encoder"),
    )
    arrays = {f"enc.{k}": v for k, v in weights.items()}
    sidecar = {
        "kind": "frozen-encoder",
        "encoder_config": {
            "depth": enc_cfg.depth, "width": enc_cfg.width, "heads": enc_cfg.heads,
            "mlp_ratio": enc_cfg.mlp_ratio, "gated": enc_cfg.gated,
            "patch_dim": enc_cfg.patch_dim, "grid": list(enc_cfg.grid),
        },
        "frontend_config": dataclasses.asdict(frontend_cfg),
        "seed": seed,
        "diagnostics": diagnostics,
    }
    path = save_checkpoint(out_dir / "layered_encoder", arrays, sidecar)
    manifest["layered"]["designated_layer"] = cfg.layered_layer
    manifest["layered"]["encoder_checkpoint"] = str(Path(path).name)
    manifest["layered"]["diagnostics"] = diagnostics
