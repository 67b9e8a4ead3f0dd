"""Audio-to-spectrogram pipelines.

Two routes to model input:
  modern  - power mel -> per-sample dB compression -> local min-max to [0, 1]
  legacy  - log(mel + eps) -> global standardization with caller-supplied stats

Both share the same framing (default 25 ms window / 10 ms hop, 128 HTK mel
bins) and are fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyInputError, ParameterError
from .wavio import read_wav


@dataclass
class Waveform:
    samples: np.ndarray  # (n,) float64 in [-1, 1]
    sample_rate: int
    source_id: str = ""


@dataclass
class FrontendConfig:
    n_fft: int = 512
    win_length: int = 400
    hop: int = 160
    n_mels: int = 128
    f_min: float = 0.0
    f_max: float = 8000.0
    top_db: float = 80.0
    patch_size: int = 16
    pipeline: str = "modern"  # modern | legacy
    legacy_mean: float = 0.0
    legacy_std: float = 1.0
    legacy_eps: float = 1e-6


@dataclass
class MelSpec:
    values: np.ndarray  # (T, F)
    pipeline_tag: str
    win_length: int
    hop: int
    n_fft: int
    n_mels: int
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.values.shape


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_fft: int, sample_rate: int, n_mels: int, f_min: float, f_max: float) -> np.ndarray:
    """Triangular HTK-scale filters, shape (n_mels, n_fft // 2 + 1).

    A filter narrower than the FFT grid (possible at the low end for dense
    banks) snaps to its nearest FFT bin so every filter has support.
    """
    n_bins = n_fft // 2 + 1
    fft_freqs = np.arange(n_bins) * (sample_rate / n_fft)
    mel_pts = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fb = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, mid, hi = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        rising = (fft_freqs - lo) / max(mid - lo, 1e-12)
        falling = (hi - fft_freqs) / max(hi - mid, 1e-12)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
        if not fb[i].any():
            fb[i, int(round(mid / (sample_rate / n_fft)))] = 1.0
    return fb


def resample_sinc(x: np.ndarray, sr_in: int, sr_out: int, zeros: int = 32) -> np.ndarray:
    """Windowed-sinc (Hann) resampling to round(n * sr_out / sr_in) samples."""
    x = np.asarray(x, dtype=np.float64)
    if sr_in == sr_out:
        return x.copy()
    n_out = int(round(x.size * sr_out / sr_in))
    ratio = sr_out / sr_in
    cutoff = min(1.0, ratio)  # fraction of the input Nyquist
    half = int(np.ceil(zeros / cutoff))
    padded = np.concatenate([np.zeros(half), x, np.zeros(half + 1)])
    taps = np.arange(-half, half + 1)

    out = np.empty(n_out)
    chunk = max(1, (1 << 22) // (2 * half + 1))
    for start in range(0, n_out, chunk):
        stop = min(n_out, start + chunk)
        centers = np.arange(start, stop) / ratio
        base = np.floor(centers).astype(np.int64)
        frac = centers - base
        # distance from each output center to the contributing input samples
        t = taps[None, :] - frac[:, None]
        kern = cutoff * np.sinc(cutoff * t)
        kern *= 0.5 * (1.0 + np.cos(np.pi * t / (half + 1)))  # Hann taper
        kern /= kern.sum(axis=1, keepdims=True)
        rows = padded[(base[:, None] + half) + taps[None, :]]
        out[start:stop] = (rows * kern).sum(axis=1)
    return out


def load_audio(path, target_sr: int = 16000) -> Waveform:
    """Read a PCM WAV, average to mono, resample, keep peak within 1.0."""
    data, rate = read_wav(path)
    if data.shape[0] == 0:
        raise EmptyInputError(f"{path}: no samples")
    mono = data.mean(axis=1)
    if rate != target_sr:
        mono = resample_sinc(mono, rate, target_sr)
    peak = np.max(np.abs(mono)) if mono.size else 0.0
    if peak > 1.0:
        mono = mono / peak
    return Waveform(samples=mono, sample_rate=target_sr, source_id=str(path))


def _power_mel(wave: Waveform, cfg: FrontendConfig) -> np.ndarray:
    x = wave.samples
    if x.size < cfg.win_length:
        raise EmptyInputError(
            f"waveform of {x.size} samples is shorter than one {cfg.win_length}-sample window"
        )
    if cfg.f_max > wave.sample_rate / 2:
        raise ParameterError(f"f_max={cfg.f_max} exceeds Nyquist {wave.sample_rate / 2}")
    n_frames = 1 + (x.size - cfg.win_length) // cfg.hop
    idx = np.arange(cfg.win_length)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    frames = x[idx]
    window = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(cfg.win_length) / cfg.win_length))
    spec = np.abs(np.fft.rfft(frames * window, n=cfg.n_fft, axis=1)) ** 2
    fb = mel_filterbank(cfg.n_fft, wave.sample_rate, cfg.n_mels, cfg.f_min, cfg.f_max)
    return spec @ fb.T


def mel_spectrogram(wave: Waveform, cfg: FrontendConfig | None = None) -> MelSpec:
    """Nonnegative power-mel matrix (T, F); no pre-emphasis, no dithering."""
    cfg = cfg or FrontendConfig()
    mel = _power_mel(wave, cfg)
    return MelSpec(mel, "modern", cfg.win_length, cfg.hop, cfg.n_fft, cfg.n_mels,
                   meta={"stage": "power"})


def db_compress(mel: MelSpec, top_db: float = 80.0, floor: float = 1e-10) -> MelSpec:
    """Decibels referenced to the per-sample maximum, clamped to [-top_db, 0]."""
    v = mel.values
    ref = max(float(v.max()), floor)
    out = 10.0 * (np.log10(np.maximum(v, floor)) - np.log10(ref))
    out = np.maximum(out, -top_db)
    meta = dict(mel.meta, stage="db", top_db=top_db)
    return MelSpec(out, mel.pipeline_tag, mel.win_length, mel.hop, mel.n_fft, mel.n_mels, meta)


def minmax_normalize(mel: MelSpec) -> MelSpec:
    """Per-spectrogram rescale to [0, 1]; a constant input maps to zeros."""
    v = mel.values
    lo, hi = float(v.min()), float(v.max())
    out = np.zeros_like(v) if hi == lo else (v - lo) / (hi - lo)
    meta = dict(mel.meta, stage="minmax")
    return MelSpec(out, mel.pipeline_tag, mel.win_length, mel.hop, mel.n_fft, mel.n_mels, meta)


def modern_frontend(wave: Waveform, cfg: FrontendConfig | None = None) -> MelSpec:
    cfg = cfg or FrontendConfig()
    return minmax_normalize(db_compress(mel_spectrogram(wave, cfg), top_db=cfg.top_db))


def legacy_frontend(wave: Waveform, dataset_mean: float, dataset_std: float,
                    cfg: FrontendConfig | None = None) -> MelSpec:
    """log(mel + eps) features standardized with caller-supplied global stats.

    The stats are an explicit external dependency of this pipeline; they are
    recorded in the output's meta.
    """
    cfg = cfg or FrontendConfig()
    if dataset_std <= 0:
        raise ParameterError(f"dataset_std must be > 0, got {dataset_std}")
    logmel = np.log(_power_mel(wave, cfg) + cfg.legacy_eps)
    out = (logmel - dataset_mean) / dataset_std
    meta = {"stage": "standardized", "dataset_mean": dataset_mean, "dataset_std": dataset_std}
    return MelSpec(out, "legacy", cfg.win_length, cfg.hop, cfg.n_fft, cfg.n_mels, meta)


def run_frontend(wave: Waveform, cfg: FrontendConfig) -> MelSpec:
    if cfg.pipeline == "modern":
        return modern_frontend(wave, cfg)
    if cfg.pipeline == "legacy":
        return legacy_frontend(wave, cfg.legacy_mean, cfg.legacy_std, cfg)
    raise ParameterError(f"unknown pipeline {cfg.pipeline!r}")
