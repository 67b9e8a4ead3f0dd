from .wavio import read_wav, write_wav
from .dsp import (
    FrontendConfig,
    MelSpec,
    Waveform,
    db_compress,
    hz_to_mel,
    legacy_frontend,
    load_audio,
    mel_filterbank,
    mel_spectrogram,
    mel_to_hz,
    minmax_normalize,
    modern_frontend,
    resample_sinc,
)
from .patches import PatchSequence, patchify, unpatchify

__all__ = [
    "read_wav",
    "write_wav",
    "FrontendConfig",
    "MelSpec",
    "Waveform",
    "db_compress",
    "hz_to_mel",
    "legacy_frontend",
    "load_audio",
    "mel_filterbank",
    "mel_spectrogram",
    "mel_to_hz",
    "minmax_normalize",
    "modern_frontend",
    "resample_sinc",
    "PatchSequence",
    "patchify",
    "unpatchify",
]
