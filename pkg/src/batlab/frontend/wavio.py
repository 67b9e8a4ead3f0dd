"""Minimal RIFF/WAVE reader and writer.

Reads PCM 8/16/24-bit integer and 32-bit IEEE-float files, mono or multi
channel. Writes 16-bit PCM or 32-bit float. Byte output is deterministic.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import EmptyInputError, FormatError

_PCM = 1
_IEEE_FLOAT = 3
_EXTENSIBLE = 0xFFFE


def read_wav(path) -> tuple[np.ndarray, int]:
    """Return (samples, sample_rate); samples are float64 (n, channels) in [-1, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[0:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(blob):
        cid = blob[pos : pos + 4]
        (size,) = struct.unpack("<I", blob[pos + 4 : pos + 8])
        body = blob[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise FormatError(f"{path}: truncated {cid!r} chunk")
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)

    if fmt is None or len(fmt) < 16:
        raise FormatError(f"{path}: missing fmt chunk")
    if data is None:
        raise FormatError(f"{path}: missing data chunk")
    audio_format, channels, rate, _, _, bits = struct.unpack("<HHIIHH", fmt[:16])
    if audio_format == _EXTENSIBLE and len(fmt) >= 26:
        (audio_format,) = struct.unpack("<H", fmt[24:26])
    if channels < 1:
        raise FormatError(f"{path}: bad channel count {channels}")
    if len(data) == 0:
        raise EmptyInputError(f"{path}: zero-length data chunk")

    if audio_format == _PCM and bits == 16:
        x = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == _PCM and bits == 8:
        x = (np.frombuffer(data, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif audio_format == _PCM and bits == 24:
        raw = np.frombuffer(data, dtype=np.uint8)
        if raw.size % 3:
            raise FormatError(f"{path}: 24-bit payload not a multiple of 3 bytes")
        raw = raw.reshape(-1, 3).astype(np.int64)
        val = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
        val = np.where(val >= 1 << 23, val - (1 << 24), val)
        x = val.astype(np.float64) / float(1 << 23)
    elif audio_format == _IEEE_FLOAT and bits == 32:
        x = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported format tag {audio_format} / {bits}-bit")

    if x.size % channels:
        raise FormatError(f"{path}: sample count not divisible by channel count")
    return x.reshape(-1, channels), rate


def write_wav(path, samples: np.ndarray, sample_rate: int, bits: int = 16) -> None:
    """Write mono/multichannel audio; samples in [-1, 1], bits in {16, 32}."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    channels = x.shape[1]
    if bits == 16:
        payload = np.clip(np.round(x * 32767.0), -32768, 32767).astype("<i2").tobytes()
        audio_format, block = _PCM, 2 * channels
    elif bits == 32:
        payload = x.astype("<f4").tobytes()
        audio_format, block = _IEEE_FLOAT, 4 * channels
    else:
        raise FormatError(f"write_wav supports 16 or 32 bits, got {bits}")
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        audio_format,
        channels,
        sample_rate,
        sample_rate * block,
        block,
        bits,
        b"data",
        len(payload),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
