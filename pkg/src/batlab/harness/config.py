"""Run configuration: one JSON document covering every stage.

Unknown keys are rejected; saving echoes every default so a run directory
is reproducible from its config copy alone.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from ..errors import ConfigError
from ..frontend.dsp import FrontendConfig
from ..pretrain.decoder import DecoderConfig
from ..pretrain.trainer import PretrainConfig
from ..probe.cgp import ProbeConfig


@dataclass
class SynthConfig:
    n_clips: int = 512
    n_classes: int = 4
    duration_min: float = 1.0
    duration_max: float = 1.0
    sample_rate: int = 16000
    event_prob: float = 0.35
    noise_level: float = 0.01
    min_positives_per_split: int = 10
    layered: bool = False
    layered_depth: int = 6
    layered_width: int = 64
    layered_layer: int = 2  # 0-based designated layer
    splits: tuple = (0.7, 0.15, 0.15)


@dataclass
class EncoderSettings:
    """Architecture knobs; grid/patch_dim are derived from the data at run time."""

    depth: int = 4
    width: int = 64
    heads: int = 4
    mlp_ratio: float = 4.0
    gated: bool = True

    def to_runtime(self, grid: tuple, patch_dim: int):
        from ..encoder.model import EncoderConfig

        return EncoderConfig(depth=self.depth, width=self.width, heads=self.heads,
                             mlp_ratio=self.mlp_ratio, gated=self.gated,
                             patch_dim=patch_dim, grid=tuple(grid))


@dataclass
class RunConfig:
    seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    encoder: EncoderSettings = field(default_factory=EncoderSettings)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    target_frames: int | None = None  # crop/pad time frames before patchify

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1, default=list)
            fh.write("\n")


def _build(cls, doc: dict, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object, got {type(doc).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(doc) - set(fields)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for name, value in doc.items():
        f = fields[name]
        if f.default_factory is not dataclasses.MISSING and dataclasses.is_dataclass(f.default_factory):
            kwargs[name] = _build(f.default_factory, value, f"{where}.{name}")
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(doc: dict) -> RunConfig:
    return _build(RunConfig, doc, "config")


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(doc)
