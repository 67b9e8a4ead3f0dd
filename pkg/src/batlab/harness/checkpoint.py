"""Checkpoints: a tensor container plus a JSON sidecar.

The sidecar carries the config echo, step/schedule counters, RNG states and
the code version. save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

from .. import __version__
from ..errors import CheckpointError
from .container import read_container, write_container


def save_checkpoint(prefix, arrays: dict, sidecar: dict) -> str:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    doc = dict(sidecar)
    doc.setdefault("format", "batlab-checkpoint")
    doc.setdefault("code_version", __version__)
    write_container(str(prefix) + ".batl", arrays)
    with open(str(prefix) + ".json", "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return str(prefix)


def load_checkpoint(prefix) -> tuple[dict, dict]:
    batl = str(prefix) + ".batl"
    meta = str(prefix) + ".json"
    if not Path(batl).exists() or not Path(meta).exists():
        raise CheckpointError(f"checkpoint {prefix} is missing its .batl or .json half")
    arrays = read_container(batl)
    with open(meta) as fh:
        sidecar = json.load(fh)
    if sidecar.get("format") != "batlab-checkpoint":
        raise CheckpointError(f"{meta}: not a batlab checkpoint sidecar")
    return arrays, sidecar
