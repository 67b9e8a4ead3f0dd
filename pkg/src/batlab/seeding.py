"""Master-seed fan-out into named, counter-indexed substreams.

Each (name, index) pair hashes to an independent 64-bit seed, so toggling
one component never shifts another component's randomness.
"""

from __future__ import annotations

import hashlib

import numpy as np


class SeedStream:
    def __init__(self, master: int):
        self.master = int(master)

    def seed(self, name: str, index: int = 0) -> int:
        digest = hashlib.sha256(f"{self.master}:{name}:{index}".encode()).digest()
        return int.from_bytes(digest[:8], "little")

    def generator(self, name: str, index: int = 0) -> np.random.Generator:
        return np.random.default_rng(self.seed(name, index))
