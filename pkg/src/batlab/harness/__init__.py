from ..seeding import SeedStream
from .container import read_container, write_container
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config

__all__ = [
    "SeedStream",
    "read_container",
    "write_container",
    "load_checkpoint",
    "save_checkpoint",
    "RunConfig",
    "load_config",
]
