"""Exception and warning types shared across the package."""


class BatlabError(Exception):
    """Base class for all package errors."""


class DimensionError(BatlabError):
    """Tensor shapes are incompatible for the requested operation."""


class ParameterError(BatlabError):
    """A hyperparameter or argument is outside its valid domain."""


class NumericsError(BatlabError):
    """Non-finite values or other numeric failures; message names the culprit."""


class NonDeterministicError(BatlabError):
    """A function expected to be deterministic returned differing results."""


class FormatError(BatlabError):
    """A file does not conform to its expected on-disk format."""


class EmptyInputError(BatlabError):
    """An input carries no data (zero-length audio, empty dataset, ...)."""


class ConfigError(BatlabError):
    """Configuration document rejected (unknown key, bad value, bad type)."""


class CheckpointError(BatlabError):
    """Container/checkpoint failed validation (magic, version, checksum)."""


class DegenerateInputWarning(UserWarning):
    """Input hit a defined-but-degenerate case (zero vector, zero variance)."""


class MaskAdjustedWarning(UserWarning):
    """A mask plan was adjusted to keep at least one visible/masked token."""
