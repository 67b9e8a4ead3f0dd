from .cgp import (
    CGPModel,
    ProbeConfig,
    ProbeState,
    cgp_forward,
    gate_aggregate,
    gate_report,
    init_probe_state,
    normalize_stack,
    pool_features,
    prototype_similarity,
)
from .training import (
    LinearModel,
    ProbeDataset,
    layerwise_linear_probe,
    linear_probe,
    train_probe,
)

__all__ = [
    "CGPModel",
    "ProbeConfig",
    "ProbeState",
    "cgp_forward",
    "gate_aggregate",
    "gate_report",
    "init_probe_state",
    "normalize_stack",
    "pool_features",
    "prototype_similarity",
    "LinearModel",
    "ProbeDataset",
    "layerwise_linear_probe",
    "linear_probe",
    "train_probe",
]
