from .masking import MaskPlan, inverse_block_mask, random_mask
from .teacher import LambdaSchedule, Targets, TeacherState, ema_update, make_targets
from .decoder import DecoderConfig, decoder_forward, init_decoder_weights
from .trainer import (
    LossReport,
    PretrainConfig,
    PretrainTrainer,
    collapse_diagnostics,
    mlr_loss,
)

__all__ = [
    "MaskPlan",
    "inverse_block_mask",
    "random_mask",
    "LambdaSchedule",
    "Targets",
    "TeacherState",
    "ema_update",
    "make_targets",
    "DecoderConfig",
    "decoder_forward",
    "init_decoder_weights",
    "LossReport",
    "PretrainConfig",
    "PretrainTrainer",
    "collapse_diagnostics",
    "mlr_loss",
]
