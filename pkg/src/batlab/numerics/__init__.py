from .tensor import Tensor, Tape, set_dtype, get_dtype, using_dtype
from . import ops
from .gradcheck import grad_check, GradCheckReport
from .optim import AdamW, OptimState, lr_schedule

__all__ = [
    "Tensor",
    "Tape",
    "set_dtype",
    "get_dtype",
    "using_dtype",
    "ops",
    "grad_check",
    "GradCheckReport",
    "AdamW",
    "OptimState",
    "lr_schedule",
]
