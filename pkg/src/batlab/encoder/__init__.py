from .model import (
    BlockTrace,
    EncoderConfig,
    LayerStack,
    attention_sink_stat,
    collect_stack,
    embed_tokens,
    encoder_block,
    forward_full,
    init_encoder_weights,
    mhsa_forward,
    sincos_pos_2d,
    trunc_normal,
    wrap_weights,
)

__all__ = [
    "BlockTrace",
    "EncoderConfig",
    "LayerStack",
    "attention_sink_stat",
    "collect_stack",
    "embed_tokens",
    "encoder_block",
    "forward_full",
    "init_encoder_weights",
    "mhsa_forward",
    "sincos_pos_2d",
    "trunc_normal",
    "wrap_weights",
]
