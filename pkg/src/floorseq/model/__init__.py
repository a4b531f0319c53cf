"""Sequence decoder, context encoders, MLP variant, and the training loop."""

from .config import ModelConfig
from .context import context_length, encode_context, mixer_encode, resnet_encode
from .decoder import (
    DropoutPlan,
    LOG2E,
    attn_layer,
    embed_sequence,
    forward,
    forward_batch,
    init_params,
    masked_loss,
    nats_to_bits,
    position_ids,
    sequence_loss,
)
from .mlp import init_mlp_params, mlp_forward, mlp_forward_batch, window_indices
from .session import DecoderSession, MlpSession
from .training import (
    DivergenceError,
    TrainSettings,
    conditioning_image,
    init_model_params,
    make_batch,
    model_stream,
    train,
)

__all__ = [
    "DecoderSession",
    "DivergenceError",
    "DropoutPlan",
    "LOG2E",
    "MlpSession",
    "ModelConfig",
    "TrainSettings",
    "attn_layer",
    "conditioning_image",
    "context_length",
    "embed_sequence",
    "encode_context",
    "forward",
    "forward_batch",
    "init_mlp_params",
    "init_model_params",
    "init_params",
    "make_batch",
    "masked_loss",
    "mixer_encode",
    "mlp_forward",
    "mlp_forward_batch",
    "model_stream",
    "nats_to_bits",
    "position_ids",
    "resnet_encode",
    "sequence_loss",
    "train",
    "window_indices",
]
