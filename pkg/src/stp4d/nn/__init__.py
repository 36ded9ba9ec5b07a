from stp4d.nn.ops import (
    linear,
    layer_norm,
    attend,
    depthwise_conv3x3,
    sinusoidal_embedding,
    fourier_time_features,
)
from stp4d.nn.modules import (
    AttentionConfig,
    Linear,
    LayerNorm,
    Mlp,
    CrossAttention,
    WindowedSelfAttention,
    DepthwiseConv3x3,
    TransformerBlock,
    seed_parameters,
)
from stp4d.nn.store import ParameterStore, read_checkpoint, write_checkpoint
from stp4d.nn.gradcheck import GradCheckReport, gradient_check

__all__ = [
    "linear",
    "layer_norm",
    "attend",
    "depthwise_conv3x3",
    "sinusoidal_embedding",
    "fourier_time_features",
    "AttentionConfig",
    "Linear",
    "LayerNorm",
    "Mlp",
    "CrossAttention",
    "WindowedSelfAttention",
    "DepthwiseConv3x3",
    "TransformerBlock",
    "seed_parameters",
    "ParameterStore",
    "read_checkpoint",
    "write_checkpoint",
    "GradCheckReport",
    "gradient_check",
]
