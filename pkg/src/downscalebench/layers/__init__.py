from .functional import (
    conv2d_backward,
    conv2d_forward,
    layernorm_backward,
    layernorm_forward,
    linear_backward,
    linear_forward,
    mhsa_backward,
    mhsa_forward,
    pointwise_backward,
    pointwise_forward,
    relu_backward,
    relu_forward,
    softmax,
    spectral_conv_backward,
    spectral_conv_forward,
)
from .gradcheck import GradCheckResult, grad_check, grad_check_report
from .modules import (
    Conv2d,
    FeedForward,
    FourierBlock,
    Identity,
    LayerNorm,
    Linear,
    Module,
    MultiHeadSelfAttention,
    Parameter,
    PatchEmbed,
    Pointwise,
    ReLU,
    ResidualBlock,
    Sequential,
    SpectralConv2d,
    TransformerBlock,
    Unpatch,
)
