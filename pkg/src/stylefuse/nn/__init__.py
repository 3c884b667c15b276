"""Minimal dense tensor library with reverse-mode differentiation."""

from .gradcheck import finite_diff_check, finite_diff_check_params
from .layers import (MLP, Embedding, LayerNorm, Linear, Module, SelfAttention,
                     TransformerBlock, sinusoidal_embedding)
from .optim import AdamW
from .tensor import (GradientError, ShapeError, Tensor, as_tensor, broadcast_to, clamp, concat,
                     cross_entropy, embedding, exp, gelu, layer_norm, log, log_softmax,
                     matmul, mean, mse_loss, no_grad, sigmoid, softmax, sqrt, stack, tanh,
                     tsum)

__all__ = [
    "AdamW", "broadcast_to", "Embedding", "GradientError", "LayerNorm", "Linear", "MLP", "Module",
    "SelfAttention", "ShapeError", "Tensor", "TransformerBlock", "as_tensor", "clamp",
    "concat", "cross_entropy", "embedding", "exp", "finite_diff_check",
    "finite_diff_check_params", "gelu", "layer_norm", "log", "log_softmax", "matmul",
    "mean", "mse_loss", "no_grad", "sigmoid", "sinusoidal_embedding", "softmax", "sqrt",
    "stack", "tanh", "tsum",
]
