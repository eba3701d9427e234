from .functional import log_softmax_rows, matmul, relu, sigmoid, softmax_rows
from .gradcheck import GradcheckError, gradcheck
from .layers import (
    AttentionBlock,
    Embedding,
    FeedForward,
    GRULayer,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    cross_attention,
    gru_forward,
    self_attention,
    sinusoidal_positions,
)
from .tensor import ShapeError, Tensor

__all__ = [
    "AttentionBlock", "Embedding", "FeedForward", "GRULayer", "GradcheckError",
    "LayerNorm", "Linear", "Module", "MultiHeadAttention", "ShapeError", "Tensor",
    "cross_attention", "gradcheck", "gru_forward", "log_softmax_rows", "matmul",
    "relu", "self_attention", "sigmoid", "sinusoidal_positions", "softmax_rows",
]
