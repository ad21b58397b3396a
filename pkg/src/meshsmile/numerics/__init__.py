from .functional import (
    attention,
    bce_loss,
    gelu,
    gumbel_softmax,
    knn_indices,
    layer_norm,
    linear,
    multi_head_attention,
    softmax,
    top_k_select,
    transformer_block,
)
from .gradcheck import GradCheckReport, grad_check, grad_check_many
from .nn import LayerNorm, Linear, Module, MultiHeadAttention, TransformerBlock
from .optim import AdamW, AdamWState, adamw_step
from .tensor import Parameter, Tensor, concat, gather_rows, no_grad, stack, tensor, where

__all__ = [
    "AdamW", "AdamWState", "GradCheckReport", "LayerNorm", "Linear", "Module",
    "MultiHeadAttention", "Parameter", "Tensor", "TransformerBlock", "adamw_step",
    "attention", "bce_loss", "concat", "gather_rows", "gelu", "grad_check",
    "grad_check_many", "gumbel_softmax", "knn_indices", "layer_norm", "linear",
    "multi_head_attention", "no_grad", "softmax", "stack", "tensor", "top_k_select",
    "transformer_block", "where",
]
