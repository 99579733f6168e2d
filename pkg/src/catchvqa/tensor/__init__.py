from catchvqa.tensor import kernels
from catchvqa.tensor.gradcheck import grad_check
from catchvqa.tensor.optim import AdamW, AdamWState, adamw_step
from catchvqa.tensor.params import Parameter, ParameterStore, checksum
from catchvqa.tensor.tensor import (
    MASK_VALUE,
    Tensor,
    add,
    as_tensor,
    backward,
    broadcast_rows,
    concat,
    embedding,
    gelu,
    getitem,
    layer_norm,
    linear,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    softmax,
    softmax_cross_entropy,
    sub,
    swap_last,
    transpose,
    tsum,
)

__all__ = [
    "AdamW",
    "AdamWState",
    "MASK_VALUE",
    "Parameter",
    "ParameterStore",
    "Tensor",
    "adamw_step",
    "add",
    "as_tensor",
    "backward",
    "broadcast_rows",
    "checksum",
    "concat",
    "embedding",
    "gelu",
    "getitem",
    "grad_check",
    "kernels",
    "layer_norm",
    "linear",
    "matmul",
    "mean",
    "mul",
    "relu",
    "reshape",
    "softmax",
    "softmax_cross_entropy",
    "sub",
    "swap_last",
    "transpose",
    "tsum",
]
