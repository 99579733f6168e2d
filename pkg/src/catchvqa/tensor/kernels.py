"""Backend selection for the row kernels.

The compiled Cython module is used when it was built; otherwise the numpy
module is used. Set ``CATCHVQA_PURE_PYTHON=1`` to force the fallback.
Results agree between backends to rounding, not bit-for-bit, so a single
process always sticks to one backend.
"""

import os

from catchvqa.tensor import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("CATCHVQA_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from catchvqa.tensor import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

gelu_forward = _impl.gelu_forward
gelu_backward = _impl.gelu_backward
layernorm_forward = _impl.layernorm_forward
layernorm_backward = _impl.layernorm_backward
softmax_forward = _impl.softmax_forward
softmax_backward = _impl.softmax_backward

__all__ = [
    "BACKEND",
    "gelu_forward",
    "gelu_backward",
    "layernorm_forward",
    "layernorm_backward",
    "softmax_forward",
    "softmax_backward",
]
