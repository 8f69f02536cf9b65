"""Backend selection for the hot kernels.

The compiled extension is preferred; the NumPy fallback is used when it is
missing or when ``GPRINV_BACKEND=python`` is set before import.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("GPRINV_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

im2col3d = _impl.im2col3d
col2im3d = _impl.col2im3d
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward
born_accumulate = _impl.born_accumulate
conv3d_direct = _impl.conv3d_direct
conv3d_direct_grad_weight = _impl.conv3d_direct_grad_weight

__all__ = [
    "BACKEND",
    "im2col3d",
    "col2im3d",
    "maxpool2_forward",
    "maxpool2_backward",
    "born_accumulate",
    "conv3d_direct",
    "conv3d_direct_grad_weight",
]
