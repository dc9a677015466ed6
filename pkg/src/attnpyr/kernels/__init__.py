"""Convolution/pooling kernel backend, selected once at import.

The compiled Cython core is preferred; the vectorized numpy implementation
is the fallback. ``ATTNPYR_KERNELS`` forces a backend (``cython``/``numpy``).
Both expose the same five functions on f64 C-contiguous arrays:

    conv2d_forward, conv2d_backward_input, conv2d_backward_weight,
    avg_pool2d_forward, avg_pool2d_backward
"""

import os

from . import reference

_choice = os.environ.get("ATTNPYR_KERNELS", "auto").lower()

if _choice == "numpy":
    _impl = reference
    BACKEND = "numpy"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        if _choice == "cython":
            raise
        _impl = reference
        BACKEND = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_weight = _impl.conv2d_backward_weight
avg_pool2d_forward = _impl.avg_pool2d_forward
avg_pool2d_backward = _impl.avg_pool2d_backward
