"""Multi-scale split-attend-merge-stack gating for metric-learning retrieval.

Core layers: a small f64 autodiff tensor engine (compiled conv/pool
kernels with a numpy fallback), channel and spatial attention blocks, the
gating pyramid, batch-hard triplet + label-smoothed cross-entropy losses,
CMC/mAP retrieval evaluation, a toy backbone with a synthetic identity
benchmark, analytic MAC accounting, and a CLI harness.
"""

from .kernels import BACKEND as kernel_backend
from .tensor import ComputationTape, Tensor, backward, no_grad

__all__ = ["Tensor", "ComputationTape", "backward", "no_grad", "kernel_backend"]

__version__ = "0.1.0"
