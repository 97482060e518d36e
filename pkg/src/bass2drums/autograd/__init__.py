"""Reverse-mode automatic differentiation over numpy arrays.

Small by design: tensors wrap ndarrays, every operation records a backward
closure, and gradients flow through a topological sweep.  The op set is
exactly what the translation models need (elementwise arithmetic and
activations, reductions, 2-D convolution and its transpose, instance
normalization, concatenation) plus Adam, binary checkpointing, and a
finite-difference gradient checker.
"""

from .tensor import Tensor, concat, get_default_dtype, set_default_dtype
from .ops import conv2d, conv_transpose2d, instance_norm
from .optim import Adam
from .checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from . import gradcheck

__all__ = [
    "Tensor",
    "concat",
    "get_default_dtype",
    "set_default_dtype",
    "conv2d",
    "conv_transpose2d",
    "instance_norm",
    "Adam",
    "CheckpointError",
    "read_checkpoint",
    "write_checkpoint",
    "gradcheck",
]
