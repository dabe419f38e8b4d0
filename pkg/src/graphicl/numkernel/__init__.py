"""Minimal float64 reverse-mode kernel covering exactly the ops the model needs."""

from graphicl.numkernel import ops
from graphicl.numkernel.gradcheck import check_gradients, numeric_grad, relative_error
from graphicl.numkernel.ops import forward
from graphicl.numkernel.optim import OptimizerState, optimizer_step
from graphicl.numkernel.tensor import GradTape, SparseMatrix, Tensor, as_tensor, backward

__all__ = [
    "GradTape",
    "OptimizerState",
    "SparseMatrix",
    "Tensor",
    "as_tensor",
    "backward",
    "check_gradients",
    "forward",
    "numeric_grad",
    "ops",
    "optimizer_step",
    "relative_error",
]
