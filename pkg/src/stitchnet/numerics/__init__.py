"""Tensor algebra, reverse-mode autodiff, SVD/pinv and seeded RNG."""

from .linalg import DEFAULT_RCOND, MAX_SWEEPS, SvdResult, lstsq, pinv, svd
from .rng import Rng
from .tensor import (
    Tensor,
    concat,
    cross_entropy,
    gelu,
    kl_divergence,
    layer_norm,
    linear,
    log_softmax,
    matmul,
    no_grad,
    softmax,
    tensor,
)


def backward(loss: Tensor) -> None:
    """Free-function form of :meth:`Tensor.backward`."""
    loss.backward()


__all__ = [
    "DEFAULT_RCOND", "MAX_SWEEPS", "Rng", "SvdResult", "Tensor", "backward", "concat",
    "cross_entropy", "gelu", "kl_divergence", "layer_norm", "linear", "log_softmax",
    "lstsq", "matmul", "no_grad", "pinv", "softmax", "svd", "tensor",
]
