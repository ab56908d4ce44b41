"""Token-wise affine stitching layer and its initializers."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, DimensionError
from ..numerics import DEFAULT_RCOND, Rng, Tensor, linear, pinv

KAIMING = "kaiming"
LEAST_SQUARES = "least_squares"


@dataclass
class LsInitResult:
    solution: np.ndarray  # float64 minimizer before the float32 cast
    residual: float       # ||A M - B||_F at the float64 solution
    rows: int
    underdetermined: bool


@dataclass
class StitchingLayer:
    """``out[b, n, :] = x[b, n, :] @ weight + bias`` (a 1x1 convolution over tokens)."""

    layer_id: int
    pair: int
    stage: int
    window_id: int
    weight: Tensor
    bias: Tensor
    init_method: str = KAIMING
    ls_residual: float | None = None
    notes: list[str] = field(default_factory=list)

    @classmethod
    def allocate(cls, layer_id: int, pair: int, stage: int, window_id: int, d_in: int, d_out: int) -> "StitchingLayer":
        return cls(
            layer_id, pair, stage, window_id,
            weight=Tensor(np.zeros((d_in, d_out), np.float32), requires_grad=True, name=f"stitch.{layer_id}.weight"),
            bias=Tensor(np.zeros(d_out, np.float32), requires_grad=True, name=f"stitch.{layer_id}.bias"),
        )

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def num_params(self) -> int:
        return self.weight.size + self.bias.size

    def __call__(self, h: Tensor) -> Tensor:
        if h.shape[-1] != self.d_in:
            raise DimensionError(f"stitching layer {self.layer_id} expects width {self.d_in}, got {h.shape}")
        return linear(h, self.weight, self.bias)

    def kaiming_init(self, rng: Rng) -> None:
        """Weight ~ Normal(0, 2 / d_in), bias zero."""
        self.weight.data = rng.normal((self.d_in, self.d_out), std=float(np.sqrt(2.0 / self.d_in)))
        self.bias.data = np.zeros(self.d_out, np.float32)
        self.init_method = KAIMING
        self.ls_residual = None

    def ls_init(self, a_feats, b_feats, rcond: float = DEFAULT_RCOND) -> LsInitResult:
        """Set weight to the least-squares map pinv(A) @ B; bias to zero."""
        a = np.asarray(a_feats.data if isinstance(a_feats, Tensor) else a_feats, dtype=np.float64)
        b = np.asarray(b_feats.data if isinstance(b_feats, Tensor) else b_feats, dtype=np.float64)
        if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
            raise DimensionError(f"ls_init: feature rows differ, A {a.shape} vs B {b.shape}")
        if a.shape[1] != self.d_in or b.shape[1] != self.d_out:
            raise DimensionError(
                f"ls_init: layer {self.layer_id} is {self.d_in}->{self.d_out}, features are {a.shape[1]}->{b.shape[1]}"
            )
        under = a.shape[0] < a.shape[1]
        if under:
            msg = f"ls_init: {a.shape[0]} rows < {a.shape[1]} columns, system is underdetermined"
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            self.notes.append(msg)
        m = pinv(a, rcond).data @ b
        residual = float(np.linalg.norm(a @ m - b))
        self.weight.data = m.astype(np.float32)
        self.bias.data = np.zeros(self.d_out, np.float32)
        self.init_method = LEAST_SQUARES
        self.ls_residual = residual
        return LsInitResult(m, residual, a.shape[0], under)


def ls_init(layer: StitchingLayer, a_feats, b_feats, rcond: float = DEFAULT_RCOND) -> LsInitResult:
    return layer.ls_init(a_feats, b_feats, rcond)


def check_init_method(name: str) -> str:
    if name not in (KAIMING, LEAST_SQUARES):
        raise ContractError(f"unknown init method {name!r}; expected {KAIMING!r} or {LEAST_SQUARES!r}")
    return name
