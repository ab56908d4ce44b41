"""AdamW with per-group learning-rate scales and a cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..numerics import Tensor


def cosine_lr(step: int, total: int, base_lr: float, warmup: int = 0, min_lr: float = 0.0) -> float:
    """Linear warmup for ``warmup`` steps, then cosine decay from ``base_lr`` to ``min_lr``."""
    if warmup and step < warmup:
        return base_lr * (step + 1) / warmup
    if total <= warmup:
        return base_lr
    progress = min(1.0, (step - warmup) / max(1, total - warmup))
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * progress))


@dataclass
class _State:
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


@dataclass
class AdamW:
    """Decoupled weight decay Adam.

    Parameters whose ``grad`` is ``None`` at ``step()`` are skipped entirely
    (no moment update, no decay), so only the sampled sub-network moves.
    Weight decay applies to matrices only; biases and norm scales are exempt.
    """

    groups: list[tuple[list[Tensor], float]]  # (params, lr multiplier)
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.05
    state: dict[int, _State] = field(default_factory=dict)

    @classmethod
    def single(cls, params, **kw) -> "AdamW":
        return cls([(list(params), 1.0)], **kw)

    def zero_grad(self) -> None:
        for params, _ in self.groups:
            for p in params:
                p.grad = None

    def step(self, lr: float) -> None:
        b1, b2 = self.betas
        for params, scale in self.groups:
            glr = lr * scale
            if glr == 0.0:
                continue
            for p in params:
                if p.grad is None:
                    continue
                st = self.state.setdefault(id(p), _State())
                g = p.grad
                if st.m is None:
                    st.m = np.zeros_like(p.data)
                    st.v = np.zeros_like(p.data)
                st.step += 1
                st.m *= b1
                st.m += (1 - b1) * g
                st.v *= b2
                st.v += (1 - b2) * (g * g)
                mhat = st.m / (1 - b1 ** st.step)
                vhat = st.v / (1 - b2 ** st.step)
                if self.weight_decay and p.ndim >= 2:
                    p.data *= 1.0 - glr * self.weight_decay
                p.data -= (glr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype, copy=False)
