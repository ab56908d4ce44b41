"""Toy pre-norm transformer used as an anchor network.

An anchor is ``head(blocks(embed(x)))`` over inputs shaped
[batch, tokens, features]. Blocks are numbered 1..L globally across stages;
boundary index ``i`` (0..L) denotes the activation after block ``i``, with
``i = 0`` being the embedding output.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterator

import numpy as np

from ..errors import ContractError, DimensionError
from ..numerics import Rng, Tensor, gelu, layer_norm, linear, softmax

INIT_STD = 0.02


@dataclass(frozen=True)
class StageSpec:
    depth: int
    dim_transition: bool = False

    def __post_init__(self):
        if self.depth < 1:
            raise ContractError(f"stage depth must be >= 1, got {self.depth}")


@dataclass(frozen=True)
class AnchorSpec:
    name: str
    stages: tuple[StageSpec, ...]
    embed_dim_per_stage: tuple[int, ...]
    num_heads_per_stage: tuple[int, ...]
    input_token_count: int = 16
    input_feature_dim: int = 8
    num_classes: int = 10
    mlp_ratio: Fraction = Fraction(4)

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "embed_dim_per_stage", tuple(int(d) for d in self.embed_dim_per_stage))
        object.__setattr__(self, "num_heads_per_stage", tuple(int(h) for h in self.num_heads_per_stage))
        object.__setattr__(self, "mlp_ratio", Fraction(self.mlp_ratio))
        n = len(self.stages)
        if n == 0:
            raise ContractError("anchor needs at least one stage")
        if len(self.embed_dim_per_stage) != n or len(self.num_heads_per_stage) != n:
            raise ContractError(
                f"{self.name}: {n} stages but {len(self.embed_dim_per_stage)} dims "
                f"and {len(self.num_heads_per_stage)} head counts"
            )
        for t, (d, h) in enumerate(zip(self.embed_dim_per_stage, self.num_heads_per_stage)):
            if d < 1 or h < 1 or d % h:
                raise ContractError(f"{self.name}: stage {t} dim {d} not divisible by {h} heads")
            if t > 0 and d != self.embed_dim_per_stage[t - 1] and not self.stages[t].dim_transition:
                raise ContractError(f"{self.name}: stage {t} changes width without dim_transition")
        if self.mlp_ratio <= 0 or (self.mlp_ratio * min(self.embed_dim_per_stage)).denominator != 1:
            raise ContractError(f"{self.name}: mlp_ratio {self.mlp_ratio} must give integer hidden widths")
        for attr in ("input_token_count", "input_feature_dim", "num_classes"):
            if getattr(self, attr) < 1:
                raise ContractError(f"{self.name}: {attr} must be positive")

    @classmethod
    def single_stage(cls, name: str, depth: int, dim: int, heads: int, **kw) -> "AnchorSpec":
        return cls(name, (StageSpec(depth),), (dim,), (heads,), **kw)

    @property
    def depth(self) -> int:
        return sum(s.depth for s in self.stages)

    def stage_bounds(self) -> list[tuple[int, int]]:
        """Inclusive global block ranges (first, last) per stage."""
        bounds, start = [], 1
        for s in self.stages:
            bounds.append((start, start + s.depth - 1))
            start += s.depth
        return bounds

    def stage_of_block(self, b: int) -> int:
        for t, (lo, hi) in enumerate(self.stage_bounds()):
            if lo <= b <= hi:
                return t
        raise ContractError(f"{self.name}: block {b} outside 1..{self.depth}")

    def dim_at(self, i: int) -> int:
        """Width of the activation after block ``i`` (``i = 0``: embedding)."""
        if not 0 <= i <= self.depth:
            raise ContractError(f"{self.name}: boundary {i} outside 0..{self.depth}")
        return self.embed_dim_per_stage[0 if i == 0 else self.stage_of_block(i)]

    def has_transition(self, t: int) -> bool:
        return t > 0 and (
            self.stages[t].dim_transition
            or self.embed_dim_per_stage[t] != self.embed_dim_per_stage[t - 1]
        )

    def hidden_dim(self, t: int) -> int:
        return int(self.mlp_ratio * self.embed_dim_per_stage[t])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [asdict(s) for s in self.stages]
        d["embed_dim_per_stage"] = list(self.embed_dim_per_stage)
        d["num_heads_per_stage"] = list(self.num_heads_per_stage)
        d["mlp_ratio"] = str(self.mlp_ratio)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AnchorSpec":
        d = dict(d)
        d["stages"] = tuple(StageSpec(**s) for s in d["stages"])
        d["mlp_ratio"] = Fraction(d.get("mlp_ratio", 4))
        return cls(**d)


def default_family(**kw) -> list[AnchorSpec]:
    """Ti/S/B analogs: (L=4, D=32, 2 heads), (8, 64, 4), (12, 96, 6)."""
    return [
        AnchorSpec.single_stage("Ti", 4, 32, 2, **kw),
        AnchorSpec.single_stage("S", 8, 64, 4, **kw),
        AnchorSpec.single_stage("B", 12, 96, 6, **kw),
    ]


def _block_param_shapes(d: int, hidden: int) -> list[tuple[str, tuple[int, ...]]]:
    return [
        ("norm1.weight", (d,)), ("norm1.bias", (d,)),
        ("attn.q.weight", (d, d)), ("attn.q.bias", (d,)),
        ("attn.k.weight", (d, d)), ("attn.k.bias", (d,)),
        ("attn.v.weight", (d, d)), ("attn.v.bias", (d,)),
        ("attn.o.weight", (d, d)), ("attn.o.bias", (d,)),
        ("norm2.weight", (d,)), ("norm2.bias", (d,)),
        ("mlp.fc1.weight", (d, hidden)), ("mlp.fc1.bias", (hidden,)),
        ("mlp.fc2.weight", (hidden, d)), ("mlp.fc2.bias", (d,)),
    ]


def param_shapes(spec: AnchorSpec) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) list for every parameter tensor of ``spec``."""
    d0 = spec.embed_dim_per_stage[0]
    shapes = [("embed.weight", (spec.input_feature_dim, d0)), ("embed.bias", (d0,))]
    for t, (lo, hi) in enumerate(spec.stage_bounds()):
        d = spec.embed_dim_per_stage[t]
        if spec.has_transition(t):
            dp = spec.embed_dim_per_stage[t - 1]
            shapes += [(f"transition.{t}.weight", (dp, d)), (f"transition.{t}.bias", (d,))]
        for b in range(lo, hi + 1):
            shapes += [(f"blocks.{b}.{n}", s) for n, s in _block_param_shapes(d, spec.hidden_dim(t))]
    dl = spec.embed_dim_per_stage[-1]
    shapes += [
        ("head.norm.weight", (dl,)), ("head.norm.bias", (dl,)),
        ("head.fc.weight", (dl, spec.num_classes)), ("head.fc.bias", (spec.num_classes,)),
    ]
    return shapes


def init_params(spec: AnchorSpec, rng: Rng, std: float | None = INIT_STD) -> dict[str, np.ndarray]:
    """Normal(0, std) matrices, zero biases, unit norm scales.

    ``std=None`` switches matrices to Normal(0, 1/fan_in), which keeps
    activations O(1) through depth; used for the frozen label teacher.
    """
    params = {}
    for name, shape in param_shapes(spec):
        if name.endswith("norm1.weight") or name.endswith("norm2.weight") or name == "head.norm.weight":
            params[name] = np.ones(shape, dtype=np.float32)
        elif len(shape) == 1:
            params[name] = np.zeros(shape, dtype=np.float32)
        else:
            s = (1.0 / np.sqrt(shape[0])) if std is None else std
            params[name] = rng.normal(shape, std=s)
    return params


@dataclass
class AnchorModel:
    spec: AnchorSpec
    params: dict[str, Tensor]
    provenance: dict = field(default_factory=dict)

    @classmethod
    def create(cls, spec: AnchorSpec, rng: Rng, std: float | None = INIT_STD, dtype=np.float32) -> "AnchorModel":
        arrays = init_params(spec, rng, std)
        params = {k: Tensor(v.astype(dtype), requires_grad=True, name=f"{spec.name}.{k}") for k, v in arrays.items()}
        return cls(spec, params, {"trained": False, "epochs": 0})

    @classmethod
    def from_arrays(cls, spec: AnchorSpec, arrays: dict[str, np.ndarray], provenance: dict | None = None) -> "AnchorModel":
        expected = dict(param_shapes(spec))
        if set(arrays) != set(expected):
            missing = sorted(set(expected) - set(arrays))
            extra = sorted(set(arrays) - set(expected))
            raise ContractError(f"{spec.name}: parameter mismatch, missing={missing} extra={extra}")
        params = {}
        for name, shape in param_shapes(spec):
            arr = np.asarray(arrays[name])
            if arr.shape != shape:
                raise DimensionError(f"{spec.name}.{name}: expected {shape}, got {arr.shape}")
            params[name] = Tensor(arr.copy(), requires_grad=True, name=f"{spec.name}.{name}")
        return cls(spec, params, dict(provenance or {}))

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.params.items())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def astype(self, dtype) -> "AnchorModel":
        arrays = {k: v.data.astype(dtype) for k, v in self.params.items()}
        m = AnchorModel.from_arrays(self.spec, arrays, self.provenance)
        return m

    def clone(self) -> "AnchorModel":
        return AnchorModel.from_arrays(self.spec, self.state_dict(), dict(self.provenance))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # -- forward pieces ----------------------------------------------------------

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    def embed(self, x: Tensor) -> Tensor:
        spec = self.spec
        if x.ndim != 3 or x.shape[1:] != (spec.input_token_count, spec.input_feature_dim):
            raise DimensionError(
                f"{spec.name}: expected input [batch, {spec.input_token_count}, "
                f"{spec.input_feature_dim}], got {x.shape}"
            )
        return linear(x, self._p("embed.weight"), self._p("embed.bias"))

    def block(self, b: int, h: Tensor) -> Tensor:
        t = self.spec.stage_of_block(b)
        if self.spec.has_transition(t) and b == self.spec.stage_bounds()[t][0]:
            h = linear(h, self._p(f"transition.{t}.weight"), self._p(f"transition.{t}.bias"))
        return transformer_block(h, self.params, f"blocks.{b}.", self.spec.num_heads_per_stage[t])

    def head(self, h: Tensor) -> Tensor:
        h = layer_norm(h, self._p("head.norm.weight"), self._p("head.norm.bias"))
        return linear(h.mean(axis=1), self._p("head.fc.weight"), self._p("head.fc.bias"))

    def forward(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        h = self.embed(x)
        for b in range(1, self.spec.depth + 1):
            h = self.block(b, h)
        return self.head(h)

    __call__ = forward

    def forward_prefix(self, x, l: int) -> Tensor:
        """Activation after block ``l`` (``l = 0``: embedding only)."""
        if not 0 <= l <= self.spec.depth:
            raise ContractError(f"{self.spec.name}: prefix index {l} outside 0..{self.spec.depth}")
        x = x if isinstance(x, Tensor) else Tensor(x)
        h = self.embed(x)
        for b in range(1, l + 1):
            h = self.block(b, h)
        return h

    def forward_suffix(self, a: Tensor, m: int) -> Tensor:
        """Run blocks m+1..L and the head on an activation taken after block ``m``."""
        if not 0 <= m <= self.spec.depth:
            raise ContractError(f"{self.spec.name}: suffix index {m} outside 0..{self.spec.depth}")
        want = self.spec.dim_at(m)
        if a.ndim != 3 or a.shape[-1] != want:
            raise DimensionError(f"{self.spec.name}: suffix at {m} expects width {want}, got shape {a.shape}")
        h = a
        for b in range(m + 1, self.spec.depth + 1):
            h = self.block(b, h)
        return self.head(h)


def attention(h: Tensor, params: dict[str, Tensor], prefix: str, heads: int) -> Tensor:
    bsz, n, d = h.shape
    dh = d // heads

    def split(t: Tensor) -> Tensor:
        return t.reshape(bsz, n, heads, dh).transpose(0, 2, 1, 3)

    q = split(linear(h, params[prefix + "q.weight"], params[prefix + "q.bias"]))
    k = split(linear(h, params[prefix + "k.weight"], params[prefix + "k.bias"]))
    v = split(linear(h, params[prefix + "v.weight"], params[prefix + "v.bias"]))
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    ctx = softmax(scores, axis=-1) @ v
    ctx = ctx.transpose(0, 2, 1, 3).reshape(bsz, n, d)
    return linear(ctx, params[prefix + "o.weight"], params[prefix + "o.bias"])


def transformer_block(h: Tensor, params: dict[str, Tensor], prefix: str, heads: int) -> Tensor:
    a = layer_norm(h, params[prefix + "norm1.weight"], params[prefix + "norm1.bias"])
    h = h + attention(a, params, prefix + "attn.", heads)
    m = layer_norm(h, params[prefix + "norm2.weight"], params[prefix + "norm2.bias"])
    m = linear(gelu(linear(m, params[prefix + "mlp.fc1.weight"], params[prefix + "mlp.fc1.bias"])),
               params[prefix + "mlp.fc2.weight"], params[prefix + "mlp.fc2.bias"])
    return h + m
