"""Analytic FLOPs and parameter counts.

Counting convention (fixed; budgets in the selector are expressed in it):

* a multiply-accumulate is 2 FLOPs, so a [N, a] @ [a, b] product is 2*N*a*b;
* every layer-norm and every residual add costs 2*N*D;
* token mean-pooling in the head costs N*D;
* bias adds, softmax, GELU and attention scaling are not counted.

Per block: attention projections 2*(4*N*D^2), attention scores and
weighted sum 2*(2*N^2*D), MLP 2*(2*N*D^2*r), two norms and two residuals.
The head count does not change the total.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .anchors.model import AnchorSpec
from .errors import ContractError


@dataclass(frozen=True)
class CostItem:
    name: str
    flops: int
    params: int


@dataclass(frozen=True)
class CostReport:
    flops: int
    params: int
    breakdown: tuple[CostItem, ...] = field(default=())

    @classmethod
    def from_items(cls, items) -> "CostReport":
        items = tuple(items)
        return cls(sum(i.flops for i in items), sum(i.params for i in items), items)

    def __post_init__(self):
        if self.breakdown and (
            self.flops != sum(i.flops for i in self.breakdown)
            or self.params != sum(i.params for i in self.breakdown)
        ):
            raise ContractError("cost report totals disagree with breakdown")

    def to_dict(self) -> dict:
        return {
            "flops": self.flops,
            "params": self.params,
            "breakdown": [{"name": i.name, "flops": i.flops, "params": i.params} for i in self.breakdown],
        }


def block_cost(d: int, n: int, heads: int, mlp_ratio, name: str = "block") -> CostReport:
    r = Fraction(mlp_ratio)
    hidden = r * d
    if d < 1 or n < 1 or heads < 1 or d % heads or hidden.denominator != 1:
        raise ContractError(f"invalid block dims D={d} N={n} heads={heads} mlp_ratio={mlp_ratio}")
    hidden = int(hidden)
    return CostReport.from_items([
        CostItem(f"{name}.attn.proj", 2 * 4 * n * d * d, 4 * d * d + 4 * d),
        CostItem(f"{name}.attn.mix", 2 * 2 * n * n * d, 0),
        CostItem(f"{name}.mlp", 2 * 2 * n * d * hidden, 2 * d * hidden + hidden + d),
        CostItem(f"{name}.norms", 2 * (2 * n * d), 4 * d),
        CostItem(f"{name}.residuals", 2 * (2 * n * d), 0),
    ])


def linear_cost(name: str, n: int, d_in: int, d_out: int) -> CostItem:
    return CostItem(name, 2 * n * d_in * d_out, d_in * d_out + d_out)


def embed_item(spec: AnchorSpec) -> CostItem:
    return linear_cost("embed", spec.input_token_count, spec.input_feature_dim, spec.embed_dim_per_stage[0])


def head_item(spec: AnchorSpec) -> CostItem:
    n, d, c = spec.input_token_count, spec.embed_dim_per_stage[-1], spec.num_classes
    return CostItem("head", 2 * n * d + n * d + 2 * d * c, 2 * d + d * c + c)


def block_items(spec: AnchorSpec, first: int, last: int) -> list[CostItem]:
    """Cost items for global blocks first..last inclusive, with any stage transitions."""
    items: list[CostItem] = []
    n = spec.input_token_count
    bounds = spec.stage_bounds()
    for b in range(first, last + 1):
        t = spec.stage_of_block(b)
        d = spec.embed_dim_per_stage[t]
        if spec.has_transition(t) and b == bounds[t][0]:
            items.append(linear_cost(f"{spec.name}.transition.{t}", n, spec.embed_dim_per_stage[t - 1], d))
        rep = block_cost(d, n, spec.num_heads_per_stage[t], spec.mlp_ratio)
        items.append(CostItem(f"{spec.name}.block.{b}", rep.flops, rep.params))
    return items


def anchor_cost(spec: AnchorSpec) -> CostReport:
    e, h = embed_item(spec), head_item(spec)
    return CostReport.from_items(
        [CostItem(f"{spec.name}.embed", e.flops, e.params)]
        + block_items(spec, 1, spec.depth)
        + [CostItem(f"{spec.name}.head", h.flops, h.params)]
    )


def stitch_layer_item(layer_id: int, n: int, d_in: int, d_out: int) -> CostItem:
    return linear_cost(f"stitch.{layer_id}", n, d_in, d_out)


def stitch_cost(space, config_id: int) -> CostReport:
    """Cost of one configuration: source prefix + stitching layer + target suffix + target head."""
    cfg = space.config(config_id)
    if cfg.kind == "anchor":
        return anchor_cost(space.anchors[cfg.src_anchor].spec)
    src = space.anchors[cfg.src_anchor].spec
    dst = space.anchors[cfg.dst_anchor].spec
    layer = space.layers[cfg.layer_id]
    e, h = embed_item(src), head_item(dst)
    return CostReport.from_items(
        [CostItem(f"{src.name}.embed", e.flops, e.params)]
        + block_items(src, 1, cfg.l)
        + [stitch_layer_item(layer.layer_id, src.input_token_count, layer.d_in, layer.d_out)]
        + block_items(dst, cfg.m + 1, dst.depth)
        + [CostItem(f"{dst.name}.head", h.flops, h.params)]
    )


def space_storage_params(space) -> int:
    """Parameters stored by the whole space: every anchor plus every stitching layer."""
    return sum(anchor_cost(a.spec).params for a in space.anchors) + sum(l.num_params() for l in space.layers)
