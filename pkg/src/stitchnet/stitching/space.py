"""Stitch space construction, LS initialization and stitched execution."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from ..anchors.model import AnchorModel
from ..cost import anchor_cost
from ..errors import ContractError, OrderingError
from ..numerics import DEFAULT_RCOND, Rng, Tensor, no_grad
from .enumerate import WindowSpec, enumerate_unpaired
from .layer import KAIMING, StitchingLayer, check_init_method

log = logging.getLogger(__name__)

FAST_TO_SLOW = "fast_to_slow"
SLOW_TO_FAST = "slow_to_fast"


@dataclass(frozen=True)
class StitchConfig:
    """One executable network.

    ``src_anchor`` supplies blocks 1..l, ``dst_anchor`` supplies blocks
    m+1..L2 and the head. For anchors both ids are equal and l = m = depth.
    In the default fast-to-slow direction ``src`` is the cheaper anchor.
    """

    config_id: int
    kind: str  # "anchor" | "stitch"
    src_anchor: int
    dst_anchor: int
    pair: int  # -1 for anchors
    stage: int
    l: int
    m: int
    layer_id: int  # -1 for anchors
    window_id: int  # -1 for anchors

    @property
    def fast_anchor(self) -> int:
        return min(self.src_anchor, self.dst_anchor)

    @property
    def slow_anchor(self) -> int:
        return max(self.src_anchor, self.dst_anchor)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StitchSpace:
    anchors: list[AnchorModel]  # ascending FLOPs
    configs: list[StitchConfig]
    layers: list[StitchingLayer]
    window: WindowSpec
    nearest_only: bool = True
    direction: str = FAST_TO_SLOW

    def __len__(self) -> int:
        return len(self.configs)

    def config(self, config_id: int) -> StitchConfig:
        if not 0 <= config_id < len(self.configs):
            raise ContractError(f"invalid config id {config_id}; space has {len(self.configs)} configs")
        return self.configs[config_id]

    @property
    def stitches(self) -> list[StitchConfig]:
        return [c for c in self.configs if c.kind == "stitch"]

    @property
    def anchor_configs(self) -> list[StitchConfig]:
        return [c for c in self.configs if c.kind == "anchor"]

    def anchor_config_id(self, anchor: int) -> int:
        for c in self.configs:
            if c.kind == "anchor" and c.src_anchor == anchor:
                return c.config_id
        raise ContractError(f"no anchor config for anchor {anchor}")

    def canonical_config(self, layer_id: int) -> StitchConfig:
        """First config (in id order) routed through ``layer_id``."""
        for c in self.configs:
            if c.layer_id == layer_id:
                return c
        raise ContractError(f"stitching layer {layer_id} is not used by any config")

    def anchor_parameters(self) -> list[Tensor]:
        return [p for a in self.anchors for p in a.parameters()]

    def layer_parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def path_parameters(self, config_id: int) -> tuple[list[Tensor], list[Tensor]]:
        """(anchor params, stitching-layer params) touched by ``config_id``'s forward pass."""
        cfg = self.config(config_id)
        if cfg.kind == "anchor":
            return self.anchors[cfg.src_anchor].parameters(), []
        src, dst = self.anchors[cfg.src_anchor], self.anchors[cfg.dst_anchor]
        used = [p for k, p in src.params.items() if _in_prefix(k, cfg.l, src)]
        used += [p for k, p in dst.params.items() if _in_suffix(k, cfg.m, dst)]
        return used, self.layers[cfg.layer_id].parameters()

    def forward(self, config_id: int, x) -> Tensor:
        return stitch_forward(self, config_id, x)


def _block_index(name: str) -> int | None:
    if name.startswith("blocks."):
        return int(name.split(".")[1])
    return None


def _transition_stage(name: str) -> int | None:
    if name.startswith("transition."):
        return int(name.split(".")[1])
    return None


def _in_prefix(name: str, l: int, model: AnchorModel) -> bool:
    if name.startswith("embed."):
        return True
    b = _block_index(name)
    if b is not None:
        return b <= l
    t = _transition_stage(name)
    if t is not None:
        return model.spec.stage_bounds()[t][0] <= l
    return False


def _in_suffix(name: str, m: int, model: AnchorModel) -> bool:
    if name.startswith("head."):
        return True
    b = _block_index(name)
    if b is not None:
        return b > m
    t = _transition_stage(name)
    if t is not None:
        return model.spec.stage_bounds()[t][0] > m
    return False


def build_space(
    anchors: list[AnchorModel],
    window: WindowSpec = WindowSpec(),
    nearest_only: bool = True,
    direction: str = FAST_TO_SLOW,
    seed: int = 0,
) -> StitchSpace:
    """Enumerate anchors plus nearest-pair stitches; layers start Kaiming-initialized.

    Anchors are sorted by FLOPs; equal FLOPs is an ordering error. Stitches
    are generated independently within each stage. ``direction`` other than
    fast-to-slow exists only for the stitching-direction ablation.
    """
    if len(anchors) < 2:
        raise ContractError(f"need at least 2 anchors, got {len(anchors)}")
    if not nearest_only:
        raise ContractError("nearest_only=False (skip-pair and chain stitches) is not supported")
    if direction not in (FAST_TO_SLOW, SLOW_TO_FAST):
        raise ContractError(f"unknown stitching direction {direction!r}")

    flops = [anchor_cost(a.spec).flops for a in anchors]
    order = sorted(range(len(anchors)), key=lambda i: flops[i])
    for i, j in zip(order, order[1:]):
        if flops[i] == flops[j]:
            raise OrderingError(
                f"anchors {anchors[i].spec.name!r} and {anchors[j].spec.name!r} have equal FLOPs ({flops[i]})"
            )
    anchors = [anchors[i] for i in order]
    n_stages = {len(a.spec.stages) for a in anchors}
    if len(n_stages) != 1:
        raise ContractError(f"anchors disagree on stage count: {sorted(n_stages)}")

    configs: list[StitchConfig] = []
    for idx, a in enumerate(anchors):
        d = a.spec.depth
        configs.append(StitchConfig(len(configs), "anchor", idx, idx, -1, -1, d, d, -1, -1))

    layers: list[StitchingLayer] = []
    layer_ids: dict[tuple[int, int, int], int] = {}
    for pair in range(len(anchors) - 1):
        src_i, dst_i = (pair, pair + 1) if direction == FAST_TO_SLOW else (pair + 1, pair)
        src, dst = anchors[src_i].spec, anchors[dst_i].spec
        for stage, ((s_lo, s_hi), (d_lo, d_hi)) in enumerate(zip(src.stage_bounds(), dst.stage_bounds())):
            local = enumerate_unpaired(s_hi - s_lo + 1, d_hi - d_lo + 1, window)
            for (ll, lm), wid in local.items():
                l, m = s_lo - 1 + ll, d_lo - 1 + lm
                key = (pair, stage, wid)
                if key not in layer_ids:
                    layer_ids[key] = len(layers)
                    layers.append(StitchingLayer.allocate(len(layers), pair, stage, wid, src.dim_at(l), dst.dim_at(m)))
                configs.append(StitchConfig(len(configs), "stitch", src_i, dst_i, pair, stage, l, m, layer_ids[key], wid))

    space = StitchSpace(anchors, configs, layers, window, nearest_only, direction)
    kaiming_init_all(space, seed)
    return space


def kaiming_init_all(space: StitchSpace, seed: int = 0) -> None:
    rng = Rng(seed).child("stitch-init")
    for layer in space.layers:
        layer.kaiming_init(rng.child(f"layer:{layer.layer_id}"))


def collect_boundary_features(space: StitchSpace, layer_id: int, samples) -> tuple[np.ndarray, np.ndarray]:
    """Flattened [batch*tokens, D] activations on both sides of the layer's canonical boundary."""
    cfg = space.canonical_config(layer_id)
    x = samples if isinstance(samples, Tensor) else Tensor(np.asarray(samples, dtype=np.float32))
    with no_grad():
        a = space.anchors[cfg.src_anchor].forward_prefix(x, cfg.l).data
        b = space.anchors[cfg.dst_anchor].forward_prefix(x, cfg.m).data
    return a.reshape(-1, a.shape[-1]), b.reshape(-1, b.shape[-1])


def ls_init_all(space: StitchSpace, samples, rcond: float = DEFAULT_RCOND) -> list[float]:
    """LS-initialize every stitching layer; returns per-layer residuals."""
    residuals = []
    for layer in space.layers:
        a, b = collect_boundary_features(space, layer.layer_id, samples)
        res = layer.ls_init(a, b, rcond)
        log.info("layer %d (pair %d, window %d): LS residual %.4g", layer.layer_id, layer.pair, layer.window_id, res.residual)
        residuals.append(res.residual)
    return residuals


def initialize_layers(space: StitchSpace, method: str, samples=None, rcond: float = DEFAULT_RCOND, seed: int = 0):
    method = check_init_method(method)
    if method == KAIMING:
        kaiming_init_all(space, seed)
        return [None] * len(space.layers)
    if samples is None:
        raise ContractError("least-squares init needs sample inputs")
    return ls_init_all(space, samples, rcond)


def stitch_forward(space: StitchSpace, config_id: int, x) -> Tensor:
    cfg = space.config(config_id)
    x = x if isinstance(x, Tensor) else Tensor(x)
    src = space.anchors[cfg.src_anchor]
    if cfg.kind == "anchor":
        return src.forward(x)
    dst = space.anchors[cfg.dst_anchor]
    h = src.forward_prefix(x, cfg.l)
    h = space.layers[cfg.layer_id](h)
    return dst.forward_suffix(h, cfg.m)
