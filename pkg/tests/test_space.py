import time
import warnings

import numpy as np
import pytest

import gradcheck
from conftest import SMALL, random_inputs, tiny_family
from oracles import brute_force_pairs
from stitchnet.anchors import AnchorModel, AnchorSpec, StageSpec, anchor_forward, default_family
from stitchnet.errors import ContractError, DimensionError, OrderingError
from stitchnet.numerics import Rng, Tensor, cross_entropy
from stitchnet.stitching import (
    KAIMING,
    LEAST_SQUARES,
    SLOW_TO_FAST,
    StitchConfig,
    StitchingLayer,
    StitchSpace,
    WindowSpec,
    align,
    build_space,
    collect_boundary_features,
    initialize_layers,
    ls_init,
    stitch_forward,
)
from stitchnet.cost import anchor_cost


def equal_depth_family(depth=12, dims=(8, 12, 16), heads=(2, 2, 2)):
    specs = [AnchorSpec.single_stage(f"e{i}", depth, d, h, **SMALL) for i, (d, h) in enumerate(zip(dims, heads))]
    return [AnchorModel.create(s, Rng(0).child(s.name)) for s in specs]


# -- construction ------------------------------------------------------------------


def test_three_equal_depth_anchors_give_71():
    start = time.perf_counter()
    space = build_space(equal_depth_family(), WindowSpec(2, 1))
    assert len(space.configs) == 71
    assert len(space.anchor_configs) == 3
    assert time.perf_counter() - start < 1.0


def test_two_anchors_k1_diagonal():
    space = build_space(equal_depth_family(depth=5, dims=(8, 12), heads=(2, 2)), WindowSpec(1, 1))
    assert len(space.configs) == 5 + 2
    assert all(c.l == c.m for c in space.stitches)


def test_default_family_count_matches_oracle():
    models = [AnchorModel.create(s, Rng(0)) for s in default_family()]
    space = build_space(models, WindowSpec(2, 1))
    expected = 3 + len(brute_force_pairs(4, 8, 2, 1)) + len(brute_force_pairs(8, 12, 2, 1))
    assert len(space.configs) == expected == 37


def test_anchors_sorted_by_flops(family):
    space = build_space(list(reversed(family)), WindowSpec(2, 1))
    flops = [anchor_cost(a.spec).flops for a in space.anchors]
    assert flops == sorted(flops)
    for c in space.stitches:
        assert flops[c.src_anchor] < flops[c.dst_anchor]
        assert c.dst_anchor == c.src_anchor + 1


def test_config_ordering_is_stable(family):
    space = build_space(family, WindowSpec(2, 1))
    keys = [(c.pair, c.stage, c.l, c.m) for c in space.stitches]
    assert keys == sorted(keys)
    assert [c.config_id for c in space.configs] == list(range(len(space.configs)))
    again = build_space(tiny_family(), WindowSpec(2, 1))
    assert [c.to_dict() for c in again.configs] == [c.to_dict() for c in space.configs]


def test_layer_sharing(family):
    space = build_space(family, WindowSpec(3, 1))
    by_key = {}
    for c in space.stitches:
        key = (c.pair, c.stage, c.window_id)
        by_key.setdefault(key, set()).add(c.layer_id)
    assert all(len(ids) == 1 for ids in by_key.values())
    assert len(by_key) == len(space.layers)
    for c in space.stitches:
        layer = space.layers[c.layer_id]
        assert (layer.pair, layer.stage, layer.window_id) == (c.pair, c.stage, c.window_id)


def test_equal_flops_is_ordering_error():
    a, b = tiny_family(depths=(2, 2), dims=(8, 8), heads=(2, 2))
    with pytest.raises(OrderingError):
        build_space([a, b])


def test_rejects_non_nearest_and_single_anchor(family):
    with pytest.raises(ContractError):
        build_space(family, nearest_only=False)
    with pytest.raises(ContractError):
        build_space(family[:1])


def test_slow_to_fast_only_behind_flag(family):
    space = build_space(family, WindowSpec(2, 1), direction=SLOW_TO_FAST)
    assert all(c.src_anchor == c.dst_anchor + 1 for c in space.stitches)
    x = random_inputs(2)
    for c in space.stitches[:5]:
        assert stitch_forward(space, c.config_id, x).shape == (2, 3)


def test_multistage_stitches_stay_within_stages():
    def spec(name, depths, dims, heads):
        return AnchorSpec(name, (StageSpec(depths[0]), StageSpec(depths[1], True)), dims, heads, **SMALL)

    a = AnchorModel.create(spec("s0", (2, 2), (8, 12), (2, 2)), Rng(0))
    b = AnchorModel.create(spec("s1", (2, 4), (12, 16), (2, 2)), Rng(1))
    space = build_space([a, b], WindowSpec(2, 1))
    for c in space.stitches:
        sa = space.anchors[c.src_anchor].spec
        sb = space.anchors[c.dst_anchor].spec
        assert sa.stage_of_block(c.l) == c.stage == sb.stage_of_block(c.m)
    per_stage = len(brute_force_pairs(2, 2, 2, 1)) + len(brute_force_pairs(2, 4, 2, 1))
    assert len(space.stitches) == per_stage
    x = random_inputs(2)
    for c in space.stitches:
        assert np.isfinite(stitch_forward(space, c.config_id, x).data).all()


# -- execution ---------------------------------------------------------------------


def test_every_stitch_finite_with_right_shape(family):
    space = build_space(family, WindowSpec(2, 1))
    x = random_inputs(5)
    for c in space.configs:
        out = stitch_forward(space, c.config_id, x)
        assert out.shape == (5, 3) and np.isfinite(out.data).all()


def test_anchor_config_is_anchor_forward(family):
    space = build_space(family, WindowSpec(2, 1))
    x = random_inputs(3)
    for i, a in enumerate(space.anchors):
        assert np.array_equal(stitch_forward(space, space.anchor_config_id(i), x).data, anchor_forward(a, x).data)


def test_invalid_config_id(family):
    space = build_space(family, WindowSpec(2, 1))
    with pytest.raises(ContractError):
        stitch_forward(space, len(space.configs), random_inputs(1))


def test_self_stitch_is_identity_bitwise():
    (model,) = tiny_family(depths=(4,), dims=(8,), heads=(2,))
    twin = model.clone()
    layer = StitchingLayer.allocate(0, 0, 0, 0, 8, 8)
    layer.weight.data = np.eye(8, dtype=np.float32)
    configs = [StitchConfig(0, "anchor", 0, 0, -1, -1, 4, 4, -1, -1)]
    configs += [StitchConfig(l, "stitch", 0, 1, 0, 0, l, l, 0, 0) for l in range(1, 5)]
    space = StitchSpace([model, twin], configs, [layer], WindowSpec(2, 1))
    x = random_inputs(4)
    full = anchor_forward(model, x).data
    for l in range(1, 5):
        assert np.array_equal(stitch_forward(space, l, x).data, full)


def test_full_prefix_then_head_only(family):
    space = build_space(family, WindowSpec(2, 1))
    cfg = next(c for c in space.stitches if c.l == space.anchors[c.src_anchor].spec.depth
               and c.m == space.anchors[c.dst_anchor].spec.depth)
    src, dst = space.anchors[cfg.src_anchor], space.anchors[cfg.dst_anchor]
    x = random_inputs(3)
    h = space.layers[cfg.layer_id](src.forward_prefix(x, cfg.l))
    assert np.array_equal(stitch_forward(space, cfg.config_id, x).data, dst.head(h).data)


def test_stitch_path_gradient_matches_finite_differences():
    family = [m.astype(np.float64) for m in tiny_family(depths=(2, 3), dims=(8, 12), heads=(2, 2), std=0.3)]
    space = build_space(family, WindowSpec(2, 1))
    for layer in space.layers:
        layer.weight.data = layer.weight.data.astype(np.float64)
        layer.bias.data = np.random.default_rng(layer.layer_id).standard_normal(layer.d_out) * 0.1
    x = np.random.default_rng(0).standard_normal((3, 4, 3))
    y = np.array([1, 0, 2])
    cfg = next(c for c in space.stitches if 1 < c.m < space.anchors[c.dst_anchor].spec.depth)
    anchor_params, layer_params = space.path_parameters(cfg.config_id)
    params = anchor_params + layer_params
    errors = gradcheck.check_params(lambda: cross_entropy(stitch_forward(space, cfg.config_id, Tensor(x)), y), params)
    assert max(errors) < gradcheck.TOL
    # parameters outside the path receive nothing
    on_path = {id(p) for p in params}
    off_path = [p for p in space.anchor_parameters() + space.layer_parameters() if id(p) not in on_path]
    assert off_path and all(p.grad is None for p in off_path)


# -- least-squares init ------------------------------------------------------------


def test_ls_identity():
    a = np.random.default_rng(0).standard_normal((64, 8))
    layer = StitchingLayer.allocate(0, 0, 0, 0, 8, 8)
    ls_init(layer, a, a)
    assert np.max(np.abs(layer.weight.data - np.eye(8))) < 1e-5
    assert layer.init_method == LEAST_SQUARES and np.all(layer.bias.data == 0)


def test_ls_recovers_known_map():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((200, 6))
    m_true = rng.standard_normal((6, 10))
    layer = StitchingLayer.allocate(0, 0, 0, 0, 6, 10)
    res = ls_init(layer, a, a @ m_true)
    assert np.max(np.abs(res.solution - m_true)) < 1e-5
    assert np.max(np.abs(layer.weight.data - m_true)) < 1e-5
    assert res.residual < 1e-8


def test_ls_is_optimal_under_perturbation():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((50, 5)), rng.standard_normal((50, 7))
    layer = StitchingLayer.allocate(0, 0, 0, 0, 5, 7)
    res = ls_init(layer, a, b)
    assert res.residual == pytest.approx(np.linalg.norm(a @ res.solution - b))
    for _ in range(100):
        m = res.solution + rng.standard_normal(res.solution.shape) * rng.choice([1e-3, 1e-1, 1.0])
        assert res.residual <= np.linalg.norm(a @ m - b) + 1e-6


def test_ls_errors_and_underdetermined_warning():
    layer = StitchingLayer.allocate(3, 0, 0, 0, 6, 4)
    with pytest.raises(DimensionError):
        ls_init(layer, np.zeros((10, 6)), np.zeros((9, 4)))
    with pytest.raises(DimensionError):
        ls_init(layer, np.zeros((10, 5)), np.zeros((10, 4)))
    with pytest.warns(RuntimeWarning, match="underdetermined"):
        res = ls_init(layer, np.random.default_rng(0).standard_normal((4, 6)), np.ones((4, 4)))
    assert res.underdetermined and layer.notes


def test_collect_boundary_features_shapes(family):
    space = build_space(family, WindowSpec(2, 1))
    x = random_inputs(1)
    for layer in space.layers:
        a, b = collect_boundary_features(space, layer.layer_id, x)
        assert a.shape == (4, layer.d_in) and b.shape == (4, layer.d_out)
        cfg = space.canonical_config(layer.layer_id)
        assert cfg == min((c for c in space.stitches if c.layer_id == layer.layer_id), key=lambda c: c.config_id)
    a1, _ = collect_boundary_features(space, 0, random_inputs(3, seed=9))
    a2, _ = collect_boundary_features(space, 0, random_inputs(3, seed=9))
    assert np.array_equal(a1, a2)


def test_initialize_layers_methods(family):
    space = build_space(family, WindowSpec(2, 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        residuals = initialize_layers(space, LEAST_SQUARES, random_inputs(20))
    assert len(residuals) == len(space.layers)
    assert all(l.init_method == LEAST_SQUARES and l.ls_residual == r for l, r in zip(space.layers, residuals))
    initialize_layers(space, KAIMING, seed=0)
    assert all(l.init_method == KAIMING and l.ls_residual is None for l in space.layers)
    std = np.std(space.layers[0].weight.data)
    assert std == pytest.approx(np.sqrt(2.0 / space.layers[0].d_in), rel=0.3)
    with pytest.raises(ContractError):
        initialize_layers(space, "xavier")
    with pytest.raises(ContractError):
        initialize_layers(space, LEAST_SQUARES)


def test_ls_init_improves_match_over_kaiming(family):
    space = build_space(family, WindowSpec(2, 1))
    x = random_inputs(50)
    layer = space.layers[0]
    a, b = collect_boundary_features(space, 0, x)
    kaiming_err = np.linalg.norm(a @ layer.weight.data - b)
    initialize_layers(space, LEAST_SQUARES, x)
    assert np.linalg.norm(a @ space.layers[0].weight.data - b) < kaiming_err


def test_align_used_for_canonical_boundary(family):
    space = build_space(family, WindowSpec(2, 1))
    for c in space.stitches:
        src, dst = space.anchors[c.src_anchor].spec, space.anchors[c.dst_anchor].spec
        assert abs(align(c.l, src.depth, dst.depth) - c.m) <= 1
