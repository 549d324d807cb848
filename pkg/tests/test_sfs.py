import numpy as np
import pytest

from mergeopt.dis import execute_plan
from mergeopt.sfs import (
    SfsConfig,
    SfsSpace,
    build_sfs_model,
    sfs_config_from_json,
    sfs_config_to_json,
)

from .toys import toy_pool


def test_identity_config_preserves_weights():
    stores = toy_pool(layer_count=4)
    config = SfsConfig("math", (1.0, 1.0), (1.0,) * 4)
    store, plan = build_sfs_model(config, stores)
    for name, rec in stores["math"].tensors.items():
        np.testing.assert_array_equal(store.values(name), rec.values)
    assert plan.block_scales == [1.0] * 4
    assert [layer for _, layer, _ in plan.steps] == [0, 1, 2, 3]


def test_weight_scales_apply_per_group():
    stores = toy_pool(layer_count=4)
    config = SfsConfig("math", (0.5, 1.5), (1.0,) * 4)
    store, _ = build_sfs_model(config, stores)
    # groups: layers 0-1 and 2-3
    np.testing.assert_allclose(
        store.values("model.layers.0.mlp.weight"),
        0.5 * stores["math"].values("model.layers.0.mlp.weight"),
    )
    np.testing.assert_allclose(
        store.values("model.layers.3.mlp.weight"),
        1.5 * stores["math"].values("model.layers.3.mlp.weight"),
    )
    # globals follow group 0
    np.testing.assert_allclose(
        store.values("model.embed_tokens.weight"),
        0.5 * stores["math"].values("model.embed_tokens.weight"),
    )


def test_output_scales_flow_through_plan():
    stores = toy_pool(layer_count=2)
    config = SfsConfig("math", (1.0,), (0.5, 1.5))
    _, plan = build_sfs_model(config, stores)
    out = execute_plan(plan, None, np.array([1.0]), lambda m, l, v: v)
    np.testing.assert_allclose(out, [0.75])


def test_scale_range_enforced():
    with pytest.raises(ValueError, match="scale"):
        SfsConfig("math", (2.0,), (1.0,)).validate()


def test_encode_decode_round_trip():
    space = SfsSpace("math", layer_count=6, group_count=3)
    rng = np.random.default_rng(0)
    for _ in range(50):
        config = space.sample(rng)
        assert space.decode(space.encode(config)) == config


def test_decode_clamps():
    space = SfsSpace("math", layer_count=2, group_count=1)
    config = space.decode(np.array([9.0, 0.0, 1.0]))
    assert config.weight_scales == (1.5,)
    assert config.output_scales == (0.5, 1.0)


def test_initial_config_is_identity():
    space = SfsSpace("math", layer_count=3, group_count=2)
    (config,) = space.initial_configs()
    assert set(config.weight_scales) == {1.0}
    assert set(config.output_scales) == {1.0}


def test_json_round_trip():
    space = SfsSpace("math", layer_count=4, group_count=2)
    config = space.sample(np.random.default_rng(1))
    assert sfs_config_from_json(sfs_config_to_json(config)) == config
