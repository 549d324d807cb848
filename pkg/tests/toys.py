"""Small architecture-compatible weight stores for tests."""

import numpy as np

from mergeopt.store import WeightStore


def toy_store(
    model_id: str,
    layer_count: int = 2,
    dim: int = 2,
    seed: int = 0,
    with_globals: bool = True,
) -> WeightStore:
    rng = np.random.default_rng(seed)
    arrays = {}
    for layer in range(layer_count):
        arrays[f"model.layers.{layer}.mlp.weight"] = rng.normal(size=(dim, dim))
        arrays[f"model.layers.{layer}.self_attn.weight"] = rng.normal(size=(dim, dim))
        arrays[f"model.layers.{layer}.input_layernorm.weight"] = rng.normal(size=dim)
    if with_globals:
        arrays["model.embed_tokens.weight"] = rng.normal(size=(3, dim))
    return WeightStore.from_arrays(model_id, arrays)


def toy_pool(ids=("base", "math", "code"), layer_count: int = 2, dim: int = 2, seed: int = 0):
    return {
        mid: toy_store(mid, layer_count=layer_count, dim=dim, seed=seed + i)
        for i, mid in enumerate(ids)
    }
