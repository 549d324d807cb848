"""Scale-factor search space: per-group weight scales and per-layer output
scales applied to a single specialized model, all within [0.5, 1.5]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dis import AssemblyPlan
from .kernels import SFS_SCALE_RANGE, sfs_scale
from .lfs import assign_layer_groups, group_of_layer
from .store import WeightStore, classify_parameter


@dataclass
class SfsConfig:
    model_id: str
    weight_scales: tuple[float, ...]  # one per layer group
    output_scales: tuple[float, ...]  # one per layer

    def validate(self) -> None:
        lo, hi = SFS_SCALE_RANGE
        for scale in (*self.weight_scales, *self.output_scales):
            if not lo <= scale <= hi:
                raise ValueError(f"scale {scale} outside [{lo}, {hi}]")
        if not self.weight_scales or not self.output_scales:
            raise ValueError("config needs at least one group and one layer")


def build_sfs_model(
    config: SfsConfig, stores: dict[str, WeightStore], out_id: str | None = None
) -> tuple[WeightStore, AssemblyPlan]:
    """Scaled copy of the source model plus the output-scale assembly plan.

    Weight scales apply per layer group (globals follow group 0); output
    scales become per-layer block scales on the returned plan.
    """
    config.validate()
    if config.model_id not in stores:
        raise ValueError(f"missing model {config.model_id!r}")
    source = stores[config.model_id]
    layer_count = source.layer_count
    if len(config.output_scales) != layer_count:
        raise ValueError(
            f"{len(config.output_scales)} output scales for {layer_count} layers"
        )
    ranges = assign_layer_groups(layer_count, len(config.weight_scales))
    out_id = out_id or f"{config.model_id}-scaled"

    scaled: dict[str, np.ndarray] = {}
    for name in source.tensors:
        layer, _ = classify_parameter(name)
        group = 0 if layer is None else group_of_layer(layer, ranges)
        scaled[name] = sfs_scale(source.values(name), config.weight_scales[group])
    store = source.replace_tensors(out_id, scaled)

    plan = AssemblyPlan(
        steps=[(out_id, layer, layer) for layer in range(layer_count)],
        block_scales=list(config.output_scales),
        base_model=out_id,
        depth=1,
        models=1,
        repeat=1,
    )
    return store, plan


@dataclass
class SfsSpace:
    """Sampling and vector encoding for scale-factor search."""

    model_id: str
    layer_count: int
    group_count: int = 4

    def __post_init__(self) -> None:
        if not 1 <= self.group_count <= self.layer_count:
            raise ValueError(
                f"group count {self.group_count} outside [1, {self.layer_count}]"
            )

    @property
    def dim(self) -> int:
        return self.group_count + self.layer_count

    def sample(self, rng: np.random.Generator) -> SfsConfig:
        lo, hi = SFS_SCALE_RANGE
        return SfsConfig(
            model_id=self.model_id,
            weight_scales=tuple(rng.uniform(lo, hi, self.group_count)),
            output_scales=tuple(rng.uniform(lo, hi, self.layer_count)),
        )

    def initial_configs(self) -> list[SfsConfig]:
        return [
            SfsConfig(
                model_id=self.model_id,
                weight_scales=(1.0,) * self.group_count,
                output_scales=(1.0,) * self.layer_count,
            )
        ]

    def encode(self, config: SfsConfig) -> np.ndarray:
        config.validate()
        if len(config.weight_scales) != self.group_count:
            raise ValueError("group count mismatch")
        if len(config.output_scales) != self.layer_count:
            raise ValueError("layer count mismatch")
        return np.array([*config.weight_scales, *config.output_scales], dtype=np.float64)

    def decode(self, vector: np.ndarray) -> SfsConfig:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise ValueError(f"expected vector of length {self.dim}, got {vector.shape}")
        lo, hi = SFS_SCALE_RANGE
        clamped = np.clip(vector, lo, hi)
        return SfsConfig(
            model_id=self.model_id,
            weight_scales=tuple(clamped[: self.group_count]),
            output_scales=tuple(clamped[self.group_count :]),
        )

    def sample_vector(self, rng: np.random.Generator) -> np.ndarray:
        return self.encode(self.sample(rng))

    def perturb(
        self, vector: np.ndarray, rng: np.random.Generator, scale: float = 0.1
    ) -> np.ndarray:
        noisy = np.asarray(vector, dtype=np.float64) + rng.normal(0, scale, self.dim)
        return self.encode(self.decode(noisy))


def sfs_config_to_json(config: SfsConfig) -> dict:
    return {
        "model": config.model_id,
        "weight_scales": list(config.weight_scales),
        "output_scales": list(config.output_scales),
    }


def sfs_config_from_json(doc: dict) -> SfsConfig:
    config = SfsConfig(
        model_id=str(doc["model"]),
        weight_scales=tuple(float(x) for x in doc["weight_scales"]),
        output_scales=tuple(float(x) for x in doc["output_scales"]),
    )
    config.validate()
    return config
