"""Depth-wise integration search space.

A configuration selects, orders, and scales source-model layers block by
block while preserving their weights. Empty blocks fall back to the base
model's layers so the assembled network never loses depth. Permutations over
the block's candidate multiset are indexed by lexicographic rank.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .store import WeightStore

DEFAULT_MAX_LAYERS = 50
SCALE_RANGE = (0.5, 1.5)


# -- multiset permutation ranking ----------------------------------------------


def permutation_count(depth: int, models: int, repeat: int) -> int:
    """Distinct orderings of the block multiset: (D*M*R)! / (R!)^(M*D)."""
    if depth < 1 or models < 1 or repeat < 1:
        raise ValueError("depth, models, and repeat must all be >= 1")
    return factorial(depth * models * repeat) // factorial(repeat) ** (models * depth)


def _block_items(depth: int, models: int) -> list[tuple[int, int]]:
    """Item types (model, depth slot) in ascending lexicographic order."""
    return [(m, d) for m in range(models) for d in range(depth)]


def _orderings_below(counts: list[int]) -> int:
    total = sum(counts)
    out = factorial(total)
    for c in counts:
        out //= factorial(c)
    return out


def unrank_permutation(
    p: int, depth: int, models: int, repeat: int
) -> list[tuple[int, int]]:
    """The p-th (lexicographic) ordering of the block's candidate multiset."""
    total_perms = permutation_count(depth, models, repeat)
    if not 0 <= p < total_perms:
        raise ValueError(f"permutation index {p} outside [0, {total_perms})")
    items = _block_items(depth, models)
    counts = [repeat] * len(items)
    ordering: list[tuple[int, int]] = []
    for _ in range(depth * models * repeat):
        for i, item in enumerate(items):
            if counts[i] == 0:
                continue
            counts[i] -= 1
            below = _orderings_below(counts)
            if p < below:
                ordering.append(item)
                break
            p -= below
            counts[i] += 1
    return ordering


def rank_permutation(
    ordering: list[tuple[int, int]], depth: int, models: int, repeat: int
) -> int:
    """Inverse of unrank_permutation."""
    items = _block_items(depth, models)
    counts = [repeat] * len(items)
    if sorted(ordering) != sorted(items * repeat):
        raise ValueError("ordering is not a permutation of the block multiset")
    rank = 0
    for element in ordering:
        for i, item in enumerate(items):
            if item == element:
                counts[i] -= 1
                break
            if counts[i] == 0:
                continue
            counts[i] -= 1
            rank += _orderings_below(counts)
            counts[i] += 1
    return rank


def priority_ordering(priorities: np.ndarray, selection: np.ndarray) -> list[int]:
    """Active slot indices sorted by descending priority, ties by slot index.

    Linear-size alternative to the factorial permutation index.
    """
    priorities = np.asarray(priorities, dtype=float)
    selection = np.asarray(selection)
    if priorities.shape != selection.shape:
        raise ValueError("priorities and selection must have equal length")
    if not np.all(np.isfinite(priorities)):
        raise ValueError("priorities must be finite")
    active = [i for i in range(len(selection)) if selection[i]]
    return sorted(active, key=lambda i: (-priorities[i], i))


# -- configuration and plans -------------------------------------------------------


@dataclass(frozen=True)
class BlockSpec:
    """Per-block layer activation bits, permutation index, and output scale."""

    selection: tuple[int, ...]
    perm_index: int
    scale: float

    def validate(self, depth: int, models: int, repeat: int) -> None:
        slots = depth * models * repeat
        if len(self.selection) != slots:
            raise ValueError(
                f"selection has {len(self.selection)} bits, expected {slots}"
            )
        if any(b not in (0, 1) for b in self.selection):
            raise ValueError("selection must be 0/1 bits")
        total = permutation_count(depth, models, repeat)
        if not 0 <= self.perm_index < total:
            raise ValueError(f"perm_index {self.perm_index} outside [0, {total})")
        lo, hi = SCALE_RANGE
        if not lo <= self.scale <= hi:
            raise ValueError(f"block scale {self.scale} outside [{lo}, {hi}]")


@dataclass
class DisConfig:
    """Block-wise depth integration over an ordered candidate pool."""

    base_model: str
    model_ids: tuple[str, ...]
    depth: int
    repeat: int
    blocks: list[BlockSpec]

    @property
    def models(self) -> int:
        return len(self.model_ids)

    @property
    def layer_count(self) -> int:
        return self.depth * len(self.blocks)

    def validate(self) -> None:
        if not self.blocks:
            raise ValueError("config has no blocks")
        if self.depth < 1 or self.repeat < 1 or not self.model_ids:
            raise ValueError("depth, repeat, and model pool must be non-empty")
        for block in self.blocks:
            block.validate(self.depth, self.models, self.repeat)


def slot_index(m: int, d: int, r: int, depth: int, repeat: int) -> int:
    return (m * depth + d) * repeat + r


@dataclass
class AssemblyPlan:
    """Realized layer pipeline: ordered (model, layer, block) steps and the
    per-block output scales."""

    steps: list[tuple[str, int, int]]
    block_scales: list[float]
    base_model: str
    depth: int
    models: int
    repeat: int
    feasible: bool = True


def plan_step_count(config: DisConfig) -> int:
    """Realized step count including retention layers, without building."""
    total = 0
    for block in config.blocks:
        active = sum(block.selection)
        total += active if active > 0 else config.depth
    return total


def build_dis_plan(
    config: DisConfig,
    stores: dict[str, WeightStore] | None = None,
    max_layers: int = DEFAULT_MAX_LAYERS,
) -> AssemblyPlan:
    """Realize a configuration: active slots in permutation order per block,
    base-model layers for empty blocks, infeasibility flagged (not raised)
    when the step count exceeds max_layers."""
    config.validate()
    depth, models, repeat = config.depth, config.models, config.repeat
    steps: list[tuple[str, int, int]] = []
    for i, block in enumerate(config.blocks):
        ordering = unrank_permutation(block.perm_index, depth, models, repeat)
        seen: dict[tuple[int, int], int] = {}
        emitted: list[tuple[str, int, int]] = []
        for m, d in ordering:
            r = seen.get((m, d), 0)
            seen[(m, d)] = r + 1
            if block.selection[slot_index(m, d, r, depth, repeat)]:
                emitted.append((config.model_ids[m], i * depth + d, i))
        if not emitted:
            emitted = [(config.base_model, i * depth + d, i) for d in range(depth)]
        steps.extend(emitted)

    if stores is not None:
        for model_id, layer, _ in steps:
            if model_id not in stores:
                raise ValueError(f"missing model {model_id!r}")
            if layer >= stores[model_id].layer_count:
                raise ValueError(
                    f"model {model_id!r} has {stores[model_id].layer_count} layers, "
                    f"plan references layer {layer}"
                )
    return AssemblyPlan(
        steps=steps,
        block_scales=[block.scale for block in config.blocks],
        base_model=config.base_model,
        depth=depth,
        models=models,
        repeat=repeat,
        feasible=len(steps) <= max_layers,
    )


def execute_plan(plan: AssemblyPlan, stores, activation, layer_fn):
    """Run the layer pipeline: layer_fn(model_id, layer, activation) applied
    step by step, multiplying by the block scale after each block's last step."""
    current = np.asarray(activation, dtype=float)
    for idx, (model_id, layer, block) in enumerate(plan.steps):
        if stores is not None and model_id not in stores:
            raise ValueError(f"missing model {model_id!r}")
        nxt = np.asarray(layer_fn(model_id, layer, current))
        if nxt.shape != current.shape:
            raise ValueError(
                f"layer_fn changed activation shape {current.shape} -> {nxt.shape}"
            )
        current = nxt
        last_of_block = idx + 1 == len(plan.steps) or plan.steps[idx + 1][2] != block
        if last_of_block:
            current = current * float(plan.block_scales[block])
    return current


def export_plan(plan: AssemblyPlan) -> dict:
    """JSON manifest {blocks: [{layers, scale}], base_model, D, M, R}."""
    if not plan.steps:
        raise ValueError("cannot export an empty plan")
    blocks = []
    for b in range(len(plan.block_scales)):
        layers = [
            {"model": model_id, "layer": layer}
            for model_id, layer, block in plan.steps
            if block == b
        ]
        blocks.append({"layers": layers, "scale": plan.block_scales[b]})
    return {
        "blocks": blocks,
        "base_model": plan.base_model,
        "D": plan.depth,
        "M": plan.models,
        "R": plan.repeat,
    }


def import_plan(doc: dict, max_layers: int = DEFAULT_MAX_LAYERS) -> AssemblyPlan:
    """Inverse of export_plan; feasibility recomputed against max_layers."""
    blocks = doc.get("blocks")
    if not blocks:
        raise ValueError("plan manifest has no blocks")
    steps: list[tuple[str, int, int]] = []
    scales: list[float] = []
    for b, block in enumerate(blocks):
        layers = block.get("layers", [])
        if not layers:
            raise ValueError(f"block {b} has no layers")
        for entry in layers:
            steps.append((str(entry["model"]), int(entry["layer"]), b))
        scales.append(float(block["scale"]))
    return AssemblyPlan(
        steps=steps,
        block_scales=scales,
        base_model=str(doc["base_model"]),
        depth=int(doc["D"]),
        models=int(doc["M"]),
        repeat=int(doc["R"]),
        feasible=len(steps) <= max_layers,
    )


# -- optimizer-facing space adapter ---------------------------------------------------


@dataclass
class DisSpace:
    """Sampling and vector encoding for depth-wise integration.

    Each block encodes as selection bits, per-slot ordering priorities (the
    sort-based linear stand-in for the factorial permutation index), and the
    output scale.
    """

    base_model: str
    model_ids: tuple[str, ...]
    layer_count: int
    depth: int = 1
    repeat: int = 1
    max_layers: int = DEFAULT_MAX_LAYERS
    select_prob: float = 0.5

    def __post_init__(self) -> None:
        self.model_ids = tuple(self.model_ids)
        if self.layer_count % self.depth != 0:
            raise ValueError(
                f"layer count {self.layer_count} not divisible by depth {self.depth}"
            )
        if not self.model_ids:
            raise ValueError("model pool is empty")

    @property
    def block_count(self) -> int:
        return self.layer_count // self.depth

    @property
    def slots(self) -> int:
        return len(self.model_ids) * self.depth * self.repeat

    @property
    def block_width(self) -> int:
        return 2 * self.slots + 1

    @property
    def dim(self) -> int:
        return self.block_count * self.block_width

    def sample(self, rng: np.random.Generator) -> DisConfig:
        total = permutation_count(self.depth, len(self.model_ids), self.repeat)
        blocks = []
        for _ in range(self.block_count):
            bits = tuple(int(b) for b in rng.random(self.slots) < self.select_prob)
            blocks.append(
                BlockSpec(
                    selection=bits,
                    perm_index=int(rng.integers(total)),
                    scale=float(rng.uniform(*SCALE_RANGE)),
                )
            )
        return DisConfig(
            base_model=self.base_model,
            model_ids=self.model_ids,
            depth=self.depth,
            repeat=self.repeat,
            blocks=blocks,
        )

    def initial_configs(self) -> list[DisConfig]:
        """Base-model retention plus each candidate's own layer pathway."""
        empty = tuple([0] * self.slots)
        configs = [self._uniform_config(empty)]
        for m in range(len(self.model_ids)):
            bits = [0] * self.slots
            for d in range(self.depth):
                bits[slot_index(m, d, 0, self.depth, self.repeat)] = 1
            configs.append(self._uniform_config(tuple(bits)))
        return configs

    def _uniform_config(self, bits: tuple[int, ...]) -> DisConfig:
        block = BlockSpec(selection=bits, perm_index=0, scale=1.0)
        return DisConfig(
            base_model=self.base_model,
            model_ids=self.model_ids,
            depth=self.depth,
            repeat=self.repeat,
            blocks=[block] * self.block_count,
        )

    def feasible(self, config: DisConfig) -> bool:
        return plan_step_count(config) <= self.max_layers

    # -- encoding ------------------------------------------------------------

    def encode(self, config: DisConfig) -> np.ndarray:
        config.validate()
        if len(config.blocks) != self.block_count:
            raise ValueError(
                f"config has {len(config.blocks)} blocks, space expects {self.block_count}"
            )
        out = np.empty(self.dim, dtype=np.float64)
        slots = self.slots
        for i, block in enumerate(config.blocks):
            chunk = out[i * self.block_width : (i + 1) * self.block_width]
            chunk[:slots] = block.selection
            ordering = unrank_permutation(
                block.perm_index, self.depth, len(self.model_ids), self.repeat
            )
            seen: dict[tuple[int, int], int] = {}
            priorities = np.zeros(slots)
            for position, (m, d) in enumerate(ordering):
                r = seen.get((m, d), 0)
                seen[(m, d)] = r + 1
                slot = slot_index(m, d, r, self.depth, self.repeat)
                priorities[slot] = (slots - position) / slots
            chunk[slots : 2 * slots] = priorities
            chunk[2 * slots] = block.scale
        return out

    def decode(self, vector: np.ndarray) -> DisConfig:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise ValueError(f"expected vector of length {self.dim}, got {vector.shape}")
        slots = self.slots
        blocks = []
        for i in range(self.block_count):
            chunk = vector[i * self.block_width : (i + 1) * self.block_width]
            bits = tuple(int(b > 0.5) for b in chunk[:slots])
            priorities = chunk[slots : 2 * slots]
            order = sorted(range(slots), key=lambda s: (-priorities[s], s))
            item_seq = [self._slot_item(s) for s in order]
            p = rank_permutation(item_seq, self.depth, len(self.model_ids), self.repeat)
            lo, hi = SCALE_RANGE
            scale = float(min(hi, max(lo, chunk[2 * slots])))
            blocks.append(BlockSpec(selection=bits, perm_index=p, scale=scale))
        return DisConfig(
            base_model=self.base_model,
            model_ids=self.model_ids,
            depth=self.depth,
            repeat=self.repeat,
            blocks=blocks,
        )

    def _slot_item(self, slot: int) -> tuple[int, int]:
        m, rest = divmod(slot, self.depth * self.repeat)
        d, _ = divmod(rest, self.repeat)
        return (m, d)

    def sample_vector(self, rng: np.random.Generator) -> np.ndarray:
        return self.encode(self.sample(rng))

    def perturb(
        self, vector: np.ndarray, rng: np.random.Generator, scale: float = 0.1
    ) -> np.ndarray:
        """Flip a few selection bits and jitter priorities/scales, then
        re-canonicalize."""
        noisy = np.asarray(vector, dtype=np.float64).copy()
        slots = self.slots
        flip_prob = min(0.25, scale)
        for i in range(self.block_count):
            base = i * self.block_width
            flips = rng.random(slots) < flip_prob
            noisy[base : base + slots] = np.where(
                flips, 1.0 - noisy[base : base + slots], noisy[base : base + slots]
            )
            noisy[base + slots : base + 2 * slots] += rng.normal(0, scale, slots)
            noisy[base + 2 * slots] += rng.normal(0, scale)
        return self.encode(self.decode(noisy))
