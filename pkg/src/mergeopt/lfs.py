"""Layer-wise fusion search space.

A recipe assigns one merging method, its hyperparameters, and a subset of
source models to every (layer group, component) cell. Recipes can be sampled,
encoded to fixed-length real vectors for the surrogate, and materialized into
merged weight stores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import (
    Linear,
    MergeMethod,
    Slerp,
    TaskArithmetic,
    Ties,
    linear_merge,
    method_from_params,
    slerp,
    task_arithmetic_merge,
    ties_merge,
)
from .store import ComponentClass, WeightStore, classify_parameter

COMPONENT_KEYS_C3 = ("mlp", "att", "other")
COMPONENT_KEY_ALL = "all"

_CLASS_TO_KEY = {
    ComponentClass.MLP: "mlp",
    ComponentClass.ATT: "att",
    ComponentClass.NORM: "other",
}

_HYPER_RANGES = {"lambda": (0.0, 1.0), "k": (0.1, 0.99), "t": (0.0, 1.0), "w": (0.0, 1.0)}


def component_keys(component_count: int) -> tuple[str, ...]:
    if component_count == 3:
        return COMPONENT_KEYS_C3
    if component_count == 1:
        return (COMPONENT_KEY_ALL,)
    raise ValueError(f"component count must be 1 or 3, got {component_count}")


def assign_layer_groups(layer_count: int, group_count: int) -> list[tuple[int, int]]:
    """Split layers 0..L-1 into G consecutive (start, end)-inclusive ranges.

    Sizes differ by at most one; earlier groups absorb the remainder.
    """
    if group_count < 1 or group_count > layer_count:
        raise ValueError(
            f"group count {group_count} outside [1, {layer_count}] for {layer_count} layers"
        )
    base, rem = divmod(layer_count, group_count)
    ranges = []
    start = 0
    for g in range(group_count):
        size = base + (1 if g < rem else 0)
        ranges.append((start, start + size - 1))
        start += size
    return ranges


def group_of_layer(layer: int, ranges: list[tuple[int, int]]) -> int:
    for g, (lo, hi) in enumerate(ranges):
        if lo <= layer <= hi:
            return g
    raise ValueError(f"layer {layer} not covered by group ranges {ranges}")


@dataclass(frozen=True)
class CellSpec:
    """Merging method plus the source-model subset for one cell."""

    method: MergeMethod
    sources: tuple[str, ...]

    def validate(self, base_model: str) -> None:
        if not self.sources:
            raise ValueError("cell has no source models")
        if len(set(self.sources)) != len(self.sources):
            raise ValueError(f"duplicate sources {self.sources}")
        if isinstance(self.method, Slerp) and len(self.sources) != 2:
            raise ValueError(f"slerp needs exactly 2 sources, got {len(self.sources)}")
        if isinstance(self.method, Linear) and len(self.method.w) != len(self.sources):
            raise ValueError(
                f"linear needs one weight per source: {len(self.method.w)} weights,"
                f" {len(self.sources)} sources"
            )
        if isinstance(self.method, (TaskArithmetic, Ties)) and base_model in self.sources:
            raise ValueError(
                f"{self.method.kind} sources must exclude the base model {base_model!r}"
            )


@dataclass
class LfsRecipe:
    """Per-(group, component) merging plan over a candidate pool."""

    base_model: str
    group_count: int
    component_count: int
    cells: dict[tuple[int, str], CellSpec]
    group_ranges: list[tuple[int, int]] | None = None
    global_cell: CellSpec | None = None

    def validate(self) -> None:
        keys = component_keys(self.component_count)
        expected = {(g, c) for g in range(self.group_count) for c in keys}
        if set(self.cells) != expected:
            raise ValueError(
                f"recipe must populate exactly {len(expected)} cells "
                f"({self.group_count} groups x {keys}), got {sorted(self.cells)}"
            )
        for cell in self.cells.values():
            cell.validate(self.base_model)
        if self.global_cell is not None:
            self.global_cell.validate(self.base_model)
        if self.group_ranges is not None:
            if len(self.group_ranges) != self.group_count:
                raise ValueError("group_ranges length must equal group_count")
            for (lo, hi), (lo2, _) in zip(self.group_ranges, self.group_ranges[1:]):
                if lo > hi or lo2 != hi + 1:
                    raise ValueError(f"group ranges not consecutive: {self.group_ranges}")


def _apply_cell(
    cell: CellSpec, name: str, base: WeightStore, stores: dict[str, WeightStore]
) -> np.ndarray:
    for source in cell.sources:
        if source not in stores:
            raise ValueError(f"missing source model {source!r}")
        if name not in stores[source].tensors:
            raise ValueError(f"model {stores[source].model_id!r} lacks tensor {name!r}")
    tensors = [stores[s].values(name) for s in cell.sources]
    method = cell.method
    if isinstance(method, TaskArithmetic):
        return task_arithmetic_merge(base.values(name), tensors, method.lam)
    if isinstance(method, Ties):
        return ties_merge(base.values(name), tensors, method.k, method.lam)
    if isinstance(method, Slerp):
        return slerp(tensors[0], tensors[1], method.t)
    if isinstance(method, Linear):
        return linear_merge(tensors, list(method.w))
    raise ValueError(f"unknown merge method {method!r}")


def build_lfs_model(
    recipe: LfsRecipe,
    stores: dict[str, WeightStore],
    out_id: str = "merged",
) -> WeightStore:
    """Materialize a recipe into a merged store with the base's names/shapes.

    Non-layer tensors use the group-0 cell of the NORM-mapped component
    unless the recipe carries an explicit global cell.
    """
    recipe.validate()
    if recipe.base_model not in stores:
        raise ValueError(f"missing base model {recipe.base_model!r}")
    base = stores[recipe.base_model]
    ranges = recipe.group_ranges
    if ranges is None:
        ranges = assign_layer_groups(base.layer_count, recipe.group_count)

    global_key = "other" if recipe.component_count == 3 else COMPONENT_KEY_ALL
    merged: dict[str, np.ndarray] = {}
    for name in base.tensors:
        layer, comp = classify_parameter(name)
        if layer is None:
            cell = recipe.global_cell or recipe.cells[(0, global_key)]
        else:
            group = group_of_layer(layer, ranges)
            key = _CLASS_TO_KEY[comp] if recipe.component_count == 3 else COMPONENT_KEY_ALL
            cell = recipe.cells[(group, key)]
        merged[name] = _apply_cell(cell, name, base, stores)
    return base.replace_tensors(out_id, merged)


@dataclass
class LfsSpace:
    """Sampling and vector encoding for the layer-wise fusion space."""

    base_model: str
    candidates: tuple[str, ...]
    group_count: int
    component_count: int = 3
    methods: tuple[str, ...] = ("task_arithmetic", "ties", "slerp", "linear")

    def __post_init__(self) -> None:
        self.candidates = tuple(self.candidates)
        self.methods = tuple(self.methods)
        if not self.candidates:
            raise ValueError("candidate pool is empty")
        if len(set(self.candidates)) != len(self.candidates):
            raise ValueError("duplicate candidate ids")
        component_keys(self.component_count)
        non_base = [c for c in self.candidates if c != self.base_model]
        for m in self.methods:
            if m in ("task_arithmetic", "ties") and not non_base:
                raise ValueError(f"{m} enabled but no non-base candidates")
            if m not in ("task_arithmetic", "ties", "slerp", "linear"):
                raise ValueError(f"unknown method {m!r}")

    # -- layout ------------------------------------------------------------

    @property
    def cell_keys(self) -> list[tuple[int, str]]:
        return [
            (g, c)
            for g in range(self.group_count)
            for c in component_keys(self.component_count)
        ]

    @property
    def hyper_slots(self) -> list[tuple[str, str]]:
        """(method, param) slots in encoding order; linear gets one w per candidate."""
        slots: list[tuple[str, str]] = []
        if "task_arithmetic" in self.methods:
            slots.append(("task_arithmetic", "lambda"))
        if "ties" in self.methods:
            slots.append(("ties", "lambda"))
            slots.append(("ties", "k"))
        if "slerp" in self.methods:
            slots.append(("slerp", "t"))
        if "linear" in self.methods:
            slots.extend(("linear", f"w:{c}") for c in self.candidates)
        return slots

    @property
    def cell_width(self) -> int:
        return len(self.methods) + len(self.hyper_slots) + len(self.candidates)

    @property
    def dim(self) -> int:
        return len(self.cell_keys) * self.cell_width

    # -- sampling ------------------------------------------------------------

    def _feasible_methods(self) -> list[str]:
        out = []
        for m in self.methods:
            if m == "slerp" and len(self.candidates) < 2:
                continue
            out.append(m)
        return out

    def _sample_sources(self, method: str, rng: np.random.Generator) -> tuple[str, ...]:
        if method in ("task_arithmetic", "ties"):
            pool = [c for c in self.candidates if c != self.base_model]
        else:
            pool = list(self.candidates)
        if method == "slerp":
            picks = sorted(rng.choice(len(pool), size=2, replace=False))
            return (pool[picks[0]], pool[picks[1]])
        while True:
            mask = rng.random(len(pool)) < 0.5
            if mask.any():
                return tuple(c for c, m in zip(pool, mask) if m)

    def sample_cell(self, rng: np.random.Generator) -> CellSpec:
        feasible = self._feasible_methods()
        method_name = feasible[int(rng.integers(len(feasible)))]
        sources = self._sample_sources(method_name, rng)
        if method_name == "task_arithmetic":
            method: MergeMethod = TaskArithmetic(float(rng.uniform(0, 1)))
        elif method_name == "ties":
            method = Ties(float(rng.uniform(0, 1)), float(rng.uniform(0.1, 0.99)))
        elif method_name == "slerp":
            method = Slerp(float(rng.uniform(0, 1)))
        else:
            method = Linear(tuple(rng.dirichlet(np.ones(len(sources)))))
        return CellSpec(method, sources)

    def sample(self, rng: np.random.Generator) -> LfsRecipe:
        cells = {key: self.sample_cell(rng) for key in self.cell_keys}
        return LfsRecipe(
            base_model=self.base_model,
            group_count=self.group_count,
            component_count=self.component_count,
            cells=cells,
        )

    def initial_configs(self) -> list[LfsRecipe]:
        """One identity-like recipe per candidate: the recipe reproducing it."""
        return [self.identity_recipe(c) for c in self.candidates]

    def identity_recipe(self, model_id: str) -> LfsRecipe:
        if model_id not in self.candidates:
            raise ValueError(f"{model_id!r} not in candidate pool")
        if "linear" in self.methods:
            cell = CellSpec(Linear((1.0,)), (model_id,))
        elif "task_arithmetic" in self.methods and model_id != self.base_model:
            cell = CellSpec(TaskArithmetic(1.0), (model_id,))
        elif "ties" in self.methods and model_id != self.base_model:
            cell = CellSpec(Ties(1.0, 0.99), (model_id,))
        elif "slerp" in self.methods and len(self.candidates) >= 2:
            other = next(c for c in self.candidates if c != model_id)
            cell = CellSpec(Slerp(0.0), (model_id, other))
        else:
            raise ValueError(f"no enabled method can reproduce {model_id!r}")
        return LfsRecipe(
            base_model=self.base_model,
            group_count=self.group_count,
            component_count=self.component_count,
            cells={key: cell for key in self.cell_keys},
        )

    # -- vector encoding -------------------------------------------------------

    def encode(self, recipe: LfsRecipe) -> np.ndarray:
        recipe.validate()
        out = np.empty(self.dim, dtype=np.float64)
        pos = 0
        for key in self.cell_keys:
            cell = recipe.cells[key]
            out[pos : pos + self.cell_width] = self._encode_cell(cell)
            pos += self.cell_width
        return out

    def _midpoint(self, param: str) -> float:
        lo, hi = _HYPER_RANGES[param.split(":")[0] if param.startswith("w") else param]
        return (lo + hi) / 2.0

    def _encode_cell(self, cell: CellSpec) -> np.ndarray:
        vec = np.zeros(self.cell_width, dtype=np.float64)
        kind = cell.method.kind
        vec[self.methods.index(kind)] = 1.0
        params = cell.method.params()
        base = len(self.methods)
        for i, (method_name, param) in enumerate(self.hyper_slots):
            if method_name != kind:
                vec[base + i] = self._midpoint(param)
            elif param.startswith("w:"):
                candidate = param.split(":", 1)[1]
                if candidate in cell.sources:
                    vec[base + i] = params["w"][cell.sources.index(candidate)]
                else:
                    vec[base + i] = self._midpoint(param)
            else:
                vec[base + i] = params[param]
        member_base = base + len(self.hyper_slots)
        for j, candidate in enumerate(self.candidates):
            vec[member_base + j] = 1.0 if candidate in cell.sources else 0.0
        return vec

    def decode(self, vector: np.ndarray) -> LfsRecipe:
        """Inverse of encode; out-of-range entries clamp to the nearest valid value."""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise ValueError(f"expected vector of length {self.dim}, got {vector.shape}")
        cells = {}
        for idx, key in enumerate(self.cell_keys):
            chunk = vector[idx * self.cell_width : (idx + 1) * self.cell_width]
            cells[key] = self._decode_cell(chunk)
        return LfsRecipe(
            base_model=self.base_model,
            group_count=self.group_count,
            component_count=self.component_count,
            cells=cells,
        )

    def _decode_cell(self, chunk: np.ndarray) -> CellSpec:
        kind = self.methods[int(np.argmax(chunk[: len(self.methods)]))]
        if kind == "slerp" and len(self.candidates) < 2:
            kind = self._feasible_methods()[0]
        base = len(self.methods)
        member = chunk[base + len(self.hyper_slots) :]

        if kind in ("task_arithmetic", "ties"):
            allowed = [i for i, c in enumerate(self.candidates) if c != self.base_model]
        else:
            allowed = list(range(len(self.candidates)))
        selected = [i for i in allowed if member[i] > 0.5]
        if kind == "slerp":
            ranked = sorted(allowed, key=lambda i: (-member[i], i))
            selected = sorted(ranked[:2])
        elif not selected:
            selected = [min(allowed, key=lambda i: (-member[i], i))]
        sources = tuple(self.candidates[i] for i in selected)

        def slot(method_name: str, param: str) -> float:
            i = self.hyper_slots.index((method_name, param))
            lo, hi = _HYPER_RANGES[param.split(":")[0] if param.startswith("w") else param]
            return float(min(hi, max(lo, chunk[base + i])))

        if kind == "task_arithmetic":
            method: MergeMethod = TaskArithmetic(slot(kind, "lambda"))
        elif kind == "ties":
            method = Ties(slot(kind, "lambda"), slot(kind, "k"))
        elif kind == "slerp":
            method = Slerp(slot(kind, "t"))
        else:
            raw = np.array([slot("linear", f"w:{c}") for c in sources])
            total = raw.sum()
            if abs(total - 1.0) > 1e-9:
                raw = raw / total if total > 0 else np.full(len(sources), 1.0 / len(sources))
            method = Linear(tuple(raw))
        return CellSpec(method, sources)

    def perturb(self, vector: np.ndarray, rng: np.random.Generator, scale: float = 0.1) -> np.ndarray:
        """Local move: gaussian noise then re-canonicalization through decode."""
        noisy = np.asarray(vector, dtype=np.float64) + rng.normal(0.0, scale, size=self.dim)
        return self.encode(self.decode(noisy))


def sample_lfs(space: LfsSpace, seed: int) -> LfsRecipe:
    """Uniform recipe draw, deterministic per seed."""
    return space.sample(np.random.default_rng(seed))


# -- JSON serialization ---------------------------------------------------------


def recipe_to_json(recipe: LfsRecipe, layer_count: int | None = None) -> dict:
    """Structured document: {base_model, groups: [{range, cells: {...}}]}."""
    recipe.validate()
    ranges = recipe.group_ranges
    if ranges is None and layer_count is not None:
        ranges = assign_layer_groups(layer_count, recipe.group_count)
    groups = []
    for g in range(recipe.group_count):
        cells = {}
        for key in component_keys(recipe.component_count):
            cell = recipe.cells[(g, key)]
            cells[key] = {
                "method": cell.method.kind,
                "params": cell.method.params(),
                "sources": list(cell.sources),
            }
        groups.append(
            {"range": list(ranges[g]) if ranges is not None else None, "cells": cells}
        )
    doc = {
        "base_model": recipe.base_model,
        "component_count": recipe.component_count,
        "groups": groups,
    }
    if recipe.global_cell is not None:
        doc["global_cell"] = {
            "method": recipe.global_cell.method.kind,
            "params": recipe.global_cell.method.params(),
            "sources": list(recipe.global_cell.sources),
        }
    return doc


def _cell_from_json(doc: dict) -> CellSpec:
    return CellSpec(
        method_from_params(doc["method"], doc["params"]),
        tuple(doc["sources"]),
    )


def recipe_from_json(doc: dict) -> LfsRecipe:
    groups = doc["groups"]
    component_count = int(doc.get("component_count", 3))
    cells: dict[tuple[int, str], CellSpec] = {}
    ranges: list[tuple[int, int]] | None = []
    for g, group in enumerate(groups):
        for key in component_keys(component_count):
            cells[(g, key)] = _cell_from_json(group["cells"][key])
        if group.get("range") is None:
            ranges = None
        elif ranges is not None:
            lo, hi = group["range"]
            ranges.append((int(lo), int(hi)))
    recipe = LfsRecipe(
        base_model=doc["base_model"],
        group_count=len(groups),
        component_count=component_count,
        cells=cells,
        group_ranges=ranges,
        global_cell=_cell_from_json(doc["global_cell"]) if "global_cell" in doc else None,
    )
    recipe.validate()
    return recipe
