"""Objective-evaluation boundary.

Two evaluators: an external-process protocol for real benchmark harnesses
(one JSON request on the child's stdin, one JSON cost reply on its stdout)
and a built-in synthetic harness over small affine layer stacks whose costs
are brute-force recomputable and whose fidelity knob is the probe count.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass

import numpy as np

from .dis import AssemblyPlan, execute_plan
from .objectives import CostVector
from .store import WeightStore

DEFAULT_TIMEOUT = 3600.0


class EvaluationError(RuntimeError):
    """Child-process failure, protocol violation, or malformed reply."""


@dataclass(frozen=True)
class EvalRequest:
    artifact_path: str
    budget: int
    tasks: tuple[str, ...]


def evaluate_external(
    request: EvalRequest,
    command: list[str],
    timeout: float = DEFAULT_TIMEOUT,
) -> CostVector:
    """Run the harness command once: write the request as one JSON line to its
    stdin, read {"costs": [...]} from its stdout. Any non-zero exit, timeout,
    or malformed/mis-sized reply fails the trial."""
    payload = json.dumps(
        {
            "artifact": str(request.artifact_path),
            "budget": int(request.budget),
            "tasks": list(request.tasks),
        }
    )
    try:
        proc = subprocess.run(
            command,
            input=payload + "\n",
            capture_output=True,
            text=True,
            timeout=timeout,
        )
    except subprocess.TimeoutExpired as exc:
        raise EvaluationError(f"evaluator timed out after {timeout}s") from exc
    except OSError as exc:
        raise EvaluationError(f"evaluator command failed to start: {exc}") from exc
    if proc.returncode != 0:
        raise EvaluationError(
            f"evaluator exited {proc.returncode}: {proc.stderr.strip()[:500]}"
        )
    try:
        reply = json.loads(proc.stdout.strip())
    except json.JSONDecodeError as exc:
        raise EvaluationError(f"evaluator reply is not JSON: {proc.stdout[:200]!r}") from exc
    if not isinstance(reply, dict) or "costs" not in reply:
        raise EvaluationError(f"evaluator reply missing 'costs': {reply!r}")
    costs = reply["costs"]
    if not isinstance(costs, list) or len(costs) != len(request.tasks):
        raise EvaluationError(
            f"evaluator returned {len(costs) if isinstance(costs, list) else '?'} costs "
            f"for {len(request.tasks)} tasks"
        )
    return CostVector(tuple(float(c) for c in costs), budget=request.budget)


# -- synthetic harness --------------------------------------------------------------


def _layer_params(store: WeightStore, layer: int) -> tuple[np.ndarray, np.ndarray]:
    weight = store.values(f"model.layers.{layer}.mlp.weight")
    bias = store.values(f"model.layers.{layer}.mlp.bias")
    return weight, bias


def affine_layer_fn(stores: dict[str, WeightStore]):
    """layer_fn over affine toy stores: x -> x @ W.T + b, batched."""

    def layer_fn(model_id: str, layer: int, activation: np.ndarray) -> np.ndarray:
        weight, bias = _layer_params(stores[model_id], layer)
        return activation @ weight.T + bias

    return layer_fn


def compose_store(store: WeightStore, inputs: np.ndarray) -> np.ndarray:
    """Run a batch of inputs through all of a store's affine layers in order."""
    out = np.asarray(inputs, dtype=np.float64)
    for layer in range(store.layer_count):
        weight, bias = _layer_params(store, layer)
        out = out @ weight.T + bias
    return out


@dataclass
class SyntheticFamily:
    """Seeded affine models, reference targets, and a fixed probe pool.

    Costs are the mean squared error against each target over the first
    `budget` probes, so higher budgets refine the same deterministic estimate.
    """

    stores: dict[str, WeightStore]
    targets: dict[str, WeightStore]
    probes: np.ndarray
    reference_outputs: np.ndarray  # (objectives, pool, dim)
    base_model: str
    layer_count: int
    dim: int

    @property
    def model_ids(self) -> tuple[str, ...]:
        return tuple(self.stores)

    @property
    def objectives(self) -> int:
        return len(self.targets)

    @property
    def task_ids(self) -> tuple[str, ...]:
        return tuple(self.targets)


def make_synthetic_family(
    layer_count: int,
    dim: int,
    model_count: int,
    seed: int,
    objectives: int = 1,
    probe_pool: int = 1000,
) -> SyntheticFamily:
    """Seed-deterministic family of `model_count` affine models.

    With one objective the target is the elementwise-mean merge of all
    models, so the uniform Linear recipe reaches cost zero. With k > 1
    objectives the targets are the first k models' own compositions, giving
    a genuine trade-off surface.
    """
    if min(layer_count, dim, model_count, probe_pool) < 1:
        raise ValueError("layer_count, dim, model_count, probe_pool must be >= 1")
    if objectives > 1 and objectives > model_count:
        raise ValueError(f"{objectives} objectives need at least as many models")
    rng = np.random.default_rng(seed)
    ids = [f"m{i}" for i in range(model_count)]
    stores: dict[str, WeightStore] = {}
    for model_id in ids:
        arrays: dict[str, np.ndarray] = {}
        for layer in range(layer_count):
            arrays[f"model.layers.{layer}.mlp.weight"] = 0.9 * np.eye(dim) + rng.normal(
                0, 0.3 / np.sqrt(dim), (dim, dim)
            )
            arrays[f"model.layers.{layer}.mlp.bias"] = rng.normal(0, 0.2, dim)
        stores[model_id] = WeightStore.from_arrays(model_id, arrays)

    targets: dict[str, WeightStore] = {}
    if objectives == 1:
        # Average the float32 store values (not the float64 originals) so the
        # uniform Linear merge of the stores reproduces the target bit-exactly
        # for two models.
        arrays = {}
        for name in stores[ids[0]].tensors:
            arrays[name] = np.mean(
                [stores[m].values(name) for m in ids], axis=0, dtype=np.float64
            )
        targets["mean"] = WeightStore.from_arrays("target-mean", arrays)
    else:
        for j in range(objectives):
            targets[f"task{j}"] = stores[ids[j]]

    probes = rng.normal(0, 1, (probe_pool, dim))
    reference = np.stack(
        [compose_store(target, probes) for target in targets.values()]
    )
    return SyntheticFamily(
        stores=stores,
        targets=targets,
        probes=probes,
        reference_outputs=reference,
        base_model=ids[0],
        layer_count=layer_count,
        dim=dim,
    )


def synthetic_evaluate(
    artifact: WeightStore | AssemblyPlan,
    family: SyntheticFamily,
    budget: int,
    extra_stores: dict[str, WeightStore] | None = None,
) -> CostVector:
    """MSE against each target over the first `budget` probes of the pool."""
    pool = family.probes.shape[0]
    if not 1 <= budget <= pool:
        raise ValueError(f"budget {budget} outside [1, {pool}]")
    probes = family.probes[:budget]
    if isinstance(artifact, AssemblyPlan):
        stores = dict(family.stores)
        if extra_stores:
            stores.update(extra_stores)
        outputs = execute_plan(artifact, stores, probes, affine_layer_fn(stores))
    else:
        outputs = compose_store(artifact, probes)
    costs = []
    for j in range(family.objectives):
        diff = outputs - family.reference_outputs[j, :budget]
        costs.append(float(np.mean(diff**2)))
    return CostVector(tuple(costs), budget=budget)
