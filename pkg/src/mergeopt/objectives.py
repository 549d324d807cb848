"""Cost-function plumbing: scalarization weights, augmented Tchebycheff
aggregation, running cost normalization, and the Pareto archive."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any

DEFAULT_RHO = 0.05
NORM_EPS = 1e-12


@dataclass(frozen=True)
class CostVector:
    """Per-objective costs (lower is better) at a given evaluation budget."""

    costs: tuple[float, ...]
    budget: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "costs", tuple(float(c) for c in self.costs))
        if not self.costs:
            raise ValueError("cost vector must have at least one objective")
        if any(not math.isfinite(c) or c < 0 for c in self.costs):
            raise ValueError(f"costs must be finite and non-negative: {self.costs}")


@dataclass
class WeightLattice:
    """All simplex weight vectors with coordinates at multiples of 1/granularity."""

    k: int
    granularity: int
    vectors: list[tuple[float, ...]]


def weight_lattice(k: int, granularity: int) -> WeightLattice:
    """Enumerate the simplex lattice; size is C(granularity + k - 1, k - 1)."""
    if k < 1 or granularity < 1:
        raise ValueError("objective count and granularity must be >= 1")
    vectors: list[tuple[float, ...]] = []
    # stars and bars: bar positions between granularity units split into k parts
    for bars in combinations(range(granularity + k - 1), k - 1):
        parts = []
        prev = -1
        for bar in bars:
            parts.append(bar - prev - 1)
            prev = bar
        parts.append(granularity + k - 2 - prev)
        vectors.append(tuple(p / granularity for p in parts))
    assert len(vectors) == math.comb(granularity + k - 1, k - 1)
    return WeightLattice(k=k, granularity=granularity, vectors=vectors)


def tchebycheff_aggregate(
    costs: tuple[float, ...] | list[float],
    lam: tuple[float, ...] | list[float],
    rho: float = DEFAULT_RHO,
) -> float:
    """Augmented Tchebycheff: max_j(lam_j * c_j) + rho * sum_j(lam_j * c_j)."""
    if len(costs) != len(lam):
        raise ValueError(f"{len(costs)} costs but {len(lam)} weights")
    weighted = [l * c for l, c in zip(lam, costs)]
    return max(weighted) + rho * sum(weighted)


class CostNormalizer:
    """Running per-objective min/max used to map raw costs into [0, 1]."""

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("objective count must be >= 1")
        self.k = k
        self.lo = [math.inf] * k
        self.hi = [-math.inf] * k
        self.observations = 0

    def observe(self, costs: tuple[float, ...]) -> None:
        if len(costs) != self.k:
            raise ValueError(f"{len(costs)} costs but {self.k} objectives")
        for j, c in enumerate(costs):
            self.lo[j] = min(self.lo[j], c)
            self.hi[j] = max(self.hi[j], c)
        self.observations += 1

    def normalize(self, costs: tuple[float, ...]) -> tuple[float, ...]:
        if self.observations < 1:
            raise ValueError("normalizer has no observations")
        if len(costs) != self.k:
            raise ValueError(f"{len(costs)} costs but {self.k} objectives")
        out = []
        for j, c in enumerate(costs):
            value = (c - self.lo[j]) / (self.hi[j] - self.lo[j] + NORM_EPS)
            out.append(min(1.0, max(0.0, value)))
        return tuple(out)


def normalize_costs(raw: CostVector, stats: CostNormalizer) -> tuple[float, ...]:
    return stats.normalize(raw.costs)


def dominates(a: tuple[float, ...], b: tuple[float, ...]) -> bool:
    """Strict Pareto domination: no worse anywhere, strictly better somewhere."""
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


@dataclass
class ParetoEntry:
    config: Any
    costs: tuple[float, ...]
    budget: int
    key: str | None = None


@dataclass
class ParetoArchive:
    """Mutually non-dominated full-budget observations."""

    entries: list[ParetoEntry] = field(default_factory=list)

    def update(
        self, config: Any, costs: tuple[float, ...], budget: int, key: str | None = None
    ) -> bool:
        """Insert iff non-dominated; drops dominated incumbents. Returns
        whether the candidate entered the archive."""
        costs = tuple(float(c) for c in costs)
        if key is not None and any(e.key == key for e in self.entries):
            return False
        if any(dominates(e.costs, costs) for e in self.entries):
            return False
        self.entries = [e for e in self.entries if not dominates(costs, e.costs)]
        self.entries.append(ParetoEntry(config, costs, budget, key))
        return True

    def check_invariant(self) -> None:
        for i, a in enumerate(self.entries):
            for j, b in enumerate(self.entries):
                if i != j and dominates(a.costs, b.costs):
                    raise AssertionError(f"{a.costs} dominates {b.costs} in archive")


def update_pareto(archive: ParetoArchive, config: Any, costs, budget: int) -> ParetoArchive:
    archive.update(config, costs, budget)
    return archive


def accuracy_cost(correct: int, total: int) -> float:
    """1 - accuracy, so lower is better."""
    if total <= 0:
        raise ValueError("total must be positive")
    if not 0 <= correct <= total:
        raise ValueError(f"correct={correct} outside [0, {total}]")
    return 1.0 - correct / total
