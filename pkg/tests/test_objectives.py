import itertools
import math

import numpy as np
import pytest

from mergeopt.objectives import (
    CostNormalizer,
    CostVector,
    ParetoArchive,
    accuracy_cost,
    dominates,
    normalize_costs,
    tchebycheff_aggregate,
    weight_lattice,
)


# -- weight lattice ------------------------------------------------------------


def test_lattice_two_objectives():
    lattice = weight_lattice(2, 2)
    assert sorted(lattice.vectors) == [(0.0, 1.0), (0.5, 0.5), (1.0, 0.0)]
    assert len(lattice.vectors) == math.comb(3, 1)


def test_lattice_three_objectives_granularity_four():
    lattice = weight_lattice(3, 4)
    assert len(lattice.vectors) == 15 == math.comb(6, 2)


def test_lattice_single_objective():
    assert weight_lattice(1, 5).vectors == [(1.0,)]


def test_lattice_size_matches_binomial_and_enumeration():
    for k in range(1, 5):
        for s in range(1, 11):
            lattice = weight_lattice(k, s)
            assert len(lattice.vectors) == math.comb(s + k - 1, k - 1)
            assert len(set(lattice.vectors)) == len(lattice.vectors)
            for vec in lattice.vectors:
                assert abs(sum(vec) - 1.0) < 1e-12
                for coord in vec:
                    assert abs(coord * s - round(coord * s)) < 1e-9


def test_lattice_matches_brute_force_composition_count():
    s, k = 4, 3
    brute = {
        tuple(c / s for c in combo)
        for combo in itertools.product(range(s + 1), repeat=k)
        if sum(combo) == s
    }
    assert set(weight_lattice(k, s).vectors) == brute


# -- Tchebycheff -----------------------------------------------------------------


def test_tchebycheff_degenerate_weight():
    assert tchebycheff_aggregate((0.3, 0.9), (1.0, 0.0), rho=0.0) == 0.3


def test_tchebycheff_worked_example():
    got = tchebycheff_aggregate((0.2, 0.8), (0.5, 0.5), rho=0.05)
    assert abs(got - 0.425) < 1e-12


def test_tchebycheff_zero_costs():
    assert tchebycheff_aggregate((0.0, 0.0), (0.5, 0.5)) == 0.0


def test_tchebycheff_dimension_mismatch():
    with pytest.raises(ValueError, match="weights"):
        tchebycheff_aggregate((0.1,), (0.5, 0.5))


def test_tchebycheff_monotone():
    rng = np.random.default_rng(0)
    for _ in range(200):
        k = int(rng.integers(1, 4))
        costs = rng.uniform(0, 1, k)
        lam = rng.dirichlet(np.ones(k))
        j = int(rng.integers(k))
        bumped = costs.copy()
        bumped[j] = min(1.0, bumped[j] + rng.uniform(0, 0.5))
        assert tchebycheff_aggregate(tuple(bumped), tuple(lam)) >= tchebycheff_aggregate(
            tuple(costs), tuple(lam)
        )


# -- normalization -----------------------------------------------------------------


def test_single_observation_normalizes_to_zero():
    stats = CostNormalizer(2)
    stats.observe((3.0, 7.0))
    assert stats.normalize((3.0, 7.0)) == (0.0, 0.0)


def test_two_observations_span_unit_interval():
    stats = CostNormalizer(1)
    stats.observe((1.0,))
    stats.observe((3.0,))
    assert abs(stats.normalize((3.0,))[0] - 1.0) < 1e-9
    assert abs(stats.normalize((1.0,))[0]) < 1e-9


def test_out_of_range_observation_clamps_then_updates():
    stats = CostNormalizer(1)
    stats.observe((1.0,))
    stats.observe((3.0,))
    assert stats.normalize((5.0,)) == (1.0,)
    stats.observe((5.0,))
    assert abs(stats.normalize((3.0,))[0] - 0.5) < 1e-9


def test_normalize_costs_wrapper():
    stats = CostNormalizer(2)
    stats.observe((0.0, 0.0))
    stats.observe((2.0, 4.0))
    got = normalize_costs(CostVector((1.0, 1.0), budget=10), stats)
    assert abs(got[0] - 0.5) < 1e-9
    assert abs(got[1] - 0.25) < 1e-9


def test_normalization_order_preserving():
    rng = np.random.default_rng(1)
    stats = CostNormalizer(1)
    values = rng.uniform(0, 10, 50)
    for v in values:
        stats.observe((float(v),))
    normalized = [stats.normalize((float(v),))[0] for v in values]
    order = np.argsort(values)
    assert all(
        normalized[order[i]] <= normalized[order[i + 1]] + 1e-12
        for i in range(len(order) - 1)
    )


# -- Pareto archive ------------------------------------------------------------------


def test_mutually_nondominated_both_kept():
    archive = ParetoArchive()
    archive.update("a", (1.0, 2.0), budget=10)
    archive.update("b", (2.0, 1.0), budget=10)
    assert len(archive.entries) == 2
    archive.check_invariant()


def test_strict_domination_replaces():
    archive = ParetoArchive()
    archive.update("a", (1.0, 2.0), budget=10)
    archive.update("b", (1.0, 1.0), budget=10)
    assert [e.costs for e in archive.entries] == [(1.0, 1.0)]


def test_dominated_candidate_rejected():
    archive = ParetoArchive()
    archive.update("a", (1.0, 1.0), budget=10)
    assert not archive.update("b", (2.0, 2.0), budget=10)
    assert len(archive.entries) == 1


def test_archive_matches_brute_force_front():
    rng = np.random.default_rng(2)
    points = [tuple(rng.uniform(0, 1, 2)) for _ in range(100)]
    archive = ParetoArchive()
    for i, p in enumerate(points):
        archive.update(i, p, budget=1)
        archive.check_invariant()
    brute = {
        p for p in points if not any(dominates(q, p) for q in points if q != p)
    }
    assert {e.costs for e in archive.entries} == brute


def test_archive_key_dedup():
    archive = ParetoArchive()
    assert archive.update("a", (1.0, 1.0), budget=1, key="k1")
    assert not archive.update("a2", (0.5, 0.5), budget=1, key="k1")
    assert len(archive.entries) == 1


# -- accuracy cost ---------------------------------------------------------------------


@pytest.mark.parametrize("correct,total,want", [(50, 100, 0.5), (100, 100, 0.0), (0, 7, 1.0)])
def test_accuracy_cost(correct, total, want):
    assert accuracy_cost(correct, total) == want


def test_accuracy_cost_zero_total():
    with pytest.raises(ValueError, match="positive"):
        accuracy_cost(0, 0)


def test_cost_vector_validation():
    with pytest.raises(ValueError):
        CostVector((), budget=1)
    with pytest.raises(ValueError):
        CostVector((float("nan"),), budget=1)
    with pytest.raises(ValueError):
        CostVector((-0.5,), budget=1)
