import sys

import numpy as np
import pytest

from mergeopt.evaluator import (
    EvalRequest,
    EvaluationError,
    affine_layer_fn,
    compose_store,
    evaluate_external,
    make_synthetic_family,
    synthetic_evaluate,
)
from mergeopt.kernels import Linear
from mergeopt.lfs import CellSpec, LfsRecipe, build_lfs_model


# -- external protocol -----------------------------------------------------------


def _stub(code: str) -> list[str]:
    return [sys.executable, "-c", code]


ECHO_HALF = (
    "import json,sys; req=json.loads(sys.stdin.readline());"
    "print(json.dumps({'costs':[0.5]*len(req['tasks'])}))"
)


def test_protocol_round_trip():
    request = EvalRequest("/tmp/artifact", budget=100, tasks=("math",))
    got = evaluate_external(request, _stub(ECHO_HALF))
    assert got.costs == (0.5,)
    assert got.budget == 100


def test_request_fields_reach_child():
    code = (
        "import json,sys; req=json.loads(sys.stdin.readline());"
        "assert req['artifact']=='/a/b' and req['budget']==7 and req['tasks']==['x','y'];"
        "print(json.dumps({'costs':[0.1,0.2]}))"
    )
    got = evaluate_external(EvalRequest("/a/b", 7, ("x", "y")), _stub(code))
    assert got.costs == (0.1, 0.2)


def test_nonzero_exit_fails_trial():
    with pytest.raises(EvaluationError, match="exited 1"):
        evaluate_external(
            EvalRequest("/tmp/a", 10, ("t",)), _stub("import sys; sys.exit(1)")
        )


def test_cost_arity_mismatch_is_protocol_error():
    code = "import json,sys; sys.stdin.readline(); print(json.dumps({'costs':[0.1,0.2]}))"
    with pytest.raises(EvaluationError, match="2 costs for 3 tasks"):
        evaluate_external(EvalRequest("/tmp/a", 10, ("a", "b", "c")), _stub(code))


def test_malformed_reply_is_protocol_error():
    with pytest.raises(EvaluationError, match="not JSON"):
        evaluate_external(
            EvalRequest("/tmp/a", 10, ("t",)),
            _stub("import sys; sys.stdin.readline(); print('garbage')"),
        )


def test_timeout_fails_trial():
    code = "import sys,time; sys.stdin.readline(); time.sleep(5)"
    with pytest.raises(EvaluationError, match="timed out"):
        evaluate_external(EvalRequest("/tmp/a", 10, ("t",)), _stub(code), timeout=0.3)


def test_missing_command_fails_trial():
    with pytest.raises(EvaluationError, match="failed to start"):
        evaluate_external(
            EvalRequest("/tmp/a", 10, ("t",)), ["/nonexistent/harness-binary"]
        )


# -- synthetic families --------------------------------------------------------------


def test_family_seed_deterministic():
    a = make_synthetic_family(2, 3, 2, seed=42)
    b = make_synthetic_family(2, 3, 2, seed=42)
    np.testing.assert_array_equal(a.probes, b.probes)
    for mid in a.stores:
        for name in a.stores[mid].tensors:
            assert a.stores[mid].tensors[name].raw == b.stores[mid].tensors[name].raw
    c = make_synthetic_family(2, 3, 2, seed=43)
    assert any(
        a.stores["m0"].tensors[n].raw != c.stores["m0"].tensors[n].raw
        for n in a.stores["m0"].tensors
    )


def test_target_candidate_costs_zero_at_every_budget():
    family = make_synthetic_family(3, 4, 2, seed=1)
    target = family.targets["mean"]
    for budget in (1, 10, 100, 1000):
        assert synthetic_evaluate(target, family, budget).costs == (0.0,)


def test_uniform_linear_recipe_reaches_zero_cost():
    family = make_synthetic_family(2, 3, 2, seed=2)
    cell = CellSpec(Linear((0.5, 0.5)), ("m0", "m1"))
    recipe = LfsRecipe(
        base_model="m0",
        group_count=1,
        component_count=1,
        cells={(0, "all"): cell},
    )
    merged = build_lfs_model(recipe, family.stores)
    got = synthetic_evaluate(merged, family, budget=200)
    assert got.costs == (0.0,)


def test_cost_matches_direct_recomputation():
    family = make_synthetic_family(2, 3, 3, seed=3)
    candidate = family.stores["m1"]
    budget = 37
    got = synthetic_evaluate(candidate, family, budget)
    outputs = compose_store(candidate, family.probes[:budget])
    want = float(np.mean((outputs - family.reference_outputs[0, :budget]) ** 2))
    assert got.costs[0] == want


def test_prefix_mean_budget_consistency():
    family = make_synthetic_family(2, 3, 2, seed=4)
    candidate = family.stores["m0"]
    outputs = compose_store(candidate, family.probes)
    per_probe = np.mean((outputs - family.reference_outputs[0]) ** 2, axis=1)
    b1, b2 = 50, 400
    c1 = synthetic_evaluate(candidate, family, b1).costs[0]
    c2 = synthetic_evaluate(candidate, family, b2).costs[0]
    assert abs(c1 - c2) <= per_probe.max()


def test_scalar_family_smallest_instance():
    family = make_synthetic_family(1, 1, 1, seed=5)
    assert family.dim == 1 and family.layer_count == 1
    cost = synthetic_evaluate(family.stores["m0"], family, budget=5)
    # single model: the mean target IS the model
    assert cost.costs == (0.0,)


def test_budget_exceeding_pool_rejected():
    family = make_synthetic_family(1, 2, 2, seed=6, probe_pool=10)
    with pytest.raises(ValueError, match="budget"):
        synthetic_evaluate(family.stores["m0"], family, budget=11)


def test_multi_objective_targets_are_models():
    family = make_synthetic_family(2, 3, 3, seed=7, objectives=2)
    assert family.objectives == 2
    got = synthetic_evaluate(family.stores["m0"], family, budget=50)
    assert got.costs[0] == 0.0  # task0 target is m0 itself
    assert got.costs[1] > 0.0


def test_plan_evaluation_uses_layer_fn():
    from mergeopt.dis import AssemblyPlan

    family = make_synthetic_family(2, 3, 2, seed=8)
    plan = AssemblyPlan(
        steps=[("m0", 0, 0), ("m0", 1, 1)],
        block_scales=[1.0, 1.0],
        base_model="m0",
        depth=1,
        models=2,
        repeat=1,
    )
    got = synthetic_evaluate(plan, family, budget=20)
    want = synthetic_evaluate(family.stores["m0"], family, budget=20)
    assert got.costs == want.costs


def test_affine_layer_fn_matches_compose():
    family = make_synthetic_family(3, 2, 2, seed=9)
    fn = affine_layer_fn(family.stores)
    x = family.probes[:5]
    out = x
    for layer in range(3):
        out = fn("m1", layer, out)
    np.testing.assert_allclose(out, compose_store(family.stores["m1"], x))
