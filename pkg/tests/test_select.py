import math

import numpy as np
import pytest

from luq.calib import build_mixed_calibration
from luq.entropy import EntropyProfile
from luq.select import (
    BudgetInfeasibleError,
    EmptyEvalSplitError,
    QuantPlan,
    binary_search,
    binary_search_select,
    budget_select,
    greedy_search,
    greedy_select,
    linear_scan,
    max_binary_evaluations,
    plan_bytes,
    plan_tags,
)
from luq.synth import gaussian_inputs, synth_stack


def monotone_profile(rng, L):
    return np.concatenate([[1.0], np.sort(rng.uniform(0, 1, L))[::-1]])


def test_plan_structure():
    pi = [3, 1, 4, 2]
    for k in range(5):
        tags = plan_tags(pi, k)
        assert all((tags[p - 1] == "bin") == (j < k) for j, p in enumerate(pi))


def test_plan_json_round_trip():
    plan = QuantPlan([2, 3, 1], 2, mode="threshold", tau=0.4)
    obj = plan.to_json()
    assert obj["tau"] == 0.4 and "budget" not in obj
    assert obj["tags"] == ["gptq4", "bin", "bin"]
    assert QuantPlan.from_json(obj).to_json() == obj
    assert QuantPlan([1, 2], 0).avg_bits_nominal == 4.0


def test_plan_validation():
    with pytest.raises(ValueError):
        QuantPlan([1, 1, 2], 0)
    with pytest.raises(ValueError):
        QuantPlan([1, 2], 3)


@pytest.mark.parametrize("L", [8, 32, 64])
def test_binary_matches_linear_scan(L):
    rng = np.random.default_rng(L)
    for _ in range(70):
        scores = monotone_profile(rng, L)
        tau = float(rng.uniform(-0.1, 1.1))
        res = binary_search(lambda k: scores[k], L, tau)
        assert res.k == linear_scan(scores, tau) == greedy_search(lambda k: scores[k], L, tau).k
        assert res.evaluations <= math.ceil(math.log2(L + 1)) + 1
        assert not res.non_monotone


def test_binary_edge_cases():
    assert binary_search(lambda k: 1.0, 32, 0.5).k == 32
    res = binary_search(lambda k: 0.0, 32, 0.5)
    assert res.k == 0 and 0 in res.scores
    assert binary_search(lambda k: 1.0, 32, -math.inf).k == 32
    assert max_binary_evaluations(32) == 7


def test_binary_flags_non_monotone():
    scores = [1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]
    res = binary_search(lambda k: scores[k], 8, 0.5)
    assert res.k == 4 and res.non_monotone


def test_greedy_stops_at_first_failure():
    scores = [1.0, 0.9, 0.8, 0.2, 0.9]
    res = greedy_search(lambda k: scores[k], 4, 0.5)
    assert res.k == 2 and res.evaluations == 3


@pytest.fixture(scope="module")
def tiny():
    st = synth_stack(4, 16, [2, 2, 16, 16], seed=0, vocab_size=16)
    calib = gaussian_inputs(4, 8, 16, seed=0)
    ids = np.random.default_rng(0).integers(0, 16, size=(6, 8))
    ev = build_mixed_calibration(ids, None, 6, 8, 0.0, seed=0, hidden_dim=16)
    return st, EntropyProfile(np.array([0.1, 0.2, 0.9, 0.8]), 10, [1, 2, 4, 3]), calib, ev


def test_stack_selection_thresholds(tiny):
    st, prof, calib, ev = tiny
    assert greedy_select(st, prof, calib, ev, -math.inf).k == 4
    assert greedy_select(st, prof, calib, ev, 2.0).k == 0
    res = binary_search_select(st, prof, calib, ev, -math.inf)
    assert res.k == 4 and res.plan.mode == "threshold" and res.plan.tau == -math.inf


def test_greedy_and_binary_agree_on_stack(tiny):
    st, prof, calib, ev = tiny
    g = greedy_select(st, prof, calib, ev, -math.inf)
    tau = min(g.scores.values())
    assert binary_search_select(st, prof, calib, ev, tau).k == greedy_select(st, prof, calib, ev, tau).k


def test_empty_eval_split(tiny):
    st, prof, calib, ev = tiny
    with pytest.raises(EmptyEvalSplitError):
        greedy_select(st, prof, calib, ev.subset([]), 0.0)


def test_budget_examples():
    pi = list(range(1, 33))
    params = [1000] * 32
    assert budget_select(pi, params, 12_700).k == 10
    assert plan_bytes(pi, 10, params, 1.08, 4.0) == pytest.approx(12_350)
    assert budget_select(pi, params, 16_000).k == 0
    with pytest.raises(BudgetInfeasibleError, match="budget infeasible"):
        budget_select(pi, params, 4000)


def test_budget_feasibility_is_tight():
    rng = np.random.default_rng(0)
    for _ in range(50):
        pi = list(rng.permutation(8) + 1)
        params = rng.integers(100, 1000, 8).tolist()
        budget = float(rng.uniform(plan_bytes(pi, 8, params, 1.08, 4.0), plan_bytes(pi, 0, params, 1.08, 4.0)))
        plan = budget_select(pi, params, budget, non_backbone=0.0)
        assert plan_bytes(pi, plan.k, params, 1.08, 4.0) <= budget
        if plan.k:
            assert plan_bytes(pi, plan.k - 1, params, 1.08, 4.0) > budget


def test_scaling_entropies_keeps_plans():
    H = np.random.default_rng(0).uniform(0, 4, 10)
    from luq.entropy import entropy_order
    assert plan_tags(entropy_order(H), 4) == plan_tags(entropy_order(3.7 * H), 4)
