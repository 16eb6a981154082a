"""Entropy-ordered layer selection.

Layers are taken in ascending-entropy order: a plan with step ``k`` puts the
first ``k`` layers of that order on the ultra-low tier and every other layer
on the 4-bit tier. The step is chosen by a performance threshold (greedy scan
or bisection) or by a memory budget.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .entropy import EntropyProfile, entropy_order  # noqa: F401  (re-exported)
from .quant.bits import avg_bitwidth
from .quant.config import QuantConfig

MODES = ("threshold", "budget", "fixed-k")
SEARCHES = ("greedy", "binary")


class BudgetInfeasibleError(ValueError):
    pass


class EmptyEvalSplitError(ValueError):
    pass


@dataclass
class QuantPlan:
    pi: list  # 1-indexed layers, ascending entropy
    k: int
    low_tag: str = "bin"
    high_tag: str = "gptq4"
    low_bits: float = 1.08
    high_bits: float = 4.0
    mode: str = "fixed-k"
    tau: float | None = None
    budget: float | None = None
    metric: str = "token_accuracy"

    def __post_init__(self):
        self.pi = [int(p) for p in self.pi]
        L = len(self.pi)
        if sorted(self.pi) != list(range(1, L + 1)):
            raise ValueError("pi must be a permutation of 1..L")
        if not 0 <= self.k <= L:
            raise ValueError(f"k must lie in [0, {L}]")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def num_layers(self) -> int:
        return len(self.pi)

    @property
    def tags(self) -> list:
        return plan_tags(self.pi, self.k, self.low_tag, self.high_tag)

    @property
    def avg_bits_nominal(self) -> float:
        bits = [self.low_bits if t == self.low_tag else self.high_bits for t in self.tags]
        return avg_bitwidth(bits)

    def with_k(self, k: int) -> "QuantPlan":
        return QuantPlan(self.pi, k, self.low_tag, self.high_tag, self.low_bits, self.high_bits,
                         self.mode, self.tau, self.budget, self.metric)

    def to_json(self) -> dict:
        out = {"pi": list(self.pi), "k": int(self.k), "tags": self.tags, "mode": self.mode,
               "avg_bits_nominal": float(self.avg_bits_nominal), "metric": self.metric,
               "low_bits": float(self.low_bits), "high_bits": float(self.high_bits)}
        if self.mode == "threshold":
            out["tau"] = self.tau
        elif self.mode == "budget":
            out["budget"] = self.budget
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "QuantPlan":
        tags = obj["tags"]
        low = "bin"
        high = next((t for t in tags if t != low), "gptq4")
        plan = cls(obj["pi"], int(obj["k"]), low, high, float(obj.get("low_bits", 1.08)),
                   float(obj.get("high_bits", 4.0)), obj.get("mode", "fixed-k"), obj.get("tau"),
                   obj.get("budget"), obj.get("metric", "token_accuracy"))
        if plan.tags != list(tags):
            raise ValueError("plan tags disagree with its order and step")
        return plan

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n"


def plan_tags(pi, k: int, low_tag: str = "bin", high_tag: str = "gptq4") -> list:
    """Layer ``pi[j]`` gets the low tag exactly when ``j < k``."""
    tags = [high_tag] * len(pi)
    for layer in list(pi)[:k]:
        tags[layer - 1] = low_tag
    return tags


def plan_for(pi, k: int, config: QuantConfig | None = None, **provenance) -> QuantPlan:
    config = config or QuantConfig()
    return QuantPlan(pi, k, config.low_tag, config.high_tag, config.low_bits, float(config.high_bits), **provenance)


@dataclass
class SelectionResult:
    k: int
    scores: dict  # step -> measured performance, only for evaluated steps
    evaluations: int
    plan: QuantPlan | None = None
    non_monotone: bool = False
    order: list = field(default_factory=list)  # steps in evaluation order

    def to_json(self) -> dict:
        return {"k": int(self.k), "evaluations": int(self.evaluations), "non_monotone": bool(self.non_monotone),
                "scores": {str(k): float(v) for k, v in sorted(self.scores.items())},
                "plan": self.plan.to_json() if self.plan is not None else None}


# ------------------------------------------------------------------ search over k


class _Counted:
    def __init__(self, perf):
        self.perf = perf
        self.scores = {}
        self.order = []

    def __call__(self, k: int) -> float:
        if k not in self.scores:
            self.scores[k] = float(self.perf(k))
            self.order.append(k)
        return self.scores[k]


def greedy_search(perf, L: int, tau: float) -> SelectionResult:
    """Raise k one layer at a time and stop at the first step below ``tau``."""
    f = _Counted(perf)
    k_star = 0
    for k in range(1, L + 1):
        if f(k) >= tau:
            k_star = k
        else:
            break
    return SelectionResult(k_star, f.scores, len(f.order), order=f.order)


def binary_search(perf, L: int, tau: float) -> SelectionResult:
    """Largest k in [0, L] with ``perf(k) >= tau``, assuming performance falls with k.

    Bisection treats k = 0 as the fallback and spends at most
    ``ceil(log2(L + 1))`` evaluations. One more evaluation then checks the
    answer: at k = 0 it measures the unquantized plan, otherwise it probes the
    nearest step below the answer that bisection only inferred. A probe that
    fails the threshold marks the profile as non-monotone.
    """
    f = _Counted(perf)
    lo, hi = 0, L + 1  # predicate known true at lo (by convention), false at hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if f(mid) >= tau:
            lo = mid
        else:
            hi = mid
    non_monotone = False
    if lo == 0:
        f(0)
    else:
        probe = next((k for k in range(lo - 1, 0, -1) if k not in f.scores), None)
        if probe is not None and f(probe) < tau:
            non_monotone = True
    return SelectionResult(lo, f.scores, len(f.order), non_monotone=non_monotone, order=f.order)


def max_binary_evaluations(L: int) -> int:
    return math.ceil(math.log2(L + 1)) + 1


def linear_scan(scores, tau: float) -> int:
    """Reference answer over a full profile ``scores[k]`` for k = 0..L."""
    k_star = 0
    for k in range(1, len(scores)):
        if scores[k] >= tau:
            k_star = k
        else:
            break
    return k_star


# ------------------------------------------------------------------ stack-facing selection


def _profile_order(profile) -> list:
    if isinstance(profile, EntropyProfile):
        return list(profile.pi)
    return list(profile)


def stack_performance(stack, pi, calib_inputs, eval_split, config: QuantConfig | None = None,
                      metric: str = "token_accuracy"):
    """``perf(k)`` for the plan with step k, quantizing incrementally."""
    from .evalharness import evaluate
    from .quant.stack import PlanQuantizer

    if eval_split is None or len(eval_split) == 0:
        raise EmptyEvalSplitError("eval split is empty")
    config = config or QuantConfig()
    quantizer = PlanQuantizer(stack, calib_inputs, config)

    def perf(k: int) -> float:
        tags = plan_tags(pi, k, config.low_tag, config.high_tag)
        return evaluate(quantizer(tags), eval_split, metric).score

    return perf


def greedy_select(stack, profile, calib_inputs, eval_split, tau: float, config: QuantConfig | None = None,
                  metric: str = "token_accuracy") -> SelectionResult:
    pi = _profile_order(profile)
    perf = stack_performance(stack, pi, calib_inputs, eval_split, config, metric)
    res = greedy_search(perf, len(pi), tau)
    res.plan = plan_for(pi, res.k, config, mode="threshold", tau=tau, metric=metric)
    return res


def binary_search_select(stack, profile, calib_inputs, eval_split, tau: float, config: QuantConfig | None = None,
                         metric: str = "token_accuracy") -> SelectionResult:
    pi = _profile_order(profile)
    perf = stack_performance(stack, pi, calib_inputs, eval_split, config, metric)
    res = binary_search(perf, len(pi), tau)
    res.plan = plan_for(pi, res.k, config, mode="threshold", tau=tau, metric=metric)
    return res


def plan_bytes(pi, k: int, params, low_bits: float, high_bits: float, non_backbone: float = 0.0) -> float:
    params = np.asarray(params, dtype=np.float64)
    low = np.zeros(len(pi), dtype=bool)
    low[np.asarray(list(pi)[:k], dtype=np.int64) - 1] = True
    bits = np.where(low, low_bits, high_bits)
    return float(non_backbone + np.sum(params * bits) / 8.0)


def budget_select(profile, params, budget: float, low_bits: float = 1.08, high_bits: float = 4.0,
                  non_backbone: float = 0.0, config: QuantConfig | None = None) -> QuantPlan:
    """Smallest step whose total model bytes fit in ``budget``."""
    if budget <= 0:
        raise ValueError("budget must be positive")
    pi = _profile_order(profile)
    if len(params) != len(pi):
        raise ValueError("need one parameter count per layer")
    for k in range(len(pi) + 1):
        if plan_bytes(pi, k, params, low_bits, high_bits, non_backbone) <= budget:
            config = config or QuantConfig()
            return QuantPlan(pi, k, config.low_tag, config.high_tag, low_bits, high_bits,
                             mode="budget", budget=budget)
    need = plan_bytes(pi, len(pi), params, low_bits, high_bits, non_backbone)
    raise BudgetInfeasibleError(f"budget infeasible: even the all-ultra-low plan needs {need:.1f} bytes")

