"""Scoring metrics and the ablation drivers built on them.

Every metric is higher-is-better. A report's score is the mean of its
per-sequence scores; a sequence is scored on the positions whose next token
is text (image positions are context only).
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .calib import IGNORE, CalibrationSet, build_mixed_calibration
from .net import forward
from .quant.bits import avg_bitwidth, realized_layer_bits
from .quant.config import QuantConfig
from .quant.stack import PlanQuantizer, quantize_stack
from .select import QuantPlan, plan_for, plan_tags

METRICS = ("token_accuracy", "neg_perplexity")
CSV_HEADER = ("k", "avg_bits", "score", "metric", "seed")


class EmptySplitError(ValueError):
    pass


@dataclass
class EvalReport:
    metric: str
    score: float
    per_sequence: np.ndarray
    split: dict = field(default_factory=dict)
    plan: dict | None = None
    wall_time: float = 0.0

    def to_json(self) -> dict:
        return {"metric": self.metric, "score": float(self.score),
                "per_sequence": [float(s) for s in self.per_sequence],
                "split": self.split, "plan": self.plan, "wall_time": float(self.wall_time)}


# ------------------------------------------------------------------ scoring


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def token_hits(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """1 where the top logit is the target, 0 where it is not, NaN where unscored."""
    pred = np.argmax(logits, axis=-1)
    hits = (pred == targets).astype(np.float64)
    return np.where(targets == IGNORE, np.nan, hits)


def token_nll(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-position negative log-likelihood of the target, NaN where unscored."""
    lp = log_softmax(logits)
    safe = np.where(targets == IGNORE, 0, targets)
    nll = -np.take_along_axis(lp, safe[..., None], axis=-1)[..., 0]
    return np.where(targets == IGNORE, np.nan, nll)


def _split_arrays(stack, split):
    if isinstance(split, CalibrationSet):
        if len(split) == 0:
            raise EmptySplitError("empty split")
        return split.inputs(stack), split.targets()
    x, targets = split
    if len(x) == 0:
        raise EmptySplitError("empty split")
    return np.asarray(x, dtype=np.float32), np.asarray(targets, dtype=np.int64)


def position_values(stack, split, kind: str, batch_size: int = 64) -> np.ndarray:
    """Per-position hits or NLL [n, N] over a split; NaN where unscored."""
    x, targets = _split_arrays(stack, split)
    if not np.any(targets != IGNORE):
        raise EmptySplitError("empty split: no scored positions")
    fn = token_hits if kind == "hits" else token_nll
    out = []
    for lo in range(0, len(x), batch_size):
        _, logits = forward(stack, x[lo:lo + batch_size])
        out.append(fn(logits, targets[lo:lo + batch_size]))
    return np.concatenate(out, axis=0)


def _per_sequence_mean(values: np.ndarray) -> np.ndarray:
    scored = ~np.isnan(values)
    keep = scored.any(axis=1)
    sums = np.where(scored, values, 0.0).sum(axis=1)
    return sums[keep] / scored.sum(axis=1)[keep]


def sequence_scores(stack, split, metric: str = "token_accuracy") -> np.ndarray:
    """Score of each sequence that has at least one scored position."""
    if metric == "token_accuracy":
        return _per_sequence_mean(position_values(stack, split, "hits"))
    if metric == "neg_perplexity":
        nll = _per_sequence_mean(position_values(stack, split, "nll"))
        if not np.all(np.isfinite(nll)):
            raise FloatingPointError("non-finite negative log-likelihood")
        return -np.exp(nll)
    raise ValueError(f"unknown metric {metric!r}")


def evaluate(stack, split, metric: str = "token_accuracy", plan: QuantPlan | None = None) -> EvalReport:
    t0 = time.perf_counter()
    per = sequence_scores(stack, split, metric)
    desc = split.describe() if isinstance(split, CalibrationSet) else {"n_seqs": int(len(split[0]))}
    return EvalReport(metric, float(np.mean(per)), per, desc,
                      plan.to_json() if plan is not None else None, time.perf_counter() - t0)


def token_accuracy(stack, split) -> float:
    """Mean over sequences of top-1 next-token accuracy, in [0, 1]."""
    return evaluate(stack, split, "token_accuracy").score


def perplexity(stack, split) -> float:
    """``exp`` of the mean NLL over every scored token of the split."""
    nll = position_values(stack, split, "nll")
    mean = float(np.nanmean(nll))
    if not np.isfinite(mean):
        raise FloatingPointError("non-finite negative log-likelihood")
    return float(np.exp(mean))


# ------------------------------------------------------------------ ablation drivers


def auc(ks, scores) -> float:
    """Trapezoidal area under a score-vs-k curve, normalised by the k range."""
    ks = np.asarray(ks, dtype=np.float64)
    y = np.asarray(scores, dtype=np.float64)
    if ks.size == 1:
        return float(y[0])
    area = float(np.sum((y[1:] + y[:-1]) * np.diff(ks)) / 2.0)
    return area / float(ks[-1] - ks[0])


def _inputs(stack, calib) -> np.ndarray:
    return calib.inputs(stack) if isinstance(calib, CalibrationSet) else np.asarray(calib, dtype=np.float32)


def score_curve(stack, pi, calib, eval_split, ks, config: QuantConfig | None = None,
                metric: str = "token_accuracy") -> list:
    config = config or QuantConfig()
    quantizer = PlanQuantizer(stack, _inputs(stack, calib), config)
    return [evaluate(quantizer(plan_tags(pi, k, config.low_tag, config.high_tag)), eval_split, metric).score
            for k in ks]


@dataclass
class OrderingComparison:
    ks: list
    low_first: list
    high_first: list
    auc_low: float
    auc_high: float
    metric: str = "token_accuracy"

    @property
    def gap(self) -> list:
        return [a - b for a, b in zip(self.low_first, self.high_first)]

    @property
    def auc_diff(self) -> float:
        return self.auc_low - self.auc_high

    def to_json(self) -> dict:
        return {"ks": list(self.ks), "low_first": list(self.low_first), "high_first": list(self.high_first),
                "gap": self.gap, "auc_low": self.auc_low, "auc_high": self.auc_high,
                "auc_diff": self.auc_diff, "metric": self.metric}


def compare_orderings(stack, profile, calib, eval_split, steps: int | None = None,
                      config: QuantConfig | None = None, metric: str = "token_accuracy") -> OrderingComparison:
    """Score-vs-k curves for quantizing low-entropy layers first and high-entropy first."""
    pi = list(profile.pi) if hasattr(profile, "pi") else list(profile)
    steps = len(pi) if steps is None else steps
    if not 0 <= steps <= len(pi):
        raise ValueError(f"steps must lie in [0, {len(pi)}]")
    ks = list(range(steps + 1))
    low = score_curve(stack, pi, calib, eval_split, ks, config, metric)
    high = score_curve(stack, pi[::-1], calib, eval_split, ks, config, metric)
    return OrderingComparison(ks, low, high, auc(ks, low), auc(ks, high), metric)


def compare_calibration(stack, text_pool, mm_pool, alphas, plan: QuantPlan, eval_split, n_seqs: int,
                        seq_len: int, seed: int = 0, config: QuantConfig | None = None,
                        metric: str = "token_accuracy") -> dict:
    """Score of the same plan under calibration sets that differ only in alpha."""
    config = config or QuantConfig()
    out = {}
    for alpha in alphas:
        cs = build_mixed_calibration(text_pool, mm_pool, n_seqs, seq_len, alpha, seed, stack.config.hidden_dim)
        q = quantize_stack(stack, plan.tags, cs.inputs(stack), config)
        out[float(alpha)] = evaluate(q, eval_split, metric).score
    return out


@dataclass
class CurveRow:
    k: int
    avg_bits: float
    score: float
    metric: str
    seed: int
    realized_bits: float = 0.0


def tradeoff_curve(stack, profile, calib, eval_split, ks, config: QuantConfig | None = None,
                   metric: str = "token_accuracy", seed: int = 0) -> list:
    """One row per k: nominal average bits and the score of that plan."""
    config = config or QuantConfig()
    pi = list(profile.pi) if hasattr(profile, "pi") else list(profile)
    L = len(pi)
    if any(not 0 <= k <= L for k in ks):
        raise ValueError(f"every k must lie in [0, {L}]")
    quantizer = PlanQuantizer(stack, _inputs(stack, calib), config)
    rows = []
    for k in ks:
        plan = plan_for(pi, k, config)
        q = quantizer(plan.tags)
        score = evaluate(q, eval_split, metric).score
        rows.append(CurveRow(int(k), plan.avg_bits_nominal, score, metric, int(seed),
                             avg_bitwidth(realized_layer_bits(q))))
    return rows


def curve_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.k, repr(float(r.avg_bits)), repr(float(r.score)), r.metric, r.seed])
    return buf.getvalue()


def curve_json(rows) -> str:
    obj = [{"k": r.k, "avg_bits": r.avg_bits, "score": r.score, "metric": r.metric, "seed": r.seed,
            "realized_bits": r.realized_bits} for r in rows]
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"
