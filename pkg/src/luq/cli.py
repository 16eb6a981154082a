"""``luq`` command line: the full profiling / planning / quantization pipeline.

Exit codes: 0 success, 2 usage or validation error, 1 runtime failure.
Every run writes ``run.json`` with the fully resolved arguments; feeding it
back with ``luq --config run.json`` repeats the run exactly. ``LUQ_SEED``
overrides ``--seed`` when set.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calib import build_mixed_calibration, load_calib, save_calib, split_holdout
from .container import ContainerError, load_stack, save_stack
from .entropy import DEFAULT_K, EntropyProfile, GridTooSmallError, layer_entropy_profile, rank_stability_curve
from .evalharness import METRICS, compare_calibration, compare_orderings, curve_csv, curve_json, evaluate, tradeoff_curve
from .net import capture_activations
from .quant.bits import avg_bitwidth, realized_layer_bits
from .quant.config import QuantConfig
from .quant.stack import quantize_stack
from .select import QuantPlan, binary_search_select, budget_select, greedy_select, plan_for
from .synth import multimodal_pool, synth_stack, text_pool

log = logging.getLogger("luq")


class UsageError(ValueError):
    pass


# ------------------------------------------------------------------ helpers


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _need_file(path):
    if path is None:
        raise UsageError("a required input path is missing")
    if not Path(path).is_file():
        raise UsageError(f"no such file: {path}")
    return path


def _parse_grid(text: str) -> list:
    """``a:b:step`` (inclusive) or a comma list."""
    if ":" in text:
        parts = [int(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise UsageError(f"bad range {text!r}; expected start:stop:step")
        return list(range(parts[0], parts[1] + 1, parts[2]))
    return [int(p) for p in text.split(",") if p.strip()]


def _floats(text: str) -> list:
    return [float(p) for p in text.split(",") if p.strip()]


def _quant_config(args) -> QuantConfig:
    return QuantConfig(high_method=args.high_method, block_size=args.block_size,
                       group_size=args.group_size, damp=args.damp)


def _load_inputs(args):
    stack = load_stack(_need_file(args.model))
    calib = load_calib(_need_file(args.calib))
    return stack, calib


def _load_profile(path) -> EntropyProfile:
    return EntropyProfile.from_json(json.loads(Path(_need_file(path)).read_text()))


# ------------------------------------------------------------------ commands


def cmd_synth(args):
    profile = [int(r) for r in args.profile.split(",")]
    stack = synth_stack(len(profile), args.hidden_dim, profile, args.seed, vocab_size=args.vocab_size)
    save_stack(args.out, stack)
    if args.pool_out:
        ids = text_pool(stack, args.pool_size, args.pool_seq_len, args.seed)
        embeds, mm_ids = multimodal_pool(stack, args.pool_size, args.pool_seq_len, args.seed + 1)
        pool = build_mixed_calibration(ids, (embeds, mm_ids), 2 * args.pool_size, args.pool_seq_len, 0.5,
                                       args.seed, args.hidden_dim)
        save_calib(args.pool_out, pool)
    return {"model": args.out, "pool": args.pool_out}


def cmd_calib(args):
    pool = load_calib(_need_file(args.pool))
    text = pool.text_ids
    mm = (pool.mm_embeds, pool.mm_ids) if len(pool.mm_ids) else None
    cs = build_mixed_calibration(text, mm, args.n_seqs, args.seq_len, args.alpha, args.seed, pool.hidden_dim)
    if args.holdout > 0:
        cs, held = split_holdout(cs, args.holdout, args.seed)
        if not args.eval_out:
            raise UsageError("--holdout needs --eval-out")
        save_calib(args.eval_out, held)
    save_calib(args.out, cs)
    return {"calib": args.out, "eval": args.eval_out, **cs.counts}


def _resolve_k(args) -> int:
    if args.k is not None:
        return args.k
    if args.stability:
        return int(json.loads(Path(_need_file(args.stability)).read_text())["selected_K"])
    return DEFAULT_K


def cmd_entropy(args):
    stack, calib = _load_inputs(args)
    K = _resolve_k(args)
    acts = capture_activations(stack, calib.inputs(stack))
    profile = layer_entropy_profile(acts, K, args.seed)
    _write(args.out, _dump(profile.to_json()))
    return {"K": K, "pi": profile.pi}


def cmd_stability(args):
    stack, calib = _load_inputs(args)
    grid = _parse_grid(args.k_grid)
    if len(grid) < 3:
        raise UsageError("grid too small: need at least 3 K values")
    acts = capture_activations(stack, calib.inputs(stack))
    curve = rank_stability_curve(acts, grid, args.seed)
    _write(args.out, _dump(curve.to_json()))
    return {"selected_K": curve.selected_K, "knee_found": curve.knee_found}


def cmd_plan(args):
    profile = _load_profile(args.entropy)
    config = _quant_config(args)
    if args.mode == "fixed-k":
        if args.k_steps is None:
            raise UsageError("--mode fixed-k needs --k-steps")
        plan = plan_for(profile.pi, args.k_steps, config, mode="fixed-k", metric=args.metric)
    elif args.mode == "budget":
        if args.budget_bytes is None:
            raise UsageError("--mode budget needs --budget-bytes")
        stack = load_stack(_need_file(args.model))
        params = [stack.config.layer_params] * stack.num_layers
        non_backbone = 4.0 * (stack.embed.size + stack.head.size)
        plan = budget_select(profile, params, args.budget_bytes, config.low_bits, float(config.high_bits),
                             non_backbone, config)
    else:
        if args.tau is None:
            raise UsageError("--mode threshold needs --tau")
        stack, calib = _load_inputs(args)
        held = load_calib(_need_file(args.eval))
        select = binary_search_select if args.search == "binary" else greedy_select
        res = select(stack, profile, calib.inputs(stack), held, args.tau, config, args.metric)
        if res.non_monotone:
            log.warning("performance is not monotone in k; greedy search is the safer choice")
        log.info("selected k=%d after %d evaluations", res.k, res.evaluations)
        plan = res.plan
    _write(args.out, plan.dumps())
    return {"k": plan.k, "avg_bits_nominal": plan.avg_bits_nominal}


def cmd_quantize(args):
    stack, calib = _load_inputs(args)
    plan = QuantPlan.from_json(json.loads(Path(_need_file(args.plan)).read_text()))
    if plan.num_layers != stack.num_layers:
        raise UsageError("plan and model disagree on the number of layers")
    q = quantize_stack(stack, plan.tags, calib.inputs(stack), _quant_config(args))
    save_stack(args.out, q, {"plan": plan.to_json()})
    bits = avg_bitwidth(realized_layer_bits(q))
    return {"quantized": args.out, "avg_bits_realized": bits}


def cmd_eval(args):
    stack = load_stack(_need_file(args.model))
    held = load_calib(_need_file(args.eval))
    report = evaluate(stack, held, args.metric)
    out = report.to_json()
    out.pop("wall_time")
    k = 0
    if args.plan:
        plan = QuantPlan.from_json(json.loads(Path(_need_file(args.plan)).read_text()))
        out["plan"] = plan.to_json()
        k = plan.k
    out["avg_bits_realized"] = avg_bitwidth(realized_layer_bits(stack))
    _write(args.out, _dump(out))
    row = f"k,avg_bits,score,metric,seed\n{k},{out['avg_bits_realized']!r},{report.score!r},{args.metric},{args.seed}\n"
    _write(Path(args.out).with_suffix(".csv"), row)
    log.info("%s = %.4f (%.3fs)", args.metric, report.score, report.wall_time)
    return {"score": report.score}


def cmd_curve(args):
    stack, calib = _load_inputs(args)
    held = load_calib(_need_file(args.eval))
    profile = _load_profile(args.entropy)
    ks = _parse_grid(args.ks) if args.ks else list(range(stack.num_layers + 1))
    rows = tradeoff_curve(stack, profile, calib, held, ks, _quant_config(args), args.metric, args.seed)
    _write(args.out, curve_csv(rows))
    _write(Path(args.out).with_suffix(".json"), curve_json(rows))
    return {"rows": len(rows)}


def cmd_ablate_order(args):
    stack, calib = _load_inputs(args)
    held = load_calib(_need_file(args.eval))
    profile = _load_profile(args.entropy)
    cmp = compare_orderings(stack, profile, calib, held, args.steps, _quant_config(args), args.metric)
    _write(args.out, _dump(cmp.to_json()))
    return {"auc_diff": cmp.auc_diff}


def cmd_ablate_calib(args):
    stack = load_stack(_need_file(args.model))
    pool = load_calib(_need_file(args.pool))
    held = load_calib(_need_file(args.eval))
    plan = QuantPlan.from_json(json.loads(Path(_need_file(args.plan)).read_text()))
    mm = (pool.mm_embeds, pool.mm_ids) if len(pool.mm_ids) else None
    scores = compare_calibration(stack, pool.text_ids, mm, _floats(args.alphas), plan, held, args.n_seqs,
                                 args.seq_len, args.seed, _quant_config(args), args.metric)
    _write(args.out, _dump({"plan": plan.to_json(), "metric": args.metric,
                            "scores": [{"alpha": a, "score": s} for a, s in scores.items()]}))
    return {"scores": {str(a): s for a, s in scores.items()}}


# ------------------------------------------------------------------ parser


def _common(p, out_default=None):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=out_default, required=out_default is None)
    p.add_argument("--run-json", default=None, help="where to echo the resolved config (default: next to --out)")
    p.add_argument("--threads", type=int, default=1, help="worker count; work runs in one thread, so results never depend on it")


def _quant_flags(p):
    p.add_argument("--high-method", choices=("gptq", "rtn"), default="gptq")
    p.add_argument("--block-size", type=int, default=128)
    p.add_argument("--group-size", type=int, default=128)
    p.add_argument("--damp", type=float, default=0.01)
    p.add_argument("--metric", choices=METRICS, default="token_accuracy")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="luq", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="repeat a run from its run.json")
    parser.add_argument("--version", action="version", version=f"luq {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="write a planted-complexity model (and optionally a data pool)")
    _common(p)
    p.add_argument("--profile", default="2,2,2,2,32,32,32,32")
    p.add_argument("--hidden-dim", type=int, default=32)
    p.add_argument("--vocab-size", type=int, default=64)
    p.add_argument("--pool-out")
    p.add_argument("--pool-size", type=int, default=128)
    p.add_argument("--pool-seq-len", type=int, default=32)

    p = sub.add_parser("calib", help="build a mixed-modal calibration set from a pool")
    _common(p)
    p.add_argument("--pool", required=True)
    p.add_argument("--n-seqs", type=int, default=128)
    p.add_argument("--seq-len", type=int, default=2048)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--holdout", type=float, default=0.0)
    p.add_argument("--eval-out")

    for name in ("entropy", "stability"):
        p = sub.add_parser(name, help=f"{name} of layer activations")
        _common(p)
        p.add_argument("--model", required=True)
        p.add_argument("--calib", required=True)
        if name == "entropy":
            p.add_argument("--k", type=int, default=None)
            p.add_argument("--stability", help="take K from a stability.json")
        else:
            p.add_argument("--k-grid", default="10:200:10")

    p = sub.add_parser("plan", help="choose which layers go ultra-low")
    _common(p)
    p.add_argument("--entropy", required=True)
    p.add_argument("--mode", choices=("threshold", "budget", "fixed-k"), default="fixed-k")
    p.add_argument("--search", choices=("greedy", "binary"), default="greedy")
    p.add_argument("--tau", type=float)
    p.add_argument("--budget-bytes", type=float)
    p.add_argument("--k-steps", type=int)
    p.add_argument("--model")
    p.add_argument("--calib")
    p.add_argument("--eval")
    _quant_flags(p)

    p = sub.add_parser("quantize", help="quantize a model under a plan")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--plan", required=True)
    _quant_flags(p)

    p = sub.add_parser("eval", help="score a model on an eval split")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--eval", required=True)
    p.add_argument("--plan")
    p.add_argument("--metric", choices=METRICS, default="token_accuracy")

    p = sub.add_parser("curve", help="score versus average bit-width")
    _common(p)
    for flag in ("--model", "--calib", "--eval", "--entropy"):
        p.add_argument(flag, required=True)
    p.add_argument("--ks", help="k values, a:b:step or a comma list (default 0..L)")
    _quant_flags(p)

    p = sub.add_parser("ablate-order", help="low-entropy-first against high-entropy-first")
    _common(p)
    for flag in ("--model", "--calib", "--eval", "--entropy"):
        p.add_argument(flag, required=True)
    p.add_argument("--steps", type=int)
    _quant_flags(p)

    p = sub.add_parser("ablate-calib", help="one plan under several calibration mixes")
    _common(p)
    for flag in ("--model", "--pool", "--eval", "--plan"):
        p.add_argument(flag, required=True)
    p.add_argument("--alphas", default="0,0.5")
    p.add_argument("--n-seqs", type=int, default=128)
    p.add_argument("--seq-len", type=int, default=2048)
    _quant_flags(p)
    return parser


COMMANDS = {
    "synth": cmd_synth, "calib": cmd_calib, "entropy": cmd_entropy, "stability": cmd_stability,
    "plan": cmd_plan, "quantize": cmd_quantize, "eval": cmd_eval, "curve": cmd_curve,
    "ablate-order": cmd_ablate_order, "ablate-calib": cmd_ablate_calib,
}
SKIP_ECHO = ("config", "verbose", "run_json")


def resolve(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        saved = json.loads(Path(_need_file(args.config)).read_text())
        replay = [saved["command"]]
        sub_parser = parser._subparsers._group_actions[0].choices[saved["command"]]
        known = {a.dest: a for a in sub_parser._actions}
        for key, value in saved["args"].items():
            if value is None or key not in known:
                continue
            flag = known[key].option_strings[-1]
            replay.append(f"{flag}={value}")
        args = parser.parse_args(replay)
    if args.command is None:
        parser.error("a subcommand is required")
    if args.threads < 1:
        raise UsageError("--threads must be at least 1")
    env_seed = os.environ.get("LUQ_SEED")
    if env_seed is not None:
        try:
            args.seed = int(env_seed)
        except ValueError:
            raise UsageError(f"LUQ_SEED must be an integer, got {env_seed!r}") from None
    return args


def main(argv=None) -> int:
    try:
        args = resolve(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    except (UsageError, ValueError, OSError) as exc:
        print(f"luq: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="luq: %(message)s")
    try:
        summary = COMMANDS[args.command](args)
    except np.linalg.LinAlgError as exc:
        print(f"luq: runtime error: {exc}", file=sys.stderr)
        return 1
    except (UsageError, ContainerError, GridTooSmallError, FileNotFoundError, ValueError) as exc:
        print(f"luq: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # anything else is a runtime failure
        print(f"luq: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    echo = {k: v for k, v in sorted(vars(args).items()) if k not in SKIP_ECHO and k != "command"}
    run_json = args.run_json or str(Path(args.out).parent / "run.json")
    _write(run_json, _dump({"command": args.command, "args": echo, "version": __version__}))
    if summary:
        log.info("%s", json.dumps(summary, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
