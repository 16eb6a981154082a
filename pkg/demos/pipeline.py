"""End to end on a planted-complexity stack: calibrate, profile, plan, quantize, score.

    python3 demos/pipeline.py [seed]
"""

import sys

import numpy as np

from luq.calib import build_mixed_calibration, split_holdout
from luq.entropy import layer_entropy_profile, rank_stability_curve
from luq.evalharness import evaluate, tradeoff_curve
from luq.net import capture_activations
from luq.quant import avg_bitwidth, realized_layer_bits
from luq.quant.stack import quantize_stack
from luq.select import greedy_select
from luq.synth import multimodal_pool, synth_stack, text_pool


def main(seed=0):
    stack = synth_stack(8, 32, [2, 2, 2, 2, 32, 32, 32, 32], seed)
    pool = build_mixed_calibration(text_pool(stack, 256, 32, seed), multimodal_pool(stack, 256, 32, seed + 100),
                                   128, 32, 0.5, seed, 32)
    calib, held = split_holdout(pool, 0.25, seed)
    acts = capture_activations(stack, calib.inputs(stack))

    curve = rank_stability_curve(acts, range(10, 101, 10), seed=0)
    print("stability distances", np.round(curve.distances, 3), "-> K =", curve.selected_K)
    profile = layer_entropy_profile(acts, curve.selected_K, seed=0)
    print("entropies", np.round(profile.H, 3))
    print("order    ", profile.pi)

    fp = evaluate(stack, held).score
    four = evaluate(quantize_stack(stack, ["gptq4"] * 8, calib.inputs(stack)), held).score
    tau = four - 0.1  # allow a 0.1 accuracy drop below the all-4-bit model
    res = greedy_select(stack, profile, calib.inputs(stack), held, tau=tau)
    print(f"fp32 accuracy {fp:.3f}, all-4-bit {four:.3f}; tau {tau:.3f} -> k* = {res.k} after {res.evaluations} evaluations")

    q = quantize_stack(stack, res.plan.tags, calib.inputs(stack))
    print(f"plan {res.plan.tags}")
    print(f"nominal {res.plan.avg_bits_nominal:.3f} bits, realized {avg_bitwidth(realized_layer_bits(q)):.3f} bits,"
          f" accuracy {evaluate(q, held).score:.3f}")

    print("k  avg_bits  accuracy")
    for row in tradeoff_curve(stack, profile, calib, held, range(9)):
        print(f"{row.k}  {row.avg_bits:.3f}     {row.score:.3f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
