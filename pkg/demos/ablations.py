"""Ordering and calibration-mix ablations over a few seeds.

    python3 demos/ablations.py [n_seeds]
"""

import sys

import numpy as np

from luq.calib import build_mixed_calibration, split_holdout
from luq.entropy import layer_entropy_profile
from luq.evalharness import compare_calibration, compare_orderings
from luq.net import capture_activations
from luq.select import plan_for
from luq.synth import multimodal_pool, synth_stack, text_pool

PROFILE = [2, 2, 2, 2, 32, 32, 32, 32]


def main(n_seeds=3):
    for seed in range(n_seeds):
        stack = synth_stack(8, 32, PROFILE, seed)
        text = text_pool(stack, 256, 32, seed)
        emb, ids = multimodal_pool(stack, 256, 32, seed + 100)
        cs = build_mixed_calibration(text, (emb, ids), 128, 32, 0.5, seed, 32)
        calib, held = split_holdout(cs, 0.25, seed)
        profile = layer_entropy_profile(capture_activations(stack, calib.inputs(stack)), 100, 0)

        cmp = compare_orderings(stack, profile, calib, held)
        print(f"seed {seed}  order {profile.pi}")
        print("  low-entropy first ", np.round(cmp.low_first, 3), f"AUC {cmp.auc_low:.3f}")
        print("  high-entropy first", np.round(cmp.high_first, 3), f"AUC {cmp.auc_high:.3f}")

        for k in (4, 0):
            scores = compare_calibration(stack, text, (emb, ids), [0.0, 0.25, 0.5, 1.0], plan_for(profile.pi, k),
                                         held, 96, 32, seed)
            print(f"  k={k} accuracy by alpha", {a: round(s, 3) for a, s in scores.items()})


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 3)
