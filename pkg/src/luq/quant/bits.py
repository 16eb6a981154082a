"""Bit-width accounting for plans and quantized stacks."""

from __future__ import annotations

import numpy as np

from .config import QuantConfig
from .tensor import QuantizedTensor

FP_BITS = 32.0


def avg_bitwidth(layer_bits, params=None) -> float:
    """Mean bits per weight over backbone layers.

    Unweighted by default, which is exact when every layer has the same
    parameter count. Pass per-layer ``params`` for the weighted mean.
    """
    bits = np.asarray(layer_bits, dtype=np.float64)
    if bits.size == 0:
        raise ValueError("need at least one layer")
    if params is None:
        return float(bits.mean())
    w = np.asarray(params, dtype=np.float64)
    if w.shape != bits.shape or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("params must be non-negative, one per layer, not all zero")
    return float((bits * w).sum() / w.sum())


def tag_bits(tag: str, config: QuantConfig | None = None) -> float:
    config = config or QuantConfig()
    if tag == "fp32":
        return FP_BITS
    if tag == "bin":
        return float(config.low_bits)
    return float(config.high_bits)


def nominal_layer_bits(tags, config: QuantConfig | None = None) -> list:
    return [tag_bits(t, config) for t in tags]


def realized_layer_bits(stack) -> list:
    """Stored bits per weight of each layer, counting scales and masks."""
    out = []
    for layer in stack.layers:
        bits = 0.0
        numel = 0
        for w in layer.values():
            if isinstance(w, QuantizedTensor):
                bits += 8.0 * w.payload_bytes
                numel += w.numel
            else:
                bits += FP_BITS * w.size
                numel += w.size
        out.append(bits / numel)
    return out
