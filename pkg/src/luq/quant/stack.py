"""Quantize a whole layer stack under a two-tier plan."""

from __future__ import annotations

import numpy as np

from ..net import LINEARS, LayerStack, block_inputs, prepare_inputs
from .billm import billm_binarize
from .config import QuantConfig
from .gptq import gptq_quantize
from .hessian import HessianAccumulator
from .rtn import rtn_quantize


def quantize_linear(W, H, method: str, config: QuantConfig):
    if method == "bin":
        return billm_binarize(
            W, H, config.block_size, config.group_size, config.damp,
            config.salient_fraction, config.low_bits, config.split_grid,
        )
    if method == "gptq":
        return gptq_quantize(W, H, config.high_bits, config.block_size, config.group_size, config.damp)
    if method == "rtn":
        return rtn_quantize(W, config.high_bits, config.group_size)
    raise ValueError(f"unknown method {method!r}")


def layer_hessians(stack: LayerStack, i: int, h: np.ndarray, batch_size: int = 64):
    """Hessians of every linear in block ``i`` for block inputs ``h``."""
    shapes = stack.config.weight_shapes()
    accs = {n: HessianAccumulator(shapes[n][1]) for n in LINEARS}
    W = {n: stack.weight(i, n) for n in LINEARS}
    for lo in range(0, h.shape[0], batch_size):
        _, seen = block_inputs(stack, i, h[lo:lo + batch_size], W)
        for n in LINEARS:
            accs[n].add(seen[n])
    return accs


def quantize_layer(stack: LayerStack, i: int, h: np.ndarray, tag: str, config: QuantConfig) -> dict:
    accs = layer_hessians(stack, i, h)
    method = "bin" if tag == "bin" else tag.rstrip("0123456789")
    return {n: quantize_linear(stack.weight(i, n), accs[n], method, config) for n in LINEARS}


def quantize_stack(stack: LayerStack, tags, calib_inputs, config: QuantConfig | None = None,
                   sequential: bool = True, resume=None, trace: list | None = None):
    """Quantize every layer to its tag, in network order.

    With ``sequential`` the calibration inputs of layer i come from the
    already-quantized layers before it; otherwise from the original model.
    ``stack`` must hold the original weights. ``resume=(partial, start, h)``
    continues from a stack whose first ``start`` layers already carry the
    right payloads, with ``h`` the residual stream entering layer ``start``.
    If ``trace`` is a list, the stream entering each processed layer is
    appended to it.
    """
    config = config or QuantConfig()
    tags = list(tags)
    if len(tags) != stack.num_layers:
        raise ValueError("plan must tag every layer")
    if resume is not None:
        if not sequential:
            raise ValueError("resuming needs sequential propagation")
        out, start, h = resume
    else:
        out, start, h = stack, 0, prepare_inputs(stack, calib_inputs)
    h_ref = h
    for i in range(start, stack.num_layers):
        if trace is not None:
            trace.append(h)
        src = h if sequential else h_ref
        if tags[i] == "fp32":
            weights = {n: stack.weight(i, n) for n in LINEARS}
        else:
            weights = quantize_layer(stack, i, src, tags[i], config)
        out = out.with_layer(i, weights, tags[i])
        h = _advance(out, i, h)
        if not sequential:
            h_ref = _advance(stack, i, h_ref)
    return out


def _advance(stack: LayerStack, i: int, h: np.ndarray, batch_size: int = 64) -> np.ndarray:
    chunks = []
    for lo in range(0, h.shape[0], batch_size):
        out, _ = block_inputs(stack, i, h[lo:lo + batch_size])
        chunks.append(out)
    return np.concatenate(chunks, axis=0)


class PlanQuantizer:
    """Quantizes a sequence of plans, reusing the longest unchanged layer prefix.

    Consecutive plans in a selection loop differ in one or a few layers, so
    everything before the first changed layer (in network order) is kept,
    together with the calibration stream entering it. Results are identical
    to quantizing each plan from scratch.
    """

    def __init__(self, stack: LayerStack, calib_inputs, config: QuantConfig | None = None):
        self.stack = stack
        self.calib_inputs = calib_inputs
        self.config = config or QuantConfig()
        self._tags = None
        self._out = None
        self._trace = None
        self.layers_quantized = 0

    def __call__(self, tags) -> LayerStack:
        tags = list(tags)
        if self._tags is not None:
            j = next((i for i, (a, b) in enumerate(zip(self._tags, tags)) if a != b), len(tags))
        else:
            j = 0
        if j == len(tags):
            return self._out
        if j == 0:
            trace = []
            out = quantize_stack(self.stack, tags, self.calib_inputs, self.config, trace=trace)
        else:
            trace = self._trace[:j]
            out = quantize_stack(self.stack, tags, None, self.config,
                                 resume=(self._out, j, self._trace[j]), trace=trace)
        self.layers_quantized += len(tags) - j
        self._tags, self._out, self._trace = tags, out, trace
        return out
