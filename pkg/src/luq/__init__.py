"""Entropy-ordered, layer-wise ultra-low-bit quantization for small transformer stacks."""

__version__ = "0.1.0"

from .calib import CalibrationSet, build_mixed_calibration, split_holdout  # noqa: E402
from .container import read_container, write_container  # noqa: E402
from .entropy import EntropyProfile, layer_entropy_profile, rank_stability_curve  # noqa: E402
from .net import LayerStack, StackConfig, capture_activations, forward  # noqa: E402
from .quant import QuantConfig, QuantizedTensor, avg_bitwidth  # noqa: E402
from .quant.stack import quantize_stack  # noqa: E402
from .select import QuantPlan, binary_search_select, budget_select, greedy_select  # noqa: E402
from .synth import synth_stack  # noqa: E402
