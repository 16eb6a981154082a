from .billm import billm_binarize, binarize_group, residual_binarize
from .config import QuantConfig
from .gptq import SingularHessianError, gptq_quantize
from .hessian import HessianAccumulator, accumulate_hessian, proxy_loss
from .rtn import rtn_quantize
from .tensor import Part, QuantizedTensor, dequantize, repack
from .bits import avg_bitwidth, nominal_layer_bits, realized_layer_bits, tag_bits
