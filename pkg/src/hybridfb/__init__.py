"""Hybrid filter banks: full-precision and strassenified ternary convolutions."""
from .arch import ArchSpec, LayerDesc, QuantMode, QuantPlan, build_arch, build_mobilenets_v1, build_tinynet
from .cost import CostReport, EnergyModel, AreaModel, count_network, evaluate, model_size
from .network import HybridBankLayer, Network, hybrid_forward, instantiate
from .quant import QuantizerConfig, TernaryMatrix, ste_ternary, ternary_quantize
from .spn import (LifecycleError, LifecycleState, SpnConvLayer, SpnDenseLayer, make_canonical_strassen,
                  search_shared_value_spn, shared_value_template, spn_conv2d, spn_matmul, verify_spn_exact)
from .tensor import Tensor, no_grad

__version__ = "0.1.0"
