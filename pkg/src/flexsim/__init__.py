"""Performance modeling toolkit for stage-customized hybrid LLM accelerators.

The package bundles four layers that share one set of configuration types:

* exact analytical latency/bandwidth models for prefill and decode stages,
* an exhaustive design-space optimizer over parallelism knobs,
* desk-scale numerical kernels (quantization, transforms, a toy decoder) used
  to validate the modeled dataflows functionally,
* a small architecture-graph IR whose estimator reproduces the closed-form
  stage models, plus a long-context memory-augmented pipeline.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .config import (
    ArchConfig,
    ConfigError,
    ConfigParseError,
    ConfigValidationError,
    DecodeConfig,
    DeviceSpec,
    HmtConfig,
    ModelSpec,
    PrefillConfig,
    QuantSpec,
    ResourceCostModel,
    default_resource_cost_model,
    load_arch_config,
    load_device_spec,
    load_model_spec,
    load_quant_spec,
    load_resource_cost_model,
    validate_stage_config,
)
from .perf import (
    BandwidthEstimate,
    LatencyEstimate,
    LongContextComparison,
    WorkloadShape,
    decode_bandwidth,
    decode_linear_latency,
    decode_stage_latency,
    linear_bandwidth,
    long_context_prefill_model,
    memory_attention_cycles,
    prefill_bandwidth,
    prefill_linear_latency,
    prefill_stage_latency,
    tokens_per_joule,
)
from .archgraph import (
    ArchGraph,
    GraphError,
    build_decode_graph,
    build_prefill_graph,
    estimate_graph_latency,
    load_graph,
    validate_graph,
)
from .dse import (
    DseResult,
    InfeasibleSearchError,
    SearchSpace,
    load_search_space,
    optimize_decode,
    optimize_prefill,
)
from .hmt import run_pipeline as run_hmt_pipeline
from .kernels import ToyModel
from .quant import (
    QuantizedTensor,
    compute_quant_params,
    dequantize,
    fht,
    fused_int_matmul,
    quantize_tensor,
)
from .tensorio import load_tensors, save_tensors

__all__ = [
    "__version__",
    "ArchConfig",
    "ConfigError",
    "ConfigParseError",
    "ConfigValidationError",
    "DecodeConfig",
    "DeviceSpec",
    "HmtConfig",
    "ModelSpec",
    "PrefillConfig",
    "QuantSpec",
    "ResourceCostModel",
    "default_resource_cost_model",
    "load_arch_config",
    "load_device_spec",
    "load_model_spec",
    "load_quant_spec",
    "load_resource_cost_model",
    "validate_stage_config",
    "BandwidthEstimate",
    "LatencyEstimate",
    "LongContextComparison",
    "WorkloadShape",
    "decode_bandwidth",
    "decode_linear_latency",
    "decode_stage_latency",
    "linear_bandwidth",
    "long_context_prefill_model",
    "memory_attention_cycles",
    "prefill_bandwidth",
    "prefill_linear_latency",
    "prefill_stage_latency",
    "tokens_per_joule",
    "ArchGraph",
    "GraphError",
    "build_decode_graph",
    "build_prefill_graph",
    "estimate_graph_latency",
    "load_graph",
    "validate_graph",
    "DseResult",
    "InfeasibleSearchError",
    "SearchSpace",
    "load_search_space",
    "optimize_decode",
    "optimize_prefill",
    "run_hmt_pipeline",
    "ToyModel",
    "QuantizedTensor",
    "compute_quant_params",
    "dequantize",
    "fht",
    "fused_int_matmul",
    "quantize_tensor",
    "load_tensors",
    "save_tensors",
]
