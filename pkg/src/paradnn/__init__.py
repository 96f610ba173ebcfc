"""Analytical benchmarking of parameterized DNN training workloads.

Generate FC/CNN/RNN model sweeps, lower them to per-op training costs,
estimate step time on roofline platform models, and analyze the results.
"""

from .dtypes import BFLOAT16, FLOAT16, FLOAT32, DType, get_dtype
from .graph import OpCost, OpGraph, OpNode, footprint, lower, op_cost
from .platform import PlatformSpec, builtin_platforms, fits, load_platforms, max_batch
from .perf import (PerfEstimate, ScalingReport, amdahl_fraction, attainable_flops, classify,
                   core_scaling, estimate, gen_speedup, infeed_analysis)
from .workload import (CnnSpec, FcSpec, ModelSpec, RnnSpec, SweepGrid, builtin_grids, expand_grid,
                       validate_spec)

__version__ = "0.1.0"
