"""Roofline step-time estimation and the multi-chip, infeed and generation models."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .dtypes import ACCUMULATOR, DType
from .graph import SCALES_WITH_BATCH, WEIGHT_SYNC, OpGraph, op_cost
from .platform import PlatformSpec, fits

COMPUTE_BOUND = "compute_bound"
MEMORY_BOUND = "memory_bound"


class OutOfMemoryError(ValueError):
    pass


def attainable_flops(ai: float, platform: PlatformSpec) -> float:
    """Roofline ceiling: ``min(peak, ai * bandwidth)``."""
    if ai < 0:
        raise ValueError(f"arithmetic intensity must be >= 0, got {ai}")
    return min(platform.peak_flops, ai * platform.mem_bandwidth)


def classify(ai: float, platform: PlatformSpec) -> str:
    # the inflection point itself counts as compute bound
    return MEMORY_BOUND if ai * platform.mem_bandwidth < platform.peak_flops else COMPUTE_BOUND


@dataclass(frozen=True)
class OpTime:
    name: str
    time: float
    bound: str
    flops: float = 0.0
    arithmetic_intensity: float = 0.0


@dataclass(frozen=True)
class PerfEstimate:
    per_op: tuple[OpTime, ...]
    device_step_time: float
    host_step_time: float
    effective_step_time: float
    examples_per_sec: float
    flops_utilization: float
    infeed_wait_fraction: float
    batch: int = 0
    flops: float = 0.0


@dataclass(frozen=True)
class ScalingReport:
    n_cores: int
    utilization_1: float
    utilization_n: float
    non_parallel_fraction: float


def _check_fits(graph, platform, batch, dtype):
    if not fits(graph, platform, batch, dtype):
        raise OutOfMemoryError(f"batch {batch} does not fit on {platform.name}")


def _per_core(graph: OpGraph, platform: PlatformSpec, batch: float) -> OpGraph:
    return graph.at_batch(batch / platform.cores_per_board)


def estimate(graph: OpGraph, platform: PlatformSpec, batch: int | None = None,
             dtype: str | DType | None = None) -> PerfEstimate:
    """Per-op roofline times summed into one training step.

    The batch is split evenly over the board's cores. Every core holds a full
    weight replica and gets an equal share of peak compute and bandwidth.
    Cross-replica weight sync runs at :attr:`PlatformSpec.sync_bandwidth` and
    only costs time on multi-core boards.
    """
    batch = graph.batch if batch is None else batch
    dt = platform.dtype(dtype)
    _check_fits(graph, platform, batch, dt)
    cores = platform.cores_per_board
    peak = platform.peak_flops / cores
    bandwidth = platform.mem_bandwidth / cores

    per_op = []
    core_flops = 0.0
    for node in _per_core(graph, platform, batch).nodes:
        if node.kind == WEIGHT_SYNC:
            cost = op_cost(node, ACCUMULATOR)
            if cores == 1:
                per_op.append(OpTime(node.name, 0.0, MEMORY_BOUND, 0.0, cost.arithmetic_intensity))
                continue
            t = cost.bytes / platform.sync_bandwidth
            bound = classify(cost.arithmetic_intensity, platform)
        else:
            cost = op_cost(node, dt)
            t = max(cost.flops / peak, cost.bytes / bandwidth)
            bound = classify(cost.arithmetic_intensity, platform)
        core_flops += cost.flops
        per_op.append(OpTime(node.name, t, bound, cost.flops * cores, cost.arithmetic_intensity))

    device = sum(o.time for o in per_op)
    host = batch / platform.host_throughput if platform.host_throughput else 0.0
    wait, _ = infeed_analysis(device, host)
    effective = max(device, host)
    flops = core_flops * cores
    return PerfEstimate(
        per_op=tuple(per_op),
        device_step_time=device,
        host_step_time=host,
        effective_step_time=effective,
        examples_per_sec=batch / effective,
        # per-op times bound flops/peak from below; clamp away summation round-off
        flops_utilization=min(1.0, flops / (effective * platform.peak_flops)),
        infeed_wait_fraction=wait,
        batch=batch,
        flops=flops,
    )


def amdahl_fraction(utilization_1: float, utilization_n: float, n: int) -> ScalingReport:
    """Serial fraction implied by the drop in utilization from 1 to ``n`` cores.

    The observed speedup is ``n * r`` with ``r = utilization_n / utilization_1``;
    inverting Amdahl's law gives ``f = (1/r - 1) / (n - 1)``.
    """
    if n < 2:
        raise ValueError("need at least two cores")
    if not (0 < utilization_n and 0 < utilization_1 <= 1):
        raise ValueError("utilizations must lie in (0, 1]")
    r = utilization_n / utilization_1
    # allow float round-off from a forward-simulated perfect speedup
    if r > 1 + 1e-9:
        raise ValueError(f"superlinear input: utilization ratio {r} > 1")
    f = (1 / min(r, 1.0) - 1) / (n - 1)
    return ScalingReport(n, utilization_1, utilization_n, min(1.0, max(0.0, f)))


def core_scaling(graph: OpGraph, platform: PlatformSpec, batch: int,
                 dtype: str | DType | None = None) -> ScalingReport:
    """Compare one core running its share of the batch against the full board."""
    board = replace(platform, host_throughput=None)
    one = board.single_core()
    per_core = batch / platform.cores_per_board
    u1 = estimate(graph, one, per_core, dtype).flops_utilization
    un = estimate(graph, board, batch, dtype).flops_utilization
    return amdahl_fraction(u1, un, platform.cores_per_board)


def infeed_analysis(device_step_time: float, host_step_time: float) -> tuple[float, float]:
    """Return ``(wait_fraction, resolve_speedup)`` for a host-fed device.

    ``wait_fraction`` is the share of the step the device idles for input;
    ``resolve_speedup`` is the gain if the host kept up with the device.
    """
    if device_step_time < 0 or host_step_time < 0:
        raise ValueError("step times must be >= 0")
    if device_step_time == 0:
        raise ValueError("device step time must be > 0")
    slowest = max(device_step_time, host_step_time)
    wait = max(0.0, host_step_time - device_step_time) / slowest
    return wait, slowest / device_step_time


@dataclass(frozen=True)
class OpSpeedup:
    name: str
    kind: str
    ai_a: float
    ai_b: float
    speedup: float


@dataclass(frozen=True)
class SpeedupReport:
    per_op: tuple[OpSpeedup, ...]
    end_to_end: float


def op_speedup(ai_a: float, batch_scaling: str, batch_ratio: float,
               platform_a: PlatformSpec, platform_b: PlatformSpec) -> tuple[float, float]:
    """Roofline speedup of one op moving from ``platform_a`` to ``platform_b``.

    Ops whose intensity grows with batch see it scaled by ``batch_ratio``.
    Returns ``(ai_b, speedup)``.
    """
    ai_b = ai_a * batch_ratio if batch_scaling == SCALES_WITH_BATCH else ai_a
    base = attainable_flops(ai_a, platform_a)
    if base == 0:
        return ai_b, math.nan
    return ai_b, attainable_flops(ai_b, platform_b) / base


def gen_speedup(graph: OpGraph, platform_a: PlatformSpec, platform_b: PlatformSpec,
                batch_a: int, batch_b: int, dtype: str | DType | None = None) -> SpeedupReport:
    """Per-op and end-to-end speedup of ``platform_b`` over ``platform_a``."""
    for p, b in ((platform_a, batch_a), (platform_b, batch_b)):
        _check_fits(graph, p, b, p.dtype(dtype))
    dt = platform_a.dtype(dtype)
    ratio = batch_b / batch_a
    rows = []
    for node in _per_core(graph, platform_a, batch_a).nodes:
        cost = op_cost(node, ACCUMULATOR if node.kind == WEIGHT_SYNC else dt)
        ai_b, s = op_speedup(cost.arithmetic_intensity, node.batch_scaling, ratio, platform_a, platform_b)
        rows.append(OpSpeedup(node.name, node.kind, cost.arithmetic_intensity, ai_b, s))
    e2e = (estimate(graph, platform_b, batch_b, dtype).examples_per_sec
           / estimate(graph, platform_a, batch_a, dtype).examples_per_sec)
    return SpeedupReport(tuple(rows), e2e)


def roofline_points(graph: OpGraph, platform: PlatformSpec, batch: int | None = None,
                    dtype: str | DType | None = None) -> list[tuple[str, float, float, str]]:
    """``(op, ai, attained flops, bound)`` for every op with nonzero time."""
    est = estimate(graph, platform, batch, dtype)
    return [(o.name, o.arithmetic_intensity, o.flops / o.time, o.bound)
            for o in est.per_op if o.time > 0]

