"""Lower model specs to per-operation training cost graphs.

Every op is accounted under a cold-traffic model: each pass reads its inputs
and weights from main memory and writes its outputs back once. Parametric
ops run three passes per step (forward, input gradient, weight gradient);
parameter-free ops run two (forward, input gradient).

Byte counts on nodes are stored at the 4-byte reference width and rescaled
to the requested dtype by :func:`op_cost`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Iterable

from .dtypes import ACCUMULATOR, DType, get_dtype
from .workload import CnnSpec, FcSpec, ModelSpec, RnnSpec

if TYPE_CHECKING:
    from .platform import PlatformSpec

REFERENCE_WIDTH = 4

MATMUL = "matmul"
CONV = "conv"
BATCHNORM = "batchnorm"
POOL = "pool"
ACTIVATION = "activation"
EMBEDDING_LOOKUP = "embedding_lookup"
RECURRENT_CELL_GATES = "recurrent_cell_gates"
WEIGHT_SYNC = "weight_sync"
LOOP_FUSION_LIKE = "loop_fusion_like"
OP_KINDS = (MATMUL, CONV, BATCHNORM, POOL, ACTIVATION, EMBEDDING_LOOKUP,
            RECURRENT_CELL_GATES, WEIGHT_SYNC, LOOP_FUSION_LIKE)

SCALES_WITH_BATCH = "intensity_scales_with_batch"
FIXED_INTENSITY = "intensity_fixed"

# per-element forward cost: mean, centre, square, variance, normalize, affine
BN_FLOPS_PER_ELEM = 6
GATES = {"basic": 1, "gru": 3, "lstm": 4}

# weights + gradients + optimizer accumulator, all in 32 bits
STATE_BYTES_PER_PARAM = 3 * ACCUMULATOR.width


@dataclass(frozen=True)
class OpNode:
    """One lowered op. Costs are affine in batch: ``fixed + per_example * batch``."""

    name: str
    kind: str
    batch: float
    params: int = 0
    batch_scaling: str = FIXED_INTENSITY
    flops_fixed: float = 0.0
    flops_per_example: float = 0.0
    read_fixed: float = 0.0
    read_per_example: float = 0.0
    written_fixed: float = 0.0
    written_per_example: float = 0.0

    @property
    def flops(self) -> float:
        return self.flops_fixed + self.flops_per_example * self.batch

    @property
    def bytes_read(self) -> float:
        return self.read_fixed + self.read_per_example * self.batch

    @property
    def bytes_written(self) -> float:
        return self.written_fixed + self.written_per_example * self.batch

    def at_batch(self, batch: float) -> OpNode:
        return replace(self, batch=batch)

    @classmethod
    def constant(cls, name: str, kind: str, flops: float, bytes_read: float,
                 bytes_written: float = 0.0, params: int = 0,
                 batch_scaling: str = FIXED_INTENSITY) -> OpNode:
        """A node whose costs do not depend on batch (bytes at reference width)."""
        return cls(name, kind, batch=1, params=params, batch_scaling=batch_scaling,
                   flops_fixed=flops, read_fixed=bytes_read, written_fixed=bytes_written)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "flops": self.flops,
            "bytes_read": self.bytes_read,
            "bytes_written": self.bytes_written,
            "bytes": self.bytes_read + self.bytes_written,
            "params": self.params,
            "batch_scaling": self.batch_scaling,
        }


@dataclass(frozen=True)
class OpCost:
    arithmetic_intensity: float
    flops: float
    bytes: float


@dataclass(frozen=True)
class OpGraph:
    nodes: tuple[OpNode, ...]
    total_params: int
    activation_bytes_per_example: float
    batch: float = 1

    def __post_init__(self):
        if self.total_params != sum(n.params for n in self.nodes):
            raise ValueError("total_params must equal the sum of node params")

    @classmethod
    def from_nodes(cls, nodes: Iterable[OpNode], activation_bytes_per_example: float = 0.0,
                   batch: float = 1) -> OpGraph:
        nodes = tuple(n.at_batch(batch) for n in nodes)
        return cls(nodes, sum(n.params for n in nodes), activation_bytes_per_example, batch)

    def at_batch(self, batch: float) -> OpGraph:
        return replace(self, nodes=tuple(n.at_batch(batch) for n in self.nodes), batch=batch)

    @property
    def flops(self) -> float:
        return sum(n.flops for n in self.nodes)

    def ops(self) -> list[dict]:
        return [n.to_dict() for n in self.nodes]


def op_cost(node: OpNode, dtype: str | DType) -> OpCost:
    """Arithmetic intensity of ``node`` with every tensor stored as ``dtype``."""
    width = get_dtype(dtype).width
    nbytes = (node.bytes_read + node.bytes_written) * width / REFERENCE_WIDTH
    if nbytes == 0:
        if node.flops != 0:
            raise ValueError(f"op {node.name!r} has {node.flops} flops but moves no bytes")
        return OpCost(0.0, 0.0, 0.0)
    return OpCost(node.flops / nbytes, node.flops, nbytes)


def footprint(graph: OpGraph, platform: PlatformSpec, batch: int,
              dtype: str | DType | None = None) -> float:
    """Bytes resident on one core when ``batch`` is split across the board."""
    if platform.cores_per_board < 1:
        raise ValueError("platform must have at least one core")
    if batch < platform.cores_per_board:
        raise ValueError(f"batch unsplittable: batch {batch} < {platform.cores_per_board} cores")
    width = get_dtype(dtype or platform.default_dtype).width
    per_core = batch / platform.cores_per_board
    return (STATE_BYTES_PER_PARAM * graph.total_params
            + graph.activation_bytes_per_example * per_core * width / REFERENCE_WIDTH)


# --------------------------------------------------------------------------
# lowering


class _Builder:
    def __init__(self, batch: int):
        self.batch = batch
        self.nodes: list[OpNode] = []
        self.activations = 0.0  # elements saved per example

    def parametric(self, name, kind, fwd_flops, inputs, outputs, weights, params,
                   scaling=FIXED_INTENSITY):
        # fwd: in+W -> out; input-grad: dout+W -> din; weight-grad: in+dout -> dW
        w = REFERENCE_WIDTH
        self.nodes.append(OpNode(
            name, kind, self.batch, params=params, batch_scaling=scaling,
            flops_per_example=3 * fwd_flops,
            read_fixed=2 * weights * w, read_per_example=2 * (inputs + outputs) * w,
            written_fixed=weights * w, written_per_example=(inputs + outputs) * w,
        ))
        self.activations += outputs

    def elementwise(self, name, kind, fwd_flops, inputs, outputs):
        # fwd: in -> out; input-grad: dout+in -> din
        w = REFERENCE_WIDTH
        self.nodes.append(OpNode(
            name, kind, self.batch,
            flops_per_example=2 * fwd_flops,
            read_per_example=(2 * inputs + outputs) * w,
            written_per_example=(inputs + outputs) * w,
        ))
        self.activations += outputs

    def dense(self, name, n_in, n_out):
        self.parametric(name, MATMUL, 2 * n_in * n_out, n_in, n_out,
                        n_in * n_out + n_out, n_in * n_out + n_out, SCALES_WITH_BATCH)

    def conv(self, name, side, c_in, c_out, kernel, stride=1):
        out_side = math.ceil(side / stride)
        params = kernel * kernel * c_in * c_out + c_out
        self.parametric(name, CONV, 2 * out_side**2 * c_in * c_out * kernel**2,
                        side**2 * c_in, out_side**2 * c_out, params, params)
        return out_side

    def batchnorm(self, name, side, channels):
        elems = side**2 * channels
        self.parametric(name, BATCHNORM, BN_FLOPS_PER_ELEM * elems, elems, elems,
                        2 * channels, 2 * channels)

    def weight_sync(self):
        # one 32-bit add per parameter for every two values loaded
        params = sum(n.params for n in self.nodes)
        self.nodes.append(OpNode("weight_sync", WEIGHT_SYNC, self.batch,
                                 flops_fixed=params, read_fixed=2 * params * REFERENCE_WIDTH))

    def graph(self, input_elems: float) -> OpGraph:
        act = (input_elems + self.activations) * REFERENCE_WIDTH
        return OpGraph.from_nodes(self.nodes, act, self.batch)


def _lower_fc(arch: FcSpec, b: _Builder) -> float:
    n_in = arch.input_units
    for i, width in enumerate(arch.layer_widths):
        b.dense(f"dense_{i}", n_in, width)
        n_in = width
    b.dense("output", n_in, arch.output_units)
    return arch.input_units


def _lower_cnn(arch: CnnSpec, b: _Builder) -> float:
    side = arch.image_side
    f0 = arch.min_filters
    side = b.conv("stem_conv", side, 3, f0, 7, stride=2)
    b.batchnorm("stem_bn", side, f0)
    pooled = math.ceil(side / 2)
    b.elementwise("stem_pool", POOL, 9 * pooled**2 * f0, side**2 * f0, pooled**2 * f0)
    side, channels = pooled, f0
    expansion = 4 if arch.block_kind == "bottleneck" else 1
    for g, (blocks, filters) in enumerate(zip(arch.group_blocks, arch.group_filters)):
        for j in range(blocks):
            stride = 2 if g > 0 and j == 0 else 1
            tag = f"g{g}b{j}"
            if arch.block_kind == "residual":
                out = b.conv(f"{tag}_conv1", side, channels, filters, 3, stride)
                b.batchnorm(f"{tag}_bn1", out, filters)
                b.conv(f"{tag}_conv2", out, filters, filters, 3)
                b.batchnorm(f"{tag}_bn2", out, filters)
            else:
                b.conv(f"{tag}_conv1", side, channels, filters, 1)
                b.batchnorm(f"{tag}_bn1", side, filters)
                out = b.conv(f"{tag}_conv2", side, filters, filters, 3, stride)
                b.batchnorm(f"{tag}_bn2", out, filters)
                b.conv(f"{tag}_conv3", out, filters, filters * expansion, 1)
                b.batchnorm(f"{tag}_bn3", out, filters * expansion)
            side, channels = out, filters * expansion
            # identity shortcut (strided, zero-padded channels) + relu
            elems = side**2 * channels
            b.elementwise(f"{tag}_add", ACTIVATION, 2 * elems, 2 * elems, elems)
    b.elementwise("avg_pool", POOL, side**2 * channels, side**2 * channels, channels)
    b.dense("output", channels, arch.output_classes)
    return arch.image_side**2 * 3


def _lower_rnn(arch: RnnSpec, b: _Builder) -> float:
    steps, emb, hidden, vocab = arch.max_seq_length, arch.embedding_size, arch.hidden_size, arch.vocab_size
    w = REFERENCE_WIDTH
    # gather rows forward; scatter-add row gradients backward
    tokens = steps * emb
    b.nodes.append(OpNode("embedding", EMBEDDING_LOOKUP, b.batch, params=vocab * emb,
                          flops_per_example=tokens,
                          read_per_example=3 * tokens * w, written_per_example=2 * tokens * w))
    b.activations += tokens
    gates = GATES[arch.cell_kind]
    state = 2 * hidden if arch.cell_kind == "lstm" else hidden
    n_in = emb
    for layer in range(arch.layers):
        params = gates * ((n_in + hidden) * hidden + hidden)
        # unrolled: every timestep re-reads the gate matrices
        b.parametric(f"rnn_{layer}", RECURRENT_CELL_GATES,
                     steps * gates * 2 * (n_in + hidden) * hidden,
                     steps * (n_in + hidden), steps * state, steps * params, params,
                     SCALES_WITH_BATCH)
        n_in = hidden
    b.parametric("output", MATMUL, steps * 2 * hidden * vocab, steps * hidden, steps * vocab,
                 hidden * vocab + vocab, hidden * vocab + vocab, SCALES_WITH_BATCH)
    return steps


def lower(spec: ModelSpec) -> OpGraph:
    """Lower ``spec`` to an op graph in forward-pass order at its own batch size."""
    lowerers = {"fc": _lower_fc, "cnn": _lower_cnn, "rnn": _lower_rnn}
    if spec.family not in lowerers:
        raise ValueError(f"unknown family {spec.family!r}")
    b = _Builder(spec.batch_size)
    input_elems = lowerers[spec.family](spec.arch, b)
    b.weight_sync()
    return b.graph(input_elems)
