"""Parameterized FC / CNN / RNN model space and sweep-grid expansion.

A model specification is a plain value record. Grids describe each swept
dimension as an arithmetic or geometric range (or a fixed set of choices)
and expand to the Cartesian product in a fixed order.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Iterator, Mapping, Sequence, Union

FAMILIES = ("fc", "cnn", "rnn")
BLOCK_KINDS = ("residual", "bottleneck")
CELL_KINDS = ("basic", "lstm", "gru")


@dataclass(frozen=True)
class FcSpec:
    layers: int
    nodes_per_layer: int | tuple[int, ...]
    input_units: int
    output_units: int
    batch_size: int

    @property
    def layer_widths(self) -> tuple[int, ...]:
        if isinstance(self.nodes_per_layer, int):
            return (self.nodes_per_layer,) * self.layers
        return tuple(self.nodes_per_layer)


@dataclass(frozen=True)
class CnnSpec:
    block_kind: str
    blocks_per_group: int | tuple[int, ...]
    min_filters: int
    image_side: int
    output_classes: int
    batch_size: int

    @property
    def group_blocks(self) -> tuple[int, ...]:
        if isinstance(self.blocks_per_group, int):
            return (self.blocks_per_group,) * 4
        return tuple(self.blocks_per_group)

    @property
    def group_filters(self) -> tuple[int, ...]:
        return tuple(self.min_filters * 2**g for g in range(len(self.group_blocks)))


@dataclass(frozen=True)
class RnnSpec:
    cell_kind: str
    layers: int
    embedding_size: int
    max_seq_length: int
    vocab_size: int
    batch_size: int

    @property
    def hidden_size(self) -> int:
        return self.embedding_size


Arch = Union[FcSpec, CnnSpec, RnnSpec]
ARCH_TYPES: dict[str, type] = {"fc": FcSpec, "cnn": CnnSpec, "rnn": RnnSpec}


@dataclass(frozen=True)
class ModelSpec:
    """One concrete workload: an architecture payload tagged with its family.

    ``dtype`` of ``None`` means "use the platform's default compute type".
    """

    family: str
    arch: Arch
    dtype: str | None = None

    @property
    def batch_size(self) -> int:
        return self.arch.batch_size

    def with_batch(self, batch_size: int) -> ModelSpec:
        return replace(self, arch=replace(self.arch, batch_size=batch_size))

    def with_dtype(self, dtype: str | None) -> ModelSpec:
        return replace(self, dtype=dtype)

    def hyperparameters(self) -> dict[str, Any]:
        """Architecture fields except the batch size."""
        d = _arch_dict(self.arch)
        d.pop("batch_size")
        return d

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, "dtype": self.dtype, **_arch_dict(self.arch)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ModelSpec:
        data = dict(data)
        family = data.pop("family")
        dtype = data.pop("dtype", None)
        if family not in ARCH_TYPES:
            raise ValueError(f"unknown family {family!r}")
        arch_cls = ARCH_TYPES[family]
        names = {f.name for f in fields(arch_cls)}
        missing = names - data.keys()
        unknown = data.keys() - names
        if missing or unknown:
            raise ValueError(f"{family} spec fields: missing {sorted(missing)}, unknown {sorted(unknown)}")
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return cls(family, arch_cls(**kwargs), dtype)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> ModelSpec:
        return cls.from_dict(json.loads(text))

    def spec_hash(self) -> str:
        return hashlib.sha1(self.to_json().encode()).hexdigest()[:12]


def _arch_dict(arch: Arch) -> dict[str, Any]:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(arch).items()}


def validate_spec(spec: ModelSpec) -> list[str]:
    """Return every violated invariant of ``spec``; an empty list means valid."""
    problems: list[str] = []
    expected = ARCH_TYPES.get(spec.family)
    if expected is None:
        return [f"family {spec.family!r} is not one of {FAMILIES}"]
    if not isinstance(spec.arch, expected):
        return [f"family tag {spec.family!r} does not match payload {type(spec.arch).__name__}"]

    def positive(name, value):
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            problems.append(f"{name} must be an integer ≥1, got {value!r}")

    arch = spec.arch
    if isinstance(arch, FcSpec):
        positive("layers", arch.layers)
        positive("input_units", arch.input_units)
        positive("output_units", arch.output_units)
        positive("batch_size", arch.batch_size)
        widths = arch.layer_widths
        if isinstance(arch.nodes_per_layer, int):
            positive("nodes_per_layer", arch.nodes_per_layer)
        else:
            for w in widths:
                positive("nodes_per_layer", w)
            if isinstance(arch.layers, int) and len(widths) != arch.layers:
                problems.append(f"nodes_per_layer has {len(widths)} entries for {arch.layers} layers")
            if len(set(widths)) > 1:
                problems.append(f"nodes_per_layer: uniform nodes required across layers, got {widths}")
    elif isinstance(arch, CnnSpec):
        if arch.block_kind not in BLOCK_KINDS:
            problems.append(f"block_kind must be one of {BLOCK_KINDS}, got {arch.block_kind!r}")
        blocks = arch.group_blocks
        if len(blocks) != 4:
            problems.append(f"blocks_per_group: exactly 4 groups required, got {len(blocks)}")
        for b in blocks:
            positive("blocks_per_group", b)
        if len(set(blocks)) > 1:
            problems.append(f"blocks_per_group: uniform blocks required across groups, got {blocks}")
        positive("min_filters", arch.min_filters)
        positive("image_side", arch.image_side)
        positive("output_classes", arch.output_classes)
        positive("batch_size", arch.batch_size)
    else:
        if arch.cell_kind not in CELL_KINDS:
            problems.append(f"cell_kind must be one of {CELL_KINDS}, got {arch.cell_kind!r}")
        for f in fields(RnnSpec):
            if f.name != "cell_kind":
                positive(f.name, getattr(arch, f.name))
    if spec.dtype is not None and not isinstance(spec.dtype, str):
        problems.append(f"dtype must be a name or None, got {spec.dtype!r}")
    return problems


# --------------------------------------------------------------------------
# sweep grids


@dataclass(frozen=True)
class Range:
    """Integer range ``min, min∘step, ...`` truncated at ``max``.

    ``rule`` is ``"add"`` (``+step``) or ``"mul"`` (``×step``).
    """

    min: int
    max: int
    step: int
    rule: str = "add"

    def __post_init__(self):
        if self.rule not in ("add", "mul"):
            raise ValueError(f"range rule must be 'add' or 'mul', got {self.rule!r}")
        if self.min > self.max:
            raise ValueError(f"range min {self.min} exceeds max {self.max}")
        if self.rule == "add" and self.step <= 0:
            raise ValueError("additive step must be positive")
        if self.rule == "mul" and (self.step <= 1 or self.min <= 0):
            raise ValueError("multiplicative range needs step > 1 and min > 0")

    def values(self) -> tuple[int, ...]:
        out = []
        v = self.min
        while v <= self.max:
            out.append(v)
            v = v + self.step if self.rule == "add" else v * self.step
        return tuple(out)

    def to_dict(self) -> dict[str, Any]:
        return {"min": self.min, "max": self.max, "step": self.step, "rule": self.rule}


@dataclass(frozen=True)
class Choice:
    options: tuple

    def values(self) -> tuple:
        return tuple(self.options)

    def to_dict(self) -> dict[str, Any]:
        return {"choices": list(self.options)}


Dimension = Union[Range, Choice]

# grid dimension name -> spec field, in expansion order (first varies slowest)
GRID_FIELDS: dict[str, dict[str, str]] = {
    "fc": {
        "layer": "layers",
        "node": "nodes_per_layer",
        "input": "input_units",
        "output": "output_units",
        "batch": "batch_size",
    },
    "cnn": {
        "kind": "block_kind",
        "block": "blocks_per_group",
        "filter": "min_filters",
        "image": "image_side",
        "output": "output_classes",
        "batch": "batch_size",
    },
    "rnn": {
        "cell": "cell_kind",
        "layer": "layers",
        "embed": "embedding_size",
        "length": "max_seq_length",
        "vocab": "vocab_size",
        "batch": "batch_size",
    },
}

# dimensions whose builtin sweep is geometric; used for log scaling in regressions
MULTIPLICATIVE = {
    "fc": {"layers", "nodes_per_layer", "batch_size"},
    "cnn": {"min_filters", "batch_size"},
    "rnn": {"vocab_size", "batch_size"},
}


def as_dimension(value: Any) -> Dimension:
    """Coerce a config value (dimension, dict, list or scalar) to a dimension."""
    if isinstance(value, (Range, Choice)):
        return value
    if isinstance(value, Mapping):
        if "choices" in value:
            return Choice(tuple(value["choices"]))
        return Range(int(value["min"]), int(value["max"]), int(value["step"]), value.get("rule", "add"))
    if isinstance(value, (list, tuple)):
        return Choice(tuple(value))
    return Choice((value,))


@dataclass(frozen=True)
class SweepGrid:
    dims: dict[str, Dimension] = field(default_factory=dict)

    def values(self, name: str) -> tuple:
        return self.dims[name].values()

    def override(self, overrides: Mapping[str, Any]) -> SweepGrid:
        dims = dict(self.dims)
        for name, value in overrides.items():
            if name not in dims:
                raise ValueError(f"grid has no dimension {name!r}; known: {list(dims)}")
            dims[name] = as_dimension(value)
        return SweepGrid(dims)

    def size(self) -> int:
        n = 1
        for d in self.dims.values():
            n *= len(d.values())
        return n

    def to_dict(self) -> dict[str, Any]:
        return {name: d.to_dict() for name, d in self.dims.items()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SweepGrid:
        return cls({name: as_dimension(v) for name, v in data.items()})

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> SweepGrid:
        return cls.from_dict(json.loads(text))


def builtin_grids() -> dict[str, SweepGrid]:
    """The standard FC, CNN and RNN sweeps."""
    return {
        "fc": SweepGrid({
            "layer": Range(4, 128, 2, "mul"),
            "node": Range(32, 8192, 2, "mul"),
            "input": Range(2000, 8000, 2000),
            "output": Range(200, 1000, 200),
            "batch": Range(64, 16384, 2, "mul"),
        }),
        "cnn": SweepGrid({
            "kind": Choice(BLOCK_KINDS),
            "block": Range(1, 8, 1),
            "filter": Range(16, 64, 2, "mul"),
            "image": Range(200, 300, 50),
            "output": Range(500, 1500, 500),
            "batch": Range(64, 1024, 2, "mul"),
        }),
        "rnn": SweepGrid({
            "cell": Choice(CELL_KINDS),
            "layer": Range(1, 13, 4),
            "embed": Range(100, 900, 400),
            "length": Range(10, 90, 40),
            "vocab": Range(2, 1024, 4, "mul"),
            "batch": Range(16, 1024, 4, "mul"),
        }),
    }


def iter_grid(grid: SweepGrid, family: str, dtype: str | None = None) -> Iterator[ModelSpec]:
    if family not in GRID_FIELDS:
        raise ValueError(f"unknown family {family!r}")
    mapping = GRID_FIELDS[family]
    missing = mapping.keys() - grid.dims.keys()
    unknown = grid.dims.keys() - mapping.keys()
    if missing or unknown:
        raise ValueError(f"{family} grid: missing dimensions {sorted(missing)}, unknown {sorted(unknown)}")
    order = list(mapping)
    axes = []
    for name in order:
        vals = grid.values(name)
        if not vals:
            raise ValueError(f"grid dimension {name!r} is empty")
        axes.append(vals)
    arch_cls = ARCH_TYPES[family]
    for combo in itertools.product(*axes):
        kwargs = {mapping[name]: v for name, v in zip(order, combo)}
        yield ModelSpec(family, arch_cls(**kwargs), dtype)


def expand_grid(grid: SweepGrid, family: str, dtype: str | None = None) -> list[ModelSpec]:
    """Cartesian product of the grid's dimensions, first dimension slowest."""
    return list(iter_grid(grid, family, dtype))


def spec_from_fields(family: str, values: Mapping[str, Any], dtype: str | None = None) -> ModelSpec:
    """Build a spec from a mapping that may carry extra keys."""
    arch_cls = ARCH_TYPES[family]
    kwargs = {f.name: values[f.name] for f in fields(arch_cls)}
    return ModelSpec(family, arch_cls(**kwargs), dtype)


def hyperparameter_names(family: str) -> Sequence[str]:
    return [f.name for f in fields(ARCH_TYPES[family]) if f.name != "batch_size"]
