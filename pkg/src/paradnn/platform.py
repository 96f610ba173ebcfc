"""Hardware platform descriptors and memory-capacity queries."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Mapping

from .dtypes import DType, get_dtype
from .graph import STATE_BYTES_PER_PARAM, OpGraph, footprint

GB = 1e9

# upper bound for max_batch searches on graphs with no activation memory
MAX_BATCH_CAP = 1 << 20


@dataclass(frozen=True)
class PlatformSpec:
    """Board-level rates; memory capacity is per core.

    ``mem_bandwidth`` and ``peak_flops`` are totals across the board's cores.
    ``interconnect_bandwidth`` is the rate used for cross-replica weight
    synchronization and falls back to the board memory bandwidth.
    """

    name: str
    peak_flops: float
    mem_bandwidth: float
    mem_per_core: float
    cores_per_board: int = 1
    host_throughput: float | None = None
    supported_dtypes: tuple[str, ...] = ("float32",)
    default_dtype: str = "float32"
    interconnect_bandwidth: float | None = None

    def __post_init__(self):
        for name in ("peak_flops", "mem_bandwidth", "mem_per_core"):
            if not getattr(self, name) > 0:
                raise ValueError(f"platform {self.name!r}: {name} must be > 0")
        if self.cores_per_board < 1:
            raise ValueError(f"platform {self.name!r}: cores_per_board must be >= 1")
        for name in ("host_throughput", "interconnect_bandwidth"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"platform {self.name!r}: {name} must be > 0 when set")
        for d in self.supported_dtypes:
            get_dtype(d)
        if self.default_dtype not in self.supported_dtypes:
            raise ValueError(f"platform {self.name!r}: default dtype {self.default_dtype!r} not supported")

    @property
    def inflection(self) -> float:
        """Arithmetic intensity where the roofline turns flat."""
        return self.peak_flops / self.mem_bandwidth

    @property
    def sync_bandwidth(self) -> float:
        return self.interconnect_bandwidth or self.mem_bandwidth

    def dtype(self, dtype: str | DType | None = None) -> DType:
        """Resolve ``dtype`` (or the default) and check the platform supports it."""
        d = get_dtype(dtype or self.default_dtype)
        if d.name not in self.supported_dtypes:
            raise ValueError(f"platform {self.name!r} does not support dtype {d.name!r}")
        return d

    def single_core(self) -> PlatformSpec:
        """One core of this board, with its share of compute and bandwidth."""
        n = self.cores_per_board
        return replace(self, name=f"{self.name}-1core", peak_flops=self.peak_flops / n,
                       mem_bandwidth=self.mem_bandwidth / n, cores_per_board=1,
                       interconnect_bandwidth=None)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["supported_dtypes"] = list(self.supported_dtypes)
        return d

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> PlatformSpec:
        data = dict(data)
        if "supported_dtypes" in data:
            data["supported_dtypes"] = tuple(data["supported_dtypes"])
        known = set(cls.__dataclass_fields__)
        unknown = data.keys() - known
        if unknown:
            raise ValueError(f"unknown platform fields {sorted(unknown)}")
        return cls(**data)


def builtin_platforms() -> dict[str, PlatformSpec]:
    return {
        p.name: p for p in (
            PlatformSpec("cpu", 2e12, 16.6 * GB, 120 * GB, 1,
                         supported_dtypes=("float32",), default_dtype="float32"),
            PlatformSpec("gpu-v100", 125e12, 900 * GB, 16 * GB, 1,
                         supported_dtypes=("float32", "float16"), default_dtype="float16"),
            PlatformSpec("tpu-v2", 180e12, 2400 * GB, 8 * GB, 8,
                         supported_dtypes=("float32", "bfloat16"), default_dtype="bfloat16"),
            # bandwidth is inferred from measured v3/v2 speedups, not a vendor figure
            PlatformSpec("tpu-v3", 420e12, 3600 * GB, 16 * GB, 8,
                         supported_dtypes=("float32", "bfloat16"), default_dtype="bfloat16"),
        )
    }


def read_config(path: Path) -> Any:
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # python < 3.11
            import tomli as tomllib
        return tomllib.loads(text)
    return json.loads(text)


def load_platforms(path: str | Path, base: Mapping[str, PlatformSpec] | None = None) -> dict[str, PlatformSpec]:
    """Load platforms from a JSON or TOML file, overriding ``base`` (builtins by default).

    The file holds either a ``platforms`` list/table, or a single platform object.
    """
    data = read_config(Path(path))
    platforms = dict(builtin_platforms() if base is None else base)
    if "platforms" in data:
        entries = data["platforms"]
        if isinstance(entries, Mapping):
            entries = [{"name": k, **v} for k, v in entries.items()]
    else:
        entries = [data]
    for entry in entries:
        p = PlatformSpec.from_dict(entry)
        platforms[p.name] = p
    return platforms


def fits(graph: OpGraph, platform: PlatformSpec, batch: int, dtype: str | DType | None = None) -> bool:
    """True when the per-core footprint fits in one core's memory."""
    return footprint(graph, platform, batch, dtype) <= platform.mem_per_core


def max_batch(graph: OpGraph, platform: PlatformSpec, dtype: str | DType | None = None,
              cap: int = MAX_BATCH_CAP) -> int:
    """Largest power-of-two batch (at least one example per core) that fits."""
    if STATE_BYTES_PER_PARAM * graph.total_params > platform.mem_per_core:
        raise ValueError(f"model weights exceed {platform.name} per-core memory")
    batch = 1
    while batch < platform.cores_per_board:
        batch *= 2
    if not fits(graph, platform, batch, dtype):
        raise ValueError(f"model does not fit on {platform.name} even at batch {batch}")
    while batch * 2 <= cap and fits(graph, platform, batch * 2, dtype):
        batch *= 2
    return batch
