"""Sweep orchestration, CSV persistence, measurement ingestion and report files."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from . import analysis
from .analysis import MEASURED, OK, OOM, ResultRow, ResultTable
from .dtypes import DTYPES
from .graph import lower
from .perf import core_scaling, estimate
from .platform import PlatformSpec, builtin_platforms, fits, load_platforms, read_config
from .workload import (ARCH_TYPES, FAMILIES, ModelSpec, builtin_grids, expand_grid,
                       hyperparameter_names, spec_from_fields, validate_spec)

log = logging.getLogger(__name__)

HYPERPARAMETER_COLUMNS = (
    "layers", "nodes_per_layer", "input_units", "output_units",
    "block_kind", "blocks_per_group", "min_filters", "image_side", "output_classes",
    "cell_kind", "embedding_size", "max_seq_length", "vocab_size",
)
METRIC_COLUMNS = ("examples_per_sec", "flops_utilization", "device_step_time_s", "infeed_wait_fraction")
CSV_COLUMNS = ("family", *HYPERPARAMETER_COLUMNS, "platform", "dtype", "batch",
               *METRIC_COLUMNS, "status", "source")
REQUIRED_COLUMNS = ("family", "platform", "dtype", "batch", "examples_per_sec")
STRING_HYPERPARAMETERS = {"block_kind", "cell_kind"}

ROOFLINE_COLUMNS = ("spec_hash", "platform", "dtype", "op", "ai", "flops", "bound")
REQUEST_KINDS = ("roofline", "heatmap", "regression", "speedup", "percentile", "scaling")


class ConfigError(ValueError):
    pass


class SchemaError(ValueError):
    pass


@dataclass
class SweepConfig:
    family: str = "fc"
    grid: dict[str, Any] = field(default_factory=dict)
    platforms: list[str] = field(default_factory=list)
    dtypes: list[str] = field(default_factory=list)
    requests: list[dict[str, Any]] = field(default_factory=list)
    out: str = "out"
    platform_file: str | None = None
    workers: int = 1

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SweepConfig:
        known = set(cls.__dataclass_fields__)
        unknown = data.keys() - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**dict(data))

    @classmethod
    def load(cls, path: str | Path) -> SweepConfig:
        cfg = cls.from_dict(read_config(Path(path)))
        if cfg.platform_file and not Path(cfg.platform_file).is_absolute():
            cfg.platform_file = str(Path(path).parent / cfg.platform_file)
        return cfg

    def platform_specs(self) -> dict[str, PlatformSpec]:
        return load_platforms(self.platform_file) if self.platform_file else builtin_platforms()

    def resolve(self) -> tuple[list[ModelSpec], list[tuple[PlatformSpec, str]]]:
        """Expand the grid and pair platforms with dtypes, or raise before any work."""
        problems = []
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}")
        if not self.platforms:
            problems.append("platform list is empty")
        known = self.platform_specs()
        targets = []
        for name in self.platforms:
            p = known.get(name)
            if p is None:
                problems.append(f"unknown platform {name!r}")
                continue
            for d in self.dtypes or [p.default_dtype]:
                if d not in DTYPES:
                    problems.append(f"unknown dtype {d!r}")
                elif d not in p.supported_dtypes:
                    problems.append(f"platform {name!r} does not support dtype {d!r}")
                else:
                    targets.append((p, d))
        for req in self.requests:
            if req.get("kind") not in REQUEST_KINDS:
                problems.append(f"unknown request kind {req.get('kind')!r}")
        try:
            grid = builtin_grids()[self.family].override(self.grid)
            specs = expand_grid(grid, self.family)
        except (ValueError, KeyError, TypeError) as e:
            problems.append(f"grid: {e}")
            specs = []
        if self.workers < 1:
            problems.append("workers must be >= 1")
        if problems:
            raise ConfigError("; ".join(problems))
        for s in specs:
            bad = validate_spec(s)
            if bad:
                raise ConfigError(f"invalid spec {s.to_json()}: {bad}")
        return specs, targets


@dataclass(frozen=True)
class RooflinePoint:
    spec_hash: str
    platform: str
    dtype: str
    op: str
    ai: float
    flops: float
    bound: str


@dataclass
class RunRecord:
    table: ResultTable
    roofline: list[RooflinePoint] = field(default_factory=list)
    platforms: dict[str, PlatformSpec] = field(default_factory=dict)


def _evaluate(specs: Sequence[ModelSpec], targets: Sequence[tuple[PlatformSpec, str]]):
    rows, points = [], []
    for spec in specs:
        graph = lower(spec)
        h = spec.spec_hash()
        for platform, dtype in targets:
            batch = spec.batch_size
            if batch < platform.cores_per_board or not fits(graph, platform, batch, dtype):
                rows.append(ResultRow(spec, platform.name, dtype, status=OOM))
                continue
            est = estimate(graph, platform, batch, dtype)
            rows.append(ResultRow(spec, platform.name, dtype, est.examples_per_sec, est.flops_utilization,
                                  est.device_step_time, est.infeed_wait_fraction))
            points += [RooflinePoint(h, platform.name, dtype, o.name, o.arithmetic_intensity,
                                     o.flops / o.time, o.bound) for o in est.per_op if o.time > 0]
    return rows, points


def run_sweep(config: SweepConfig) -> RunRecord:
    """expand -> validate -> fit check -> estimate; out-of-memory specs stay as ``oom`` rows."""
    specs, targets = config.resolve()
    if config.workers == 1:
        rows, points = _evaluate(specs, targets)
    else:
        size = -(-len(specs) // (config.workers * 4))
        chunks = [specs[i:i + size] for i in range(0, len(specs), size)]
        rows, points = [], []
        with ProcessPoolExecutor(config.workers) as pool:
            for r, p in pool.map(_evaluate, chunks, [targets] * len(chunks)):
                rows += r
                points += p
    return RunRecord(ResultTable(rows), points, {p.name: p for p, _ in targets})


# --------------------------------------------------------------------------
# CSV


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ";".join(str(x) for x in v)
    return str(v)


def result_to_record(row: ResultRow) -> dict[str, str]:
    rec = {c: "" for c in CSV_COLUMNS}
    rec["family"] = row.spec.family
    for k, v in row.spec.hyperparameters().items():
        rec[k] = _fmt(v)
    rec.update(platform=row.platform, dtype=row.dtype, batch=str(row.batch),
               status=row.status, source=row.source)
    for m in METRIC_COLUMNS:
        rec[m] = _fmt(getattr(row, m))
    return rec


def write_results(table: Iterable[ResultRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in table:
            w.writerow(result_to_record(row))
    return path


def _parse_int(text: str) -> int | tuple[int, ...]:
    if ";" in text:
        return tuple(int(x) for x in text.split(";"))
    return int(text)


def read_results(path: str | Path, default_source: str = MEASURED) -> ResultTable:
    """Parse a results CSV. Unknown columns are ignored with a warning."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing required columns {missing}")
        extra = [c for c in header if c not in CSV_COLUMNS]
        if extra:
            log.warning("%s: ignoring unknown columns %s", path, extra)
        table = ResultTable()
        checked_families: set[str] = set()
        for n, rec in enumerate(reader, start=1):
            family = rec["family"]
            if family not in ARCH_TYPES:
                raise SchemaError(f"{path}: row {n}: unknown family {family!r}")
            if family not in checked_families:
                absent = [c for c in hyperparameter_names(family) if c not in header]
                if absent:
                    raise SchemaError(f"{path}: missing {family} columns {absent}")
                checked_families.add(family)
            table.add(_parse_row(rec, family, n, path, default_source))
    return table


def _parse_row(rec, family, n, path, default_source) -> ResultRow:
    values: dict[str, Any] = {}
    try:
        for c in hyperparameter_names(family):
            values[c] = rec[c] if c in STRING_HYPERPARAMETERS else _parse_int(rec[c])
        values["batch_size"] = int(rec["batch"])
    except (ValueError, TypeError):
        raise SchemaError(f"{path}: row {n}: non-integer hyperparameter or batch") from None
    spec = spec_from_fields(family, values)
    problems = validate_spec(spec)
    if problems:
        raise SchemaError(f"{path}: row {n}: {problems}")
    metrics: dict[str, float | None] = {}
    for m in METRIC_COLUMNS:
        text = (rec.get(m) or "").strip()
        if not text:
            metrics[m] = None
            continue
        try:
            metrics[m] = float(text)
        except ValueError:
            raise SchemaError(f"{path}: row {n}: non-numeric {m} {text!r}") from None
    status = (rec.get("status") or OK).strip()
    if status not in (OK, OOM):
        raise SchemaError(f"{path}: row {n}: status must be 'ok' or 'oom', got {status!r}")
    if status == OK and metrics["examples_per_sec"] is None:
        raise SchemaError(f"{path}: row {n}: ok row has no examples_per_sec")
    source = (rec.get("source") or default_source).strip()
    return ResultRow(spec, rec["platform"], rec["dtype"], status=status, source=source, **metrics)


def ingest_measurements(path: str | Path) -> ResultTable:
    """Load hardware measurements; rows without a ``source`` are tagged measured."""
    return read_results(path, default_source=MEASURED)


def write_roofline(points: Iterable[RooflinePoint], path: str | Path) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROOFLINE_COLUMNS)
        for p in points:
            w.writerow([p.spec_hash, p.platform, p.dtype, p.op, repr(p.ai), repr(p.flops), p.bound])
    return Path(path)


# --------------------------------------------------------------------------
# reports


def _default_features(table: ResultTable) -> list[str]:
    family = table[0].spec.family
    return [c for c in hyperparameter_names(family) if c not in STRING_HYPERPARAMETERS] + ["batch_size"]


def _check_request(req: Mapping[str, Any]) -> None:
    kind = req.get("kind")
    if kind not in REQUEST_KINDS:
        raise ConfigError(f"unknown request kind {kind!r}")
    needed = {"heatmap": ("x", "y"), "speedup": ("a", "b"), "percentile": ("p",), "scaling": ("platform",)}
    missing = [k for k in needed.get(kind, ()) if k not in req]
    if missing:
        raise ConfigError(f"{kind} request missing {missing}")


def _rows_for(table: ResultTable, req: Mapping[str, Any]) -> ResultTable:
    pins = {k: req[k] for k in ("platform", "dtype", "source") if k in req}
    return table.filter(**pins) if pins else table


def run_request(record: RunRecord, req: Mapping[str, Any], path: Path) -> dict[str, Any]:
    """Write one request's output file and return a JSON-safe summary."""
    kind = req["kind"]
    table = record.table
    if kind == "roofline":
        points = [p for p in record.roofline if all(getattr(p, k) == req[k] for k in ("platform", "dtype") if k in req)]
        if not points:
            raise ValueError("record has no roofline points for this request")
        write_roofline(points, path)
        return {"points": len(points)}
    if kind == "heatmap":
        fixed = dict(req.get("fixed", {}))
        hm = analysis.heatmap(table, req["x"], req["y"], fixed, req.get("metric", "flops_utilization"))
        hm.to_csv(path)
        return {"shape": [len(hm.y_values), len(hm.x_values)],
                "missing": sum(v is None for row in hm.cells for v in row)}
    if kind == "regression":
        rows = _rows_for(table, req)
        if not len(rows):
            raise ValueError("regression request matches no rows")
        features = req.get("features") or _default_features(rows)
        report = analysis.regress(rows, features, req.get("target", "flops_utilization"))
        report.to_csv(path)
        return {"ranked": [[f, w] for f, w in report.ranked()], "intercept": report.intercept}
    if kind == "speedup":
        pairs = analysis.speedup_table(table, req["a"], req["b"], dtype_a=req.get("dtype_a"),
                                       dtype_b=req.get("dtype_b"), ignore_batch=req.get("ignore_batch", False))
        color = req.get("color", "batch_size")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["spec_hash", "params", "speedup", color])
            for spec, s in pairs:
                w.writerow([spec.spec_hash(), lower(spec).total_params, repr(s),
                            _fmt(ResultRow(spec, "", "").feature(color))])
        return {"rows": len(pairs), "fraction_above_1": sum(s > 1 for _, s in pairs) / len(pairs)}
    if kind == "percentile":
        metric = req.get("metric", "flops_utilization")
        values = [r.feature(metric) for r in _rows_for(table, req) if r.feature(metric) is not None]
        value = analysis.percentile(values, req["p"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "p", "value", "n"])
            w.writerow([metric, req["p"], repr(value), len(values)])
        return {"value": value, "n": len(values)}
    # scaling: serial fraction per ok row on a multi-core board
    platform = record.platforms.get(req["platform"]) or builtin_platforms()[req["platform"]]
    rows = [r for r in _rows_for(table, req) if r.status == OK and r.platform == platform.name]
    fractions = []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["spec_hash", "batch", "utilization_1", "utilization_n", "non_parallel_fraction"])
        for r in rows:
            rep = core_scaling(lower(r.spec), platform, r.batch, r.dtype)
            fractions.append(rep.non_parallel_fraction)
            w.writerow([r.spec.spec_hash(), r.batch, repr(rep.utilization_1), repr(rep.utilization_n),
                        repr(rep.non_parallel_fraction)])
    summary = {"rows": len(rows)}
    if fractions:
        summary |= {"max": max(fractions), "p90": analysis.percentile(fractions, req.get("p", 90))}
    return summary


def emit_reports(record: RunRecord, requests: Sequence[Mapping[str, Any]], out_dir: str | Path) -> dict[str, Any]:
    """Write one file per request into ``out_dir``; returns ``{filename: summary}``."""
    if not len(record.table):
        raise ValueError("record is empty")
    for req in requests:
        _check_request(req)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summaries = {}
    for i, req in enumerate(requests):
        name = req.get("name") or f"{req['kind']}_{i}"
        summaries[f"{name}.csv"] = run_request(record, req, out / f"{name}.csv")
    return summaries


def write_json(data: Any, path: str | Path) -> Path:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return Path(path)

