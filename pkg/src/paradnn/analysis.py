"""Result tables, normalized regression weights, speedups, percentiles and heat maps."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .workload import GRID_FIELDS, MULTIPLICATIVE, ModelSpec

ESTIMATED = "estimated"
MEASURED = "measured"
OK = "ok"
OOM = "oom"

ROW_FEATURES = ("family", "platform", "dtype", "source", "status")


@dataclass(frozen=True)
class ResultRow:
    spec: ModelSpec
    platform: str
    dtype: str
    examples_per_sec: float | None = None
    flops_utilization: float | None = None
    device_step_time_s: float | None = None
    infeed_wait_fraction: float | None = None
    status: str = OK
    source: str = ESTIMATED

    @property
    def batch(self) -> int:
        return self.spec.batch_size

    @property
    def key(self) -> tuple:
        return (self.spec.with_dtype(None), self.platform, self.dtype, self.source)

    def feature(self, name: str) -> Any:
        """Value of a hyperparameter, row attribute or metric; ``None`` when inapplicable."""
        if name in ROW_FEATURES:
            return self.spec.family if name == "family" else getattr(self, name)
        if name in ("batch", "batch_size"):
            return self.batch
        name = GRID_FIELDS[self.spec.family].get(name, name)
        if hasattr(self.spec.arch, name):
            return getattr(self.spec.arch, name)
        if name in METRICS:
            return getattr(self, name)
        return None


METRICS = ("examples_per_sec", "flops_utilization", "device_step_time_s", "infeed_wait_fraction")


class ResultTable:
    """Rows unique per (spec, platform, dtype, source)."""

    def __init__(self, rows: Iterable[ResultRow] = ()):
        self._rows: list[ResultRow] = []
        self._keys: set[tuple] = set()
        self.extend(rows)

    def add(self, row: ResultRow) -> None:
        if row.key in self._keys:
            spec, platform, dtype, source = row.key
            raise ValueError(f"duplicate row for {spec.to_json()} on {platform}/{dtype} ({source})")
        self._keys.add(row.key)
        self._rows.append(row)

    def extend(self, rows: Iterable[ResultRow]) -> None:
        for r in rows:
            self.add(r)

    def merge(self, other: Iterable[ResultRow]) -> ResultTable:
        out = ResultTable(self._rows)
        out.extend(other)
        return out

    def filter(self, **pins: Any) -> ResultTable:
        return ResultTable(r for r in self._rows if all(r.feature(k) == v for k, v in pins.items()))

    def __iter__(self) -> Iterator[ResultRow]:
        return iter(self._rows)

    def __len__(self) -> int:
        return len(self._rows)

    def __getitem__(self, i: int) -> ResultRow:
        return self._rows[i]

    def __eq__(self, other) -> bool:
        return isinstance(other, ResultTable) and self._rows == other._rows

    @property
    def rows(self) -> list[ResultRow]:
        return list(self._rows)


# --------------------------------------------------------------------------
# regression


@dataclass(frozen=True)
class FeatureScale:
    name: str
    min: float
    max: float
    log: bool

    def apply(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        lo, hi = self.min, self.max
        if self.log:
            v, lo, hi = np.log2(v), math.log2(lo), math.log2(hi)
        return (v - lo) / (hi - lo)


def normalize_columns(columns: Mapping[str, Sequence[float]], log: Iterable[str] = ()) -> tuple[np.ndarray, list[FeatureScale]]:
    """Min-max scale each column to [0, 1], taking ``log2`` first for ``log`` columns."""
    log = set(log)
    scales, cols = [], []
    for name, values in columns.items():
        v = np.asarray(values, dtype=float)
        if v.size == 0 or np.unique(v).size < 2:
            raise ValueError(f"feature {name!r} is constant; need at least two distinct values")
        if name in log and np.any(v <= 0):
            raise ValueError(f"feature {name!r} has non-positive values; cannot log-scale")
        s = FeatureScale(name, float(v.min()), float(v.max()), name in log)
        scales.append(s)
        cols.append(s.apply(v))
    return np.column_stack(cols), scales


def normalize_features(table: Iterable[ResultRow], features: Sequence[str],
                       multiplicative: Iterable[str] | None = None) -> tuple[np.ndarray, list[FeatureScale]]:
    """Normalized design matrix for ``features`` over the rows of ``table``.

    By default the features swept geometrically in the builtin grids are log-scaled.
    """
    rows = list(table)
    if multiplicative is None:
        families = {r.spec.family for r in rows}
        multiplicative = set()
        for fam in families:
            aliases = {v: k for k, v in GRID_FIELDS[fam].items()}
            for f in MULTIPLICATIVE[fam]:
                multiplicative |= {f, aliases.get(f, f)}
            if "batch_size" in MULTIPLICATIVE[fam]:
                multiplicative.add("batch")
    columns = {}
    for f in features:
        vals = [r.feature(f) for r in rows]
        if any(v is None or isinstance(v, str) for v in vals):
            raise ValueError(f"feature {f!r} is missing or non-numeric in some rows")
        columns[f] = vals
    return normalize_columns(columns, set(multiplicative) & set(features))


@dataclass(frozen=True)
class RegressionReport:
    features: tuple[str, ...]
    weights: tuple[float, ...]
    intercept: float
    normalization: tuple[FeatureScale, ...] = ()

    def weight(self, name: str) -> float:
        return self.weights[self.features.index(name)]

    def ranked(self) -> list[tuple[str, float]]:
        """Features ordered by decreasing weight magnitude."""
        return sorted(zip(self.features, self.weights), key=lambda fw: -abs(fw[1]))

    def to_dict(self) -> dict[str, Any]:
        scales = {s.name: s for s in self.normalization}
        return {
            "intercept": self.intercept,
            "weights": [
                {"feature": f, "weight": w,
                 **({"min": scales[f].min, "max": scales[f].max, "log2": scales[f].log} if f in scales else {})}
                for f, w in zip(self.features, self.weights)
            ],
        }

    def to_csv(self, path: str | Path) -> None:
        scales = {s.name: s for s in self.normalization}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "weight", "min", "max", "log2"])
            for f, wt in zip(self.features, self.weights):
                s = scales.get(f)
                w.writerow([f, repr(wt), *( (repr(s.min), repr(s.max), int(s.log)) if s else ("", "", ""))])
            w.writerow(["(intercept)", repr(self.intercept), "", "", ""])


def fit_lr(X: np.ndarray, y: Sequence[float], features: Sequence[str] | None = None,
           normalization: Sequence[FeatureScale] = ()) -> RegressionReport:
    """Ordinary least squares with intercept, solved through the normal equations."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be 2-D with one row per target")
    n, k = X.shape
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} rows for {k} features, got {n}")
    A = np.column_stack([X, np.ones(n)])
    if np.linalg.matrix_rank(A) < k + 1:
        raise ValueError("design matrix is rank-deficient")
    coef = np.linalg.solve(A.T @ A, A.T @ y)
    features = tuple(features) if features is not None else tuple(f"x{i}" for i in range(k))
    return RegressionReport(features, tuple(float(c) for c in coef[:k]), float(coef[k]), tuple(normalization))


def regress(table: Iterable[ResultRow], features: Sequence[str], target: str = "flops_utilization") -> RegressionReport:
    """Fit normalized-feature weights for ``target`` over the rows that carry it."""
    rows = [r for r in table if r.feature(target) is not None]
    X, scales = normalize_features(rows, features)
    return fit_lr(X, [r.feature(target) for r in rows], features, scales)


# --------------------------------------------------------------------------
# comparisons


def speedup_table(table: Iterable[ResultRow], platform_a: str, platform_b: str, *,
                  dtype_a: str | None = None, dtype_b: str | None = None,
                  metric: str = "examples_per_sec", ignore_batch: bool = False,
                  source: str | None = None) -> list[tuple[ModelSpec, float]]:
    """``metric_a / metric_b`` for every spec present (ok) on both platforms."""

    def side(platform, dtype):
        out: dict[ModelSpec, ResultRow] = {}
        for r in table_rows:
            if r.platform != platform or r.status != OK or r.feature(metric) is None:
                continue
            if dtype is not None and r.dtype != dtype:
                continue
            if source is not None and r.source != source:
                continue
            key = r.spec.with_dtype(None)
            if ignore_batch:
                key = key.with_batch(0)
            if key in out:
                raise ValueError(f"ambiguous rows for {key.to_json()} on {platform}; pin dtype or source")
            out[key] = r
        return out

    table_rows = list(table)
    a, b = side(platform_a, dtype_a), side(platform_b, dtype_b)
    matched = [(k, a[k].feature(metric) / b[k].feature(metric)) for k in a if k in b]
    if not matched:
        raise ValueError(f"no matching rows between {platform_a} and {platform_b}")
    return matched


def percentile(values: Sequence[float], p: float) -> float:
    """Linear interpolation between closest ranks."""
    if len(values) == 0:
        raise ValueError("percentile of empty sequence")
    if not 0 <= p <= 100:
        raise ValueError(f"percentile must be in [0, 100], got {p}")
    return float(np.percentile(np.asarray(values, dtype=float), p))


@dataclass(frozen=True)
class Heatmap:
    x_feature: str
    y_feature: str
    x_values: tuple
    y_values: tuple
    cells: tuple[tuple[float | None, ...], ...]
    metric: str = ""

    def cell(self, x, y) -> float | None:
        return self.cells[self.y_values.index(y)][self.x_values.index(x)]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"{self.y_feature}\\{self.x_feature}", *self.x_values])
            for y, row in zip(self.y_values, self.cells):
                w.writerow([y, *("" if v is None else repr(v) for v in row)])

    def to_json(self) -> str:
        return json.dumps({"x": self.x_feature, "y": self.y_feature, "metric": self.metric,
                           "x_values": list(self.x_values), "y_values": list(self.y_values),
                           "cells": [list(r) for r in self.cells]})


def _varying_features(rows: Sequence[ResultRow]) -> list[str]:
    names = ["family", "platform", "dtype", "source", "batch_size"]
    for r in rows:
        names += [f for f in r.spec.hyperparameters() if f not in names]
    return [n for n in names if len({_hashable(r.feature(n)) for r in rows}) > 1]


def _hashable(v):
    return tuple(v) if isinstance(v, list) else v


def heatmap(table: Iterable[ResultRow], x_feature: str, y_feature: str,
            fixed: Mapping[str, Any], metric: str = "flops_utilization") -> Heatmap:
    """Pivot ``metric`` over two axes with every other varying feature pinned.

    Cells with no row, or whose row has no metric value (out of memory), are ``None``.
    """
    rows = [r for r in table if all(r.feature(k) == v for k, v in fixed.items())]
    if not rows:
        raise ValueError(f"no rows match pins {dict(fixed)}")
    axes = {_canonical(rows[0], x_feature), _canonical(rows[0], y_feature)}
    pinned = {_canonical(rows[0], k) for k in fixed}
    unpinned = [f for f in _varying_features(rows) if f not in axes and f not in pinned]
    if unpinned:
        raise ValueError(f"unpinned features vary across rows: {unpinned}")
    xs = tuple(sorted({r.feature(x_feature) for r in rows}))
    ys = tuple(sorted({r.feature(y_feature) for r in rows}))
    grid: dict[tuple, float | None] = {}
    for r in rows:
        cell = (r.feature(x_feature), r.feature(y_feature))
        if cell in grid:
            raise ValueError(f"ambiguous duplicate cell {x_feature}={cell[0]}, {y_feature}={cell[1]}")
        grid[cell] = r.feature(metric) if r.status == OK else None
    cells = tuple(tuple(grid.get((x, y)) for x in xs) for y in ys)
    return Heatmap(x_feature, y_feature, xs, ys, cells, metric)


def _canonical(row: ResultRow, name: str) -> str:
    if name == "batch":
        return "batch_size"
    return GRID_FIELDS[row.spec.family].get(name, name)
