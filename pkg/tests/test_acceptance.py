"""Acceptance criteria, one test (and one PASS/FAIL line) per criterion.

Criteria that cannot hold as literally stated are still evaluated in full and
marked strict xfail, so their FAIL line stays visible.
"""

import random
import time
from dataclasses import replace

import numpy as np
import pytest

import conftest
from oracles import amdahl_speedup, grid_values, param_count
from paradnn import builtin_grids, builtin_platforms, expand_grid, lower, op_cost
from paradnn.analysis import OK, ResultRow, ResultTable, normalize_features, regress
from paradnn.graph import FIXED_INTENSITY, SCALES_WITH_BATCH, WEIGHT_SYNC
from paradnn.harness import SweepConfig, read_results, run_sweep, write_results
from paradnn.perf import amdahl_fraction, infeed_analysis, op_speedup
from paradnn.platform import fits
from paradnn.workload import CnnSpec, FcSpec, ModelSpec, RnnSpec

P = builtin_platforms()
V2, V3 = P["tpu-v2"], P["tpu-v3"]


def report(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n:2d}: {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def test_criterion_01_roofline_constants():
    t0 = time.perf_counter()
    p = builtin_platforms()
    x2, x3 = p["tpu-v2"].inflection, p["tpu-v3"].inflection
    elapsed = time.perf_counter() - t0
    ok = (abs(x2 - 75) / 75 <= 1e-9 and abs(x3 - 420 / 3.6) / (420 / 3.6) <= 1e-9
          and round(x3, 2) == 116.67 and elapsed < 1)
    assert report(1, ok, f"inflection v2={x2:.12g} v3={x3:.12g} ({elapsed * 1e3:.1f} ms)")


def _anchor_checks():
    compute = [op_speedup(ai, s, 2, V2, V3)[1] for ai in (117, 200, 1e4)
               for s in (FIXED_INTENSITY, SCALES_WITH_BATCH)]
    batch_mem = [op_speedup(ai, SCALES_WITH_BATCH, 2, V2, V3)[1] for ai in (0.125, 1, 20, 58)]
    fixed_mem = [op_speedup(ai, FIXED_INTENSITY, 2, V2, V3)[1] for ai in (0.125, 1, 20, 74.9)]
    return (all(abs(s - 2.33) <= 0.01 for s in compute),
            all(abs(s - 3.0) <= 0.01 for s in batch_mem),
            all(abs(s - 1.5) <= 0.01 for s in fixed_mem))


def _boundary_speedups(lo, hi, n=20001):
    ais = np.linspace(lo, hi, n)
    return ais, np.array([op_speedup(float(a), FIXED_INTENSITY, 2, V2, V3)[1] for a in ais])


def test_anchor_classes_and_open_boundary_interval():
    # the attainable part of criterion 2: anchors, and the open interval between the two inflections
    assert all(_anchor_checks())
    _, s = _boundary_speedups(np.nextafter(V2.inflection, np.inf), np.nextafter(V3.inflection, 0))
    assert np.all((s > 1.5) & (s < 420 / 180))


@pytest.mark.xfail(strict=True, reason="endpoints of [75, 117) give exactly 1.5 and 7/3 under the roofline")
def test_criterion_02_v3_over_v2_anchor_classes():
    t0 = time.perf_counter()
    compute, batch_mem, fixed_mem = _anchor_checks()
    # probe the closed-open interval as stated, including its endpoints
    ais, s = _boundary_speedups(75.0, np.nextafter(117.0, 0))
    inside = (s > 1.5) & (s < 420 / 180)
    elapsed = time.perf_counter() - t0
    bad = ais[~inside]
    detail = (f"compute={compute} batch-mem={batch_mem} fixed-mem={fixed_mem}; "
              f"{(~inside).sum()} of {len(ais)} boundary probes not strictly inside (1.5, 2.33)")
    if bad.size:
        detail += (f", e.g. ai=75 -> {op_speedup(75.0, FIXED_INTENSITY, 2, V2, V3)[1]!r}, "
                   f"ai={bad.max():.4f} -> {op_speedup(float(bad.max()), FIXED_INTENSITY, 2, V2, V3)[1]!r}")
    ok = compute and batch_mem and fixed_mem and inside.all() and elapsed < 1
    report(2, ok, detail + f" ({elapsed:.2f} s)")
    assert ok


def test_criterion_03_accumulation_intensity():
    spec = ModelSpec("fc", FcSpec(4, 32, 2000, 200, 64))
    sync = [n for n in lower(spec).nodes if n.kind == WEIGHT_SYNC][0]
    ai = op_cost(sync, "float32").arithmetic_intensity
    assert report(3, ai == 0.125, f"weight_sync float32 ai={ai!r}")


def test_criterion_04_amdahl_round_trip():
    rng = random.Random(4)
    err = 0.0
    for _ in range(1000):
        f, n = rng.random(), rng.randint(2, 4096)
        r = amdahl_speedup(f, n) / n
        err = max(err, abs(amdahl_fraction(1.0, r, n).non_parallel_fraction - f))
    f1 = amdahl_fraction(1.0, 0.1923, 8).non_parallel_fraction
    f2 = amdahl_fraction(1.0, 0.47, 8).non_parallel_fraction
    ok = err < 1e-9 and abs(f1 - 0.60) <= 0.005 and abs(f2 - 0.161) <= 0.005
    assert report(4, ok, f"max round-trip error {err:.2e}; f(0.1923,8)={f1:.4f} f(0.47,8)={f2:.4f}")


def test_criterion_05_infeed():
    _, resolve = infeed_analysis(1.0, 1.34)
    balanced = [infeed_analysis(d, h)[1] for d, h in ((1.0, 1.0), (2.0, 1.0), (5.0, 0.0))]
    ok = resolve == 1.34 and all(b == 1.0 for b in balanced)
    assert report(5, ok, f"resolve_speedup(1.34)={resolve!r}; host<=device -> {balanced}")


def _random_specs(rng, n):
    fc = [ModelSpec("fc", FcSpec(rng.randint(1, 128), rng.randint(1, 8192), rng.randint(1, 8000),
                                 rng.randint(1, 1000), rng.randint(1, 16384))) for _ in range(n)]
    cnn = [ModelSpec("cnn", CnnSpec(rng.choice(["residual", "bottleneck"]), rng.randint(1, 8),
                                    rng.randint(1, 64), rng.randint(8, 300), rng.randint(1, 1500),
                                    rng.randint(1, 1024))) for _ in range(n)]
    rnn = [ModelSpec("rnn", RnnSpec(rng.choice(["basic", "lstm", "gru"]), rng.randint(1, 13),
                                    rng.randint(1, 900), rng.randint(1, 90), rng.randint(1, 1024),
                                    rng.randint(1, 1024))) for _ in range(n)]
    return {"fc": fc, "cnn": cnn, "rnn": rnn}


def test_criterion_06_param_oracle():
    t0 = time.perf_counter()
    specs = _random_specs(random.Random(6), 60)
    mismatches = {fam: sum(lower(s).total_params != param_count(s) for s in group)
                  for fam, group in specs.items()}
    elapsed = time.perf_counter() - t0
    ok = all(m == 0 for m in mismatches.values()) and elapsed < 10
    assert report(6, ok, f"60 specs/family, mismatches {mismatches} ({elapsed:.2f} s)")


RULES = {
    "fc": {"layer": (4, 128, 2, "mul"), "node": (32, 8192, 2, "mul"), "input": (2000, 8000, 2000, "add"),
           "output": (200, 1000, 200, "add"), "batch": (64, 16384, 2, "mul")},
    "cnn": {"block": (1, 8, 1, "add"), "filter": (16, 64, 2, "mul"), "image": (200, 300, 50, "add"),
            "output": (500, 1500, 500, "add"), "batch": (64, 1024, 2, "mul")},
    "rnn": {"layer": (1, 13, 4, "add"), "embed": (100, 900, 400, "add"), "length": (10, 90, 40, "add"),
            "vocab": (2, 1024, 4, "mul"), "batch": (16, 1024, 4, "mul")},
}


def test_criterion_07_grid_cardinality():
    grids = builtin_grids()
    n_fc = len(expand_grid(grids["fc"], "fc"))
    mismatched = [f"{fam}.{dim}" for fam, dims in RULES.items() for dim, rule in dims.items()
                  if list(grids[fam].values(dim)) != grid_values(*rule)]
    vocab = grids["rnn"].values("vocab")
    ok = n_fc == 9720 and not mismatched and vocab == (2, 8, 32, 128, 512)
    assert report(7, ok, f"FC grid {n_fc} specs; vocab {vocab}; mismatched dims {mismatched}")


FIT_PLATFORMS = ("cpu", "gpu-v100", "tpu-v2")


def _fit_counts():
    counts = dict.fromkeys(FIT_PLATFORMS, 0)
    for spec in expand_grid(builtin_grids()["fc"], "fc"):
        g = lower(spec)
        for name in FIT_PLATFORMS:
            counts[name] += fits(g, P[name], spec.batch_size)
    return counts


def _fits_monotone(rng, trials=1000):
    """Shrink one of batch, dtype width or a size field; a fitting spec must keep fitting."""
    grid = expand_grid(builtin_grids()["fc"], "fc")
    fields = ["layers", "nodes_per_layer", "input_units", "output_units"]
    violations = 0
    for _ in range(trials):
        spec = rng.choice(grid)
        p = P[rng.choice(sorted(P))]
        a = spec.arch
        dtype = "float32"
        what = rng.choice(["batch", "dtype", *fields])
        if what == "batch":
            a = replace(a, batch_size=max(p.cores_per_board, a.batch_size // rng.randint(2, 16)))
        elif what == "dtype":
            dtype = p.supported_dtypes[-1]
        else:
            a = replace(a, **{what: rng.randint(1, getattr(a, what))})
        if fits(lower(spec), p, spec.batch_size, "float32"):
            violations += not fits(lower(ModelSpec("fc", a)), p, a.batch_size, dtype)
    return violations


def test_fc_fit_counts_and_largest_model():
    # the attainable reading of criterion 8: the largest model (weights only, smallest grid batch)
    counts = _fit_counts()
    assert counts["cpu"] >= counts["gpu-v100"] >= counts["tpu-v2"]
    largest = lower(ModelSpec("fc", FcSpec(128, 8192, 8000, 1000, 64)))
    assert [n for n in FIT_PLATFORMS + ("tpu-v3",) if fits(largest, P[n], 64)] == ["cpu"]
    assert _fits_monotone(random.Random(8)) == 0


@pytest.mark.xfail(strict=True, reason="largest-footprint grid point (batch 16384) exceeds every capacity")
def test_criterion_08_memory_fit_ordering():
    grid = expand_grid(builtin_grids()["fc"], "fc")

    def foot(spec):
        g = lower(spec)
        return 12 * g.total_params + g.activation_bytes_per_example * spec.batch_size

    largest = max(grid, key=foot)
    g = lower(largest)
    fits_on = [n for n in sorted(P) if largest.batch_size >= P[n].cores_per_board
               and fits(g, P[n], largest.batch_size)]
    counts = _fit_counts()
    violations = _fits_monotone(random.Random(8))
    ok = (fits_on == ["cpu"] and counts["cpu"] >= counts["gpu-v100"] >= counts["tpu-v2"] and violations == 0)
    report(8, ok, f"largest-footprint spec {largest.hyperparameters()} batch {largest.batch_size} "
                  f"({foot(largest) / 1e9:.0f} GB) fits on {fits_on}; counts {counts}; "
                  f"monotonicity violations {violations}/1000")
    assert ok


FC_FEATURES = ["layer", "node", "input", "output", "batch"]


def _synthetic_table(coef, noise, seed=9):
    specs = expand_grid(builtin_grids()["fc"], "fc")
    rows = [ResultRow(s, "synthetic", "float32") for s in specs]
    X, _ = normalize_features(rows, FC_FEATURES)
    y = X @ coef + 0.3
    rng = np.random.default_rng(seed)
    y = y + rng.uniform(-noise, noise, len(y)) * (y.max() - y.min())
    return ResultTable(ResultRow(s, "synthetic", "float32", 1.0, float(v)) for s, v in zip(specs, y))


def test_criterion_09_regression_recovery():
    coef = np.array([0.8, -2.5, 0.35, -1.4, 3.1])
    noisy = regress(_synthetic_table(coef, 1e-3), FC_FEATURES)
    w = np.array(noisy.weights)
    signs_ok = bool((np.sign(w) == np.sign(coef)).all())
    order_ok = list(np.argsort(-np.abs(w))) == list(np.argsort(-np.abs(coef)))
    exact = regress(_synthetic_table(coef, 0.0), FC_FEATURES)
    exact_err = float(np.max(np.abs(np.array(exact.weights) - coef)))
    ok = signs_ok and order_ok and exact_err < 1e-8
    assert report(9, ok, f"noisy signs={signs_ok} ordering={order_ok}; exact max error {exact_err:.2e}")


def _monotone_violations(rows, axis, pins):
    groups: dict[tuple, list] = {}
    for r in rows:
        key = tuple(r.feature(f) for f in pins)
        groups.setdefault(key, []).append(r)
    bad = 0
    for group in groups.values():
        ok_rows = sorted((r for r in group if r.status == OK), key=lambda r: r.feature(axis))
        vals = [r.flops_utilization for r in ok_rows]
        bad += sum(b < a * (1 - 1e-12) for a, b in zip(vals, vals[1:]))
    return bad


def test_criterion_10_estimator_anchors(fc_tpu_record):
    rows = list(fc_tpu_record.table)
    by_batch = _monotone_violations(rows, "batch", ["layer", "node", "input", "output"])
    by_node = _monotone_violations(rows, "node", ["layer", "input", "output", "batch"])
    rep = regress(rows, FC_FEATURES)
    top = rep.ranked()[:2]
    ranking_ok = {f for f, _ in top} == {"batch", "node"} and all(w > 0 for _, w in top)
    ok = by_batch == 0 and by_node == 0 and ranking_ok
    ranked = ", ".join(f"{f}={w:+.3f}" for f, w in rep.ranked())
    assert report(10, ok, f"monotonicity violations batch={by_batch} node={by_node}; weights {ranked}")


def test_criterion_11_harness_determinism(tmp_path, fc_tpu_record):
    t0 = time.perf_counter()
    record = run_sweep(SweepConfig(family="fc", platforms=["tpu-v2"]))
    a = write_results(record.table, tmp_path / "a.csv")
    elapsed = time.perf_counter() - t0
    b = write_results(fc_tpu_record.table, tmp_path / "b.csv")
    identical = a.read_bytes() == b.read_bytes()
    back = read_results(a)
    c = write_results(back, tmp_path / "c.csv")
    fixed_point = c.read_bytes() == a.read_bytes() and back == record.table
    ok = identical and fixed_point and elapsed < 30 and len(record.table) == 9720
    assert report(11, ok, f"byte-identical={identical} round-trip fixed point={fixed_point}; "
                          f"{len(record.table)} rows in {elapsed:.1f} s")
