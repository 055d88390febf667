"""Training-time benchmark: cluster sweep x worker counts, speedup vs one worker."""

from __future__ import annotations

import csv
import io
import statistics
import time
import warnings
from dataclasses import astuple, dataclass, fields, replace
from typing import Iterable, Sequence

from ._parallel import resolve_workers
from .kmeans import KMeansConfig, fit
from .store import as_matrix


@dataclass(frozen=True)
class BenchRecord:
    dataset: str
    k: int
    worker_count: int
    wall_time_s: float
    iterations: int
    distance_evals: int


@dataclass(frozen=True)
class SpeedupRow:
    dataset: str
    worker_count: int
    speedup: float
    n_k: int


def geomean(values: Iterable[float]) -> float:
    values = list(values)
    if not values or any(v <= 0 for v in values):
        raise ValueError("geometric mean needs a non-empty list of positive values")
    return statistics.geometric_mean(values)


def run_bench(
    store,
    dataset: str,
    k_values: Sequence[int],
    worker_counts: Sequence[int],
    reps: int = 3,
    base: KMeansConfig = KMeansConfig(k=1),
    clock=time.perf_counter,
) -> list[BenchRecord]:
    """Median wall time of ``reps`` fits for every (k, worker_count) pair."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    matrix = as_matrix(store)
    records = []
    for workers in worker_counts:
        concrete = resolve_workers(workers)
        for k in k_values:
            config = replace(base, k=k)
            times = []
            for _ in range(reps):
                t0 = clock()
                model = fit(matrix, config, workers=concrete)
                # guard against coarse clocks reporting a zero duration
                times.append(max(clock() - t0, 1e-9))
            records.append(BenchRecord(
                dataset=dataset,
                k=k,
                worker_count=concrete,
                wall_time_s=statistics.median(times),
                iterations=model.iterations_run,
                distance_evals=model.distance_evals,
            ))
    return records


def speedup_table(records: Sequence[BenchRecord], baseline_workers: int = 1) -> list[SpeedupRow]:
    """Per (dataset, worker_count): geometric mean over k of baseline_time / time."""
    base = {(r.dataset, r.k): r.wall_time_s for r in records if r.worker_count == baseline_workers}
    groups: dict = {}
    for r in records:
        if (r.dataset, r.k) not in base:
            continue
        groups.setdefault((r.dataset, r.worker_count), []).append(base[(r.dataset, r.k)] / r.wall_time_s)
    return [
        SpeedupRow(dataset, workers, geomean(ratios), len(ratios))
        for (dataset, workers), ratios in sorted(groups.items())
    ]


def check_scaling(records: Sequence[BenchRecord], cores: int) -> bool:
    """Soft check: more workers should not be slower. Warns instead of failing."""
    if cores < 4:
        return True
    ok = True
    for row in speedup_table(records):
        if row.worker_count > 1 and row.speedup < 1.0:
            warnings.warn(
                f"{row.dataset}: {row.worker_count} workers ran slower than 1 (speedup {row.speedup:.3f})",
                RuntimeWarning,
                stacklevel=2,
            )
            ok = False
    return ok


def records_csv(records: Sequence[BenchRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f.name for f in fields(BenchRecord)])
    for r in records:
        writer.writerow(astuple(r))
    return buf.getvalue()


def speedups_csv(rows: Sequence[SpeedupRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f.name for f in fields(SpeedupRow)])
    for r in rows:
        writer.writerow(astuple(r))
    return buf.getvalue()


def format_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    cells = [list(map(str, header))] + [
        [f"{v:.6f}" if isinstance(v, float) else str(v) for v in row] for row in rows
    ]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
