"""Benchmark grids over built indexes.

Two sweep shapes:

  accuracy grid   one dataset, a (w, gamma) x k x (backend, workers,
                  interleave) grid. Each cell builds (or reuses) an index,
                  runs the batch engine, scores against exact ground
                  truth, and reports accuracy plus I/O and timing
                  aggregates. Cell failures are recorded and the grid
                  continues.
  scaling sweep   uniform datasets of growing n at fixed (c, w, gamma),
                  reporting mean reads per query so the growth exponent
                  can be read off a log-log fit.

Every aggregate written to the cell CSV is backed by per-query records
in the JSONL file next to it.

At large n the materialized index no longer fits in memory, so the
scaling sweep switches to the streaming evaluator, which computes the
same results and the same read counts without building the index; the
small-n rows run both paths and assert the counts agree.
"""

from __future__ import annotations

import csv
import json
import traceback
from dataclasses import dataclass, field, fields

import numpy as np

from .builder import build_index_in_memory
from .core import compute_params
from .data import brute_force_topk_batch, generate_uniform, overall_ratio
from .engine import open_index_buffers, run_batch
from .reference import QueryResult, reference_batch
from .storage import DEFAULT_QUEUE_CAPACITY, SimConfig

DEFAULT_SCALING_ENGINE_LIMIT = 30_000


@dataclass(frozen=True)
class CellSpec:
    """One accuracy-grid point."""

    w: float
    gamma: float
    k: int
    backend: str
    workers: int
    interleave: int

    def label(self) -> str:
        return (f"w={self.w:g} g={self.gamma:g} k={self.k} "
                f"{self.backend} W={self.workers} Q={self.interleave}")


@dataclass
class CellResult:
    """Aggregates for one grid cell; raw per-query rows live in the JSONL."""

    cell: int
    spec: CellSpec
    n: int = 0
    d: int = 0
    c: float = 0.0
    seed: int = 0
    m: int = 0
    L: int = 0
    S: int = 0
    r: int = 0
    ratio: float = float("nan")
    partial_count: int = 0
    zero_mismatches: int = 0
    failed_queries: int = 0
    mean_radii: float = float("nan")
    mean_n_io: float = float("nan")
    mean_table_reads: float = float("nan")
    mean_block_reads: float = float("nan")
    mean_candidates: float = float("nan")
    mean_query_ns: float = float("nan")
    mean_turnaround_ns: float = float("nan")
    p95_turnaround_ns: float = float("nan")
    mean_compute_ns: float = float("nan")
    elapsed_ns: int = 0
    error: str = ""


def _cell_row(result: CellResult) -> dict:
    row = {"cell": result.cell}
    for f in fields(CellSpec):
        row[f.name] = getattr(result.spec, f.name)
    for f in fields(CellResult):
        if f.name in ("cell", "spec"):
            continue
        row[f.name] = getattr(result, f.name)
    return row


def run_accuracy_grid(data, queries, *, c: float = 2.0, seed: int = 1,
                      x_max: float | None = None,
                      w_values=(4.0,), gamma_values=(1.0,), k_values=(1,),
                      backends=("memory",), concurrency=((1, 1),),
                      sim_config: SimConfig | None = None,
                      queue_capacity: int = DEFAULT_QUEUE_CAPACITY):
    """Run the full grid. Returns (cells, per_query_records).

    Indexes are built once per (w, gamma) and shared across the inner
    (k, backend, concurrency) cells. Ground truth is computed once for
    the largest k.
    """
    data = np.ascontiguousarray(data, dtype=np.float32)
    queries = np.ascontiguousarray(queries, dtype=np.float32)
    k_max = max(k_values)
    truth_ids, truth_dists = brute_force_topk_batch(data, queries, k_max)
    del truth_ids

    cells: list[CellResult] = []
    records: list[dict] = []
    cell_id = 0
    for w in w_values:
        for gamma in gamma_values:
            try:
                built = build_index_in_memory(data, c, w, gamma, seed, x_max)
            except Exception as exc:
                built = None
                build_error = f"build failed: {exc!r}"
            for k in k_values:
                for backend in backends:
                    for workers, interleave in concurrency:
                        spec = CellSpec(w=w, gamma=gamma, k=k, backend=backend,
                                        workers=workers, interleave=interleave)
                        result = CellResult(cell=cell_id, spec=spec,
                                            n=data.shape[0], d=data.shape[1],
                                            c=c, seed=seed)
                        cells.append(result)
                        cell_id += 1
                        if built is None:
                            result.error = build_error
                            continue
                        try:
                            _run_cell(result, built, data, queries,
                                      truth_dists, sim_config, queue_capacity,
                                      records)
                        except Exception:
                            result.error = traceback.format_exc(limit=3)
    return cells, records


def _run_cell(result: CellResult, built, data, queries, truth_dists,
              sim_config, queue_capacity, records) -> None:
    manifest, buckets, tables = built
    spec = result.spec
    params = manifest.params
    result.m, result.L, result.S, result.r = params.m, params.L, params.S, params.r
    index = open_index_buffers(manifest, data, buckets, tables,
                               backend=spec.backend, sim_config=sim_config,
                               queue_capacity=queue_capacity)
    try:
        batch = run_batch(index, queries, spec.k,
                          workers=spec.workers, interleave=spec.interleave)
    finally:
        index.close()

    ratios = []
    turnarounds = []
    for qi, res in enumerate(batch.results):
        record = {"cell": result.cell, "query": qi}
        if isinstance(res, QueryResult):
            score = overall_ratio(res.distances, truth_dists[qi], spec.k)
            ratios.append(score.ratio)
            result.partial_count += int(score.partial)
            result.zero_mismatches += score.zero_mismatches
            turnarounds.append(res.stats.turnaround_ns)
            record.update(
                ratio=score.ratio, partial=score.partial,
                n_io=res.stats.n_io, table_reads=res.stats.table_reads,
                block_reads=res.stats.block_reads,
                radii=res.stats.radii_searched,
                candidates=res.stats.candidates,
                compute_ns=res.stats.compute_ns,
                turnaround_ns=res.stats.turnaround_ns,
                ids=[int(x) for x in res.ids],
                distances=[float(x) for x in res.distances],
            )
        else:
            result.failed_queries += 1
            record["error"] = repr(res)
        records.append(record)

    if ratios:
        result.ratio = float(np.mean(ratios))
    if turnarounds:
        result.p95_turnaround_ns = float(np.percentile(turnarounds, 95))
    result.mean_radii = batch.mean_radii
    result.mean_n_io = batch.mean_n_io
    result.mean_table_reads = batch.mean_table_reads
    result.mean_block_reads = batch.mean_block_reads
    result.mean_candidates = batch.mean_candidates
    result.mean_query_ns = batch.mean_query_ns
    result.mean_turnaround_ns = batch.mean_turnaround_ns
    result.mean_compute_ns = batch.mean_compute_ns
    result.elapsed_ns = batch.elapsed_ns
    if result.failed_queries:
        result.error = f"{result.failed_queries} queries failed"


@dataclass
class ScaleRow:
    """One scaling-sweep point."""

    n: int
    d: int
    c: float
    w: float
    gamma: float
    k: int
    executor: str
    m: int = 0
    L: int = 0
    r: int = 0
    mean_n_io: float = float("nan")
    mean_table_reads: float = float("nan")
    mean_block_reads: float = float("nan")
    mean_radii: float = float("nan")
    cross_checked: bool = False
    error: str = ""
    per_query_n_io: list = field(default_factory=list)


def scaling_sweep(ns, d: int, *, c: float = 2.0, w: float = 4.0,
                  gamma: float = 1.0, seed: int = 1, k: int = 1,
                  n_queries: int = 100,
                  engine_limit: int = DEFAULT_SCALING_ENGINE_LIMIT):
    """Mean reads per query at each n, fixed (c, w, gamma).

    Points with n <= engine_limit build the index and run the storage
    engine, then recompute the batch with the streaming evaluator and
    require identical read counts. Larger points run only the streaming
    evaluator (the materialized index would not fit in memory); its
    counts are the ones the engine is held to at the checked sizes.
    """
    rows: list[ScaleRow] = []
    for n in ns:
        n = int(n)
        row = ScaleRow(n=n, d=d, c=c, w=w, gamma=gamma, k=k, executor="")
        rows.append(row)
        try:
            data, queries = generate_uniform(n, d, seed, n_queries)
            if n <= engine_limit:
                row.executor = "engine"
                manifest, buckets, tables = build_index_in_memory(
                    data, c, w, gamma, seed)
                params = manifest.params
                index = open_index_buffers(manifest, data, buckets, tables)
                try:
                    batch = run_batch(index, queries, k)
                finally:
                    index.close()
                results = batch.results
                bad = [r for r in results if not isinstance(r, QueryResult)]
                if bad:
                    raise bad[0]
                ref = reference_batch(data, params, queries, k)
                engine_io = [r.stats.n_io for r in results]
                ref_io = [r.stats.n_io for r in ref]
                if engine_io != ref_io:
                    raise RuntimeError(
                        f"n={n}: engine read counts diverge from the "
                        f"streaming evaluator")
                row.cross_checked = True
            else:
                row.executor = "streaming"
                params = compute_params(
                    n=n, d=d, c=c, w=w, gamma=gamma,
                    x_max=float(np.max(np.abs(data))), seed=seed)
                results = reference_batch(data, params, queries, k)
            stats = [r.stats for r in results]
            row.m, row.L, row.r = params.m, params.L, params.r
            row.per_query_n_io = [s.n_io for s in stats]
            row.mean_n_io = float(np.mean(row.per_query_n_io))
            row.mean_table_reads = float(np.mean([s.table_reads for s in stats]))
            row.mean_block_reads = float(np.mean([s.block_reads for s in stats]))
            row.mean_radii = float(np.mean([s.radii_searched for s in stats]))
        except Exception:
            row.error = traceback.format_exc(limit=3)
    return rows


def fit_loglog_slope(ns, values) -> float:
    """Least-squares slope of log(values) against log(ns)."""
    ns = np.asarray(ns, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if len(ns) < 2 or np.any(ns <= 0) or np.any(values <= 0):
        raise ValueError("need >= 2 positive points for a log-log fit")
    slope, _ = np.polyfit(np.log(ns), np.log(values), 1)
    return float(slope)


def write_cells_csv(path, cells) -> None:
    rows = [_cell_row(c) for c in cells]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def write_scaling_csv(path, rows) -> None:
    cols = [f.name for f in fields(ScaleRow) if f.name != "per_query_n_io"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: getattr(row, c) for c in cols})


def write_records_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


def write_scaling_records_jsonl(path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            for qi, n_io in enumerate(row.per_query_n_io):
                fh.write(json.dumps({"n": row.n, "query": qi, "n_io": n_io}) + "\n")
