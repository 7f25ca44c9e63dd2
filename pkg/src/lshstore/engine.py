"""Storage-backed query engine: increasing-radius top-k search over the
on-storage index with asynchronous, interleaved bucket fetches.

Execution model: a batch runs workers * interleave cooperative query slots.
A query entering a radius hashes itself for all L tables (compute, charged
to the backend clock), bursts out the L table-slot reads, and only after all
slots have arrived walks the chains strictly in table order with exactly one
block read in flight. That discipline makes the issued I/Os equal the
sequential trace by construction and keeps results independent of the
concurrency setting; interleaving exists to keep the device queue full.

Results are exactly those of the in-memory reference path: same candidate
order, same S budget, same stop rule, same tie-breaking.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import blocks as blk
from .core import gen_projections, compound_keys, MIXING_RULE_ID, GAUSSIAN_RULE_ID
from .manifest import (
    read_manifest, sha256_bytes, IndexManifest,
    MANIFEST_NAME, TABLES_NAME, BUCKETS_NAME,
)
from .reference import _TopK, QueryResult, QueryStats, RcnnReport, point_distances
from .storage import (
    StorageBackend, MemoryBackend, FileBackend, SimBackend, SimConfig,
    ReadRequest, StorageError, DEFAULT_QUEUE_CAPACITY,
)


class EngineError(RuntimeError):
    pass


class IndexCorruptionError(EngineError):
    pass


@dataclass
class Index:
    """An opened index: manifest, DRAM-resident dataset, storage backend,
    and per-(radius, table) projection cache."""

    manifest: IndexManifest
    data: np.ndarray
    backend: StorageBackend

    def __post_init__(self):
        m = self.manifest
        if m.mixing_rule != MIXING_RULE_ID or m.gaussian_rule != GAUSSIAN_RULE_ID:
            raise EngineError(
                f"index was built with rules ({m.mixing_rule}, {m.gaussian_rule}), "
                f"this engine implements ({MIXING_RULE_ID}, {GAUSSIAN_RULE_ID})"
            )
        params = m.params
        if self.data.shape != (params.n, params.d):
            raise EngineError(
                f"dataset shape {self.data.shape} does not match index ({params.n}, {params.d})"
            )
        # One (a, b) pair per (radius, table), generated once and shared by
        # every query.
        self._proj = [
            [gen_projections(params, ridx, l) for l in range(params.L)]
            for ridx in range(params.r)
        ]

    @property
    def params(self):
        return self.manifest.params

    def query_keys(self, q: np.ndarray, ridx: int) -> np.ndarray:
        """32-bit compound keys of one query at one radius, one per table.

        Hashes row-at-a-time through the same code path as the reference
        engine so bucket assignment is bit-identical.
        """
        params = self.params
        radius = params.radii[ridx]
        row = q[None, :]
        out = np.empty(params.L, dtype=np.uint32)
        for l in range(params.L):
            a, b = self._proj[ridx][l]
            out[l] = compound_keys(row, a, b, params.w, radius, params.seed)[0]
        return out

    def close(self):
        self.backend.close()


def open_index(index_dir, data: np.ndarray, backend: str = "memory",
               sim_config: SimConfig | None = None,
               queue_capacity: int = DEFAULT_QUEUE_CAPACITY,
               check_dataset: bool = True) -> Index:
    """Open an index directory against its DRAM-resident dataset.

    backend: "memory" loads both files into RAM; "file" serves reads with
    positioned file reads; "sim" loads into RAM behind the simulated-latency
    device. The device address space is buckets.bin at offset 0 with
    tables.bin following, exactly as the manifest records.
    """
    index_dir = Path(index_dir)
    m = read_manifest(index_dir / MANIFEST_NAME)
    x = np.ascontiguousarray(data, dtype=np.float32)
    if check_dataset and sha256_bytes(x.tobytes()) != m.dataset_sha256:
        raise EngineError("dataset does not match the index (checksum mismatch)")
    buckets_path = index_dir / BUCKETS_NAME
    tables_path = index_dir / TABLES_NAME
    for path, want in ((buckets_path, m.buckets_length), (tables_path, m.tables_length)):
        have = path.stat().st_size
        if have != want:
            raise EngineError(f"{path.name} is {have} bytes, manifest says {want}")
    if backend == "file":
        be = FileBackend([buckets_path, tables_path], queue_capacity)
    elif backend in ("memory", "sim"):
        buffers = [np.fromfile(buckets_path, dtype=np.uint8),
                   np.fromfile(tables_path, dtype=np.uint8)]
        if backend == "memory":
            be = MemoryBackend(buffers, queue_capacity)
        else:
            be = SimBackend(buffers, sim_config or SimConfig(), queue_capacity)
    else:
        raise EngineError(f"unknown backend {backend!r}")
    return Index(manifest=m, data=x, backend=be)


def open_index_buffers(m: IndexManifest, data: np.ndarray, buckets, tables,
                       backend: str = "memory", sim_config: SimConfig | None = None,
                       queue_capacity: int = DEFAULT_QUEUE_CAPACITY) -> Index:
    """Open an index straight from in-memory build output."""
    x = np.ascontiguousarray(data, dtype=np.float32)
    if backend == "memory":
        be = MemoryBackend([buckets, tables], queue_capacity)
    elif backend == "sim":
        be = SimBackend([buckets, tables], sim_config or SimConfig(), queue_capacity)
    else:
        raise EngineError(f"unknown backend {backend!r} for buffer-backed index")
    return Index(manifest=m, data=x, backend=be)


# Query slot phases.
_TABLES = 0
_BLOCKS = 1
_FINISHED = 2


class _QuerySlot:
    """State machine for one in-flight query."""

    __slots__ = (
        "qi", "q", "k", "pool", "stats", "ridx", "keys", "heads",
        "tables_sent", "tables_seen", "walk_l", "cur_addr", "block_pending",
        "phase", "room", "result", "error", "start_ns",
    )

    def __init__(self, qi: int, q: np.ndarray, k: int, start_ns: int):
        self.qi = qi
        self.q = q
        self.k = k
        self.pool = _TopK()
        self.stats = QueryStats()
        self.ridx = -1
        self.keys = None
        self.heads = None
        self.tables_sent = 0
        self.tables_seen = 0
        self.walk_l = 0
        self.cur_addr = None
        self.block_pending = False
        self.phase = _TABLES
        self.room = 0
        self.result = None
        self.error = None
        self.start_ns = start_ns


class _BatchRunner:
    def __init__(self, index: Index, queries: np.ndarray, k: int,
                 workers: int, interleave: int, fixed_radius: int | None = None):
        if workers < 1 or interleave < 1:
            raise EngineError(f"workers and interleave must be >= 1, got ({workers}, {interleave})")
        if k < 1:
            raise EngineError(f"k must be >= 1, got {k}")
        self.index = index
        self.backend = index.backend
        self.params = index.params
        self.u = index.manifest.u
        self.queries = np.ascontiguousarray(queries, dtype=np.float32)
        self.k = k
        self.slots = workers * interleave
        # fixed_radius runs exactly one schedule entry per query: the
        # standalone fixed-radius search mode.
        self.fixed_radius = fixed_radius
        self.results: list = [None] * len(self.queries)
        self.next_q = 0
        self.active: list = []
        self.tickets: dict = {}
        self.ticket_seq = 0

    # -- compute charging ----------------------------------------------------
    def _charge(self, t0: int, slot: _QuerySlot) -> None:
        dt = time.perf_counter_ns() - t0
        slot.stats.compute_ns += dt
        self.backend.charge_ns(dt)

    # -- radius lifecycle ----------------------------------------------------
    def _enter_radius(self, slot: _QuerySlot, ridx: int) -> None:
        t0 = time.perf_counter_ns()
        slot.ridx = ridx
        slot.keys = self.index.query_keys(slot.q, ridx)
        slot.heads = [None] * self.params.L
        slot.tables_sent = 0
        slot.tables_seen = 0
        slot.walk_l = 0
        slot.cur_addr = None
        slot.block_pending = False
        slot.room = self.params.S
        slot.phase = _TABLES
        self._charge(t0, slot)

    def _finish(self, slot: _QuerySlot) -> None:
        ids, dists = slot.pool.topk(self.k)
        slot.stats.turnaround_ns = self.backend.now_ns() - slot.start_ns
        slot.result = QueryResult(ids=ids, distances=dists,
                                  partial=len(ids) < self.k, stats=slot.stats)
        slot.phase = _FINISHED

    def _fail(self, slot: _QuerySlot, err: Exception) -> None:
        slot.stats.turnaround_ns = self.backend.now_ns() - slot.start_ns
        slot.error = err
        slot.phase = _FINISHED

    def _end_radius(self, slot: _QuerySlot) -> None:
        params = self.params
        slot.stats.table_reads += params.L
        slot.stats.radii_searched += 1
        if self.fixed_radius is not None:
            self._finish(slot)
            return
        limit = params.c * params.radii[slot.ridx]
        if slot.pool.in_range_count(self.k, limit) >= self.k:
            self._finish(slot)
        elif slot.ridx + 1 < params.r:
            self._enter_radius(slot, slot.ridx + 1)
        else:
            self._finish(slot)

    # -- issuance ------------------------------------------------------------
    def _submit(self, slot: _QuerySlot, kind: str, payload, address: int) -> bool:
        ticket = self.ticket_seq
        req = ReadRequest(address=address, length=blk.BLOCK_SIZE, ticket=ticket)
        if not self.backend.submit_read(req):
            return False  # backpressure: retry on a later pump
        self.ticket_seq += 1
        self.tickets[ticket] = (slot, kind, payload)
        return True

    def _pump(self, slot: _QuerySlot) -> bool:
        """Issue whatever this slot may issue now. True if anything moved."""
        if slot.phase == _FINISHED:
            return False
        moved = False
        params = self.params
        if slot.phase == _TABLES:
            m = self.index.manifest
            while slot.tables_sent < params.L:
                l = slot.tables_sent
                key = int(slot.keys[l] >> np.uint32(blk.V_BITS - self.u))
                slot_addr = m.table_offset(slot.ridx, l) + key * 8
                base = (slot_addr // blk.BLOCK_SIZE) * blk.BLOCK_SIZE
                if not self._submit(slot, "table", (l, slot_addr - base), base):
                    return moved
                slot.tables_sent += 1
                moved = True
            return moved
        # _BLOCKS: one read in flight at a time, chains in table order.
        if slot.block_pending:
            return False
        while True:
            if slot.room <= 0:
                self._end_radius(slot)
                return True
            if slot.cur_addr is None:
                while slot.walk_l < params.L and slot.heads[slot.walk_l] is None:
                    slot.walk_l += 1  # empty table slot: zero block I/Os
                if slot.walk_l >= params.L:
                    self._end_radius(slot)
                    return True
                slot.cur_addr = slot.heads[slot.walk_l]
                slot.walk_l += 1
            if self._submit(slot, "block", None, slot.cur_addr):
                slot.block_pending = True
                return True
            return moved

    # -- completion handling ---------------------------------------------------
    def _on_table(self, slot: _QuerySlot, payload, data: np.ndarray) -> None:
        l, within = payload
        addr = int.from_bytes(data[within:within + 8].tobytes(), "little")
        slot.heads[l] = None if addr == blk.SENTINEL else addr
        slot.tables_seen += 1
        if slot.tables_seen == self.params.L:
            slot.phase = _BLOCKS

    def _on_block(self, slot: _QuerySlot, data: np.ndarray) -> None:
        t0 = time.perf_counter_ns()
        params = self.params
        slot.block_pending = False
        slot.stats.block_reads += 1
        next_addr, ids, fps = blk.decode_block_entries(data, params.n, self.u)
        if np.any(ids >= params.n):
            raise IndexCorruptionError(
                f"query {slot.qi}: object id out of range in block"
            )
        l = slot.walk_l - 1
        expected_fp = int(slot.keys[l] & np.uint32((1 << (blk.V_BITS - self.u)) - 1))
        accept = np.nonzero(fps == expected_fp)[0]
        if len(accept) > slot.room:
            accept = accept[:slot.room]
        if len(accept):
            cand = ids[accept]
            dists = point_distances(self.index.data, cand, slot.q)
            slot.pool.offer(cand, dists)
            slot.room -= len(accept)
            slot.stats.candidates += len(accept)
        slot.cur_addr = None if next_addr == blk.SENTINEL else next_addr
        self._charge(t0, slot)

    # -- main loop -------------------------------------------------------------
    def run(self):
        backend = self.backend
        nq = len(self.queries)
        batch_start = backend.now_ns()
        while self.active or self.next_q < nq:
            moved = False
            while len(self.active) < self.slots and self.next_q < nq:
                slot = _QuerySlot(self.next_q, self.queries[self.next_q],
                                  self.k, backend.now_ns())
                self.next_q += 1
                self.active.append(slot)
                first = 0 if self.fixed_radius is None else self.fixed_radius
                self._enter_radius(slot, first)
                moved = True
            for slot in self.active:
                try:
                    if self._pump(slot):
                        moved = True
                except (StorageError, blk.FormatError, EngineError) as e:
                    self._fail(slot, e)
                    moved = True
            for ticket, data in backend.poll_completions(0):
                slot, kind, payload = self.tickets.pop(ticket)
                if slot.phase == _FINISHED:
                    continue  # stale read of a failed query; drop it
                try:
                    if kind == "table":
                        self._on_table(slot, payload, data)
                    else:
                        self._on_block(slot, data)
                except (StorageError, blk.FormatError, EngineError) as e:
                    self._fail(slot, e)
                moved = True
            finished = [s for s in self.active if s.phase == _FINISHED]
            for slot in finished:
                self.results[slot.qi] = slot.result if slot.error is None else slot.error
            self.active = [s for s in self.active if s.phase != _FINISHED]
            if not moved and self.active:
                backend.wait()
        return batch_start, backend.now_ns()


@dataclass
class BatchResult:
    """Per-query results plus batch aggregates. results[i] is a QueryResult,
    or the exception that query raised (errors are isolated per query)."""

    results: list
    workers: int
    interleave: int
    elapsed_ns: int
    mean_query_ns: float
    mean_turnaround_ns: float
    mean_n_io: float
    mean_table_reads: float
    mean_block_reads: float
    mean_radii: float
    mean_candidates: float
    mean_compute_ns: float
    io_stats: object = None

    @property
    def ok(self) -> bool:
        return all(isinstance(r, QueryResult) for r in self.results)


def run_batch(index: Index, queries: np.ndarray, k: int,
              workers: int = 1, interleave: int = 1) -> BatchResult:
    """Run a query batch. Results are identical for every (workers,
    interleave) setting; concurrency only changes timing."""
    runner = _BatchRunner(index, queries, k, workers, interleave)
    t0, t1 = runner.run()
    good = [r.stats for r in runner.results if isinstance(r, QueryResult)]
    n = max(1, len(good))
    return BatchResult(
        results=runner.results,
        workers=workers,
        interleave=interleave,
        elapsed_ns=t1 - t0,
        mean_query_ns=(t1 - t0) / max(1, len(runner.results)),
        mean_turnaround_ns=sum(s.turnaround_ns for s in good) / n,
        mean_n_io=sum(s.n_io for s in good) / n,
        mean_table_reads=sum(s.table_reads for s in good) / n,
        mean_block_reads=sum(s.block_reads for s in good) / n,
        mean_radii=sum(s.radii_searched for s in good) / n,
        mean_candidates=sum(s.candidates for s in good) / n,
        mean_compute_ns=sum(s.compute_ns for s in good) / n,
        io_stats=index.backend.stats(),
    )


def ann_query(index: Index, q: np.ndarray, k: int) -> QueryResult:
    """Single top-k query over the storage path."""
    batch = run_batch(index, np.asarray(q, dtype=np.float32)[None, :], k)
    result = batch.results[0]
    if isinstance(result, Exception):
        raise result
    return result


def rcnn_search(index: Index, q: np.ndarray, radius_index: int) -> RcnnReport:
    """Single fixed-radius search over the storage path: full S budget,
    reports the nearest in-range object among the examined candidates (any
    in-range candidate satisfies the contract; nearest is our fixed choice)."""
    params = index.params
    if not 0 <= radius_index < params.r:
        raise EngineError(f"radius index {radius_index} outside schedule of {params.r}")
    runner = _BatchRunner(index, np.asarray(q, dtype=np.float32)[None, :], 1, 1, 1,
                          fixed_radius=radius_index)
    runner.run()
    result = runner.results[0]
    if isinstance(result, Exception):
        raise result
    limit = params.c * params.radii[radius_index]
    hit = None
    if len(result.ids) and result.distances[0] <= limit:
        hit = (int(result.ids[0]), float(result.distances[0]))
    return RcnnReport(found=hit, candidates_seen=result.stats.candidates,
                      table_reads=result.stats.table_reads,
                      block_reads=result.stats.block_reads)
