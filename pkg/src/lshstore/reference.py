"""In-memory reference query engine with semantics identical to the
storage-backed path, plus a streaming batch mode for large datasets.

This module is the behavioral ground truth: the storage engine must return
exactly its results, and its I/O counts define the trace oracle the storage
engine's accounting is checked against. Candidate order is fully pinned
down: tables in index order, entries in dataset order within a bucket, the
per-radius examination budget S counting only fingerprint-accepted entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import blocks as blk
from .core import ParamSet, gen_projections, compound_keys


@dataclass(frozen=True)
class RcnnReport:
    """Outcome of one fixed-radius search: found is (object_id, distance)
    with distance <= c*R, or None."""

    found: tuple | None
    candidates_seen: int
    table_reads: int
    block_reads: int

    @property
    def n_io(self) -> int:
        return self.table_reads + self.block_reads


@dataclass
class QueryStats:
    table_reads: int = 0
    block_reads: int = 0
    radii_searched: int = 0
    candidates: int = 0
    compute_ns: int = 0
    turnaround_ns: int = 0

    @property
    def n_io(self) -> int:
        return self.table_reads + self.block_reads


@dataclass
class QueryResult:
    """Top-k answer: ids and distances ascending, ties broken by id.
    partial means the radius schedule ran out before k in-range results."""

    ids: np.ndarray
    distances: np.ndarray
    partial: bool
    stats: QueryStats = field(default_factory=QueryStats)


def point_distances(data: np.ndarray, ids: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Exact Euclidean distances from q to data[ids], in float64.

    Both engines and the brute-force oracle funnel through here so their
    distance values are bit-identical.
    """
    diff = data[ids].astype(np.float64) - q.astype(np.float64)
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


class _TopK:
    """Global candidate pool for one query: keeps min distance per id and
    extracts the k best by (distance, id)."""

    def __init__(self):
        self.best: dict = {}

    def offer(self, ids, dists):
        best = self.best
        for i, dist in zip(ids.tolist(), dists.tolist()):
            old = best.get(i)
            if old is None or dist < old:
                best[i] = dist

    def topk(self, k: int):
        items = sorted(self.best.items(), key=lambda e: (e[1], e[0]))[:k]
        ids = np.array([i for i, _ in items], dtype=np.int64)
        dists = np.array([d for _, d in items], dtype=np.float64)
        return ids, dists

    def in_range_count(self, k: int, limit: float) -> int:
        # Equals the in-range count within the k best: the k best are the k
        # smallest, so capping the total in-range count at k is exact.
        if not self.best:
            return 0
        d = np.fromiter(self.best.values(), dtype=np.float64, count=len(self.best))
        return min(k, int(np.count_nonzero(d <= limit)))


class ReferenceIndex:
    """Fully resident reference index: per (radius, table), entries sorted
    by table key with dataset order preserved inside each bucket, exactly
    mirroring the on-storage chain layout."""

    def __init__(self, data: np.ndarray, params: ParamSet):
        self.data = np.ascontiguousarray(data, dtype=np.float32)
        self.params = params
        self.u = blk.table_key_width(params.n)
        blk.check_entry_widths(params.n, self.u)
        self._tables = []
        self._proj = []
        for ridx, radius in enumerate(params.radii):
            per_radius = []
            proj_radius = []
            for l in range(params.L):
                a, b = gen_projections(params, ridx, l)
                proj_radius.append((a, b))
                h32 = compound_keys(self.data, a, b, params.w, radius, params.seed)
                ukeys, _ = blk.split_hash_batch(h32, self.u)
                order = np.argsort(ukeys, kind="stable")
                per_radius.append((ukeys[order], h32[order], order.astype(np.int64)))
            self._tables.append(per_radius)
            self._proj.append(proj_radius)

    def _query_hashes(self, q: np.ndarray, ridx: int):
        params = self.params
        radius = params.radii[ridx]
        h32 = np.empty(params.L, dtype=np.uint32)
        for l in range(params.L):
            a, b = self._proj[ridx][l]
            h32[l] = compound_keys(q[None, :], a, b, params.w, radius, params.seed)[0]
        return h32

    def _radius_pass(self, q: np.ndarray, ridx: int, pool: _TopK):
        """One fixed-radius candidate sweep feeding the pool. Returns
        (candidates examined, block reads). Table reads are always L."""
        params = self.params
        q = np.asarray(q, dtype=np.float32)
        h32_q = self._query_hashes(q, ridx)
        ukeys_q = (h32_q >> np.uint32(blk.V_BITS - self.u)).astype(np.uint32)
        cap = params.S
        examined = 0
        block_reads = 0
        for l in range(params.L):
            if examined >= cap:
                break
            sorted_keys, sorted_h32, sorted_ids = self._tables[ridx][l]
            lo = np.searchsorted(sorted_keys, ukeys_q[l], side="left")
            hi = np.searchsorted(sorted_keys, ukeys_q[l], side="right")
            if lo == hi:
                continue  # empty table slot: no block read
            bucket_h32 = sorted_h32[lo:hi]
            accept = np.nonzero(bucket_h32 == h32_q[l])[0]
            room = cap - examined
            if len(accept) > room:
                accept = accept[:room]
            if len(accept):
                # The S-th acceptance ends the walk mid-chain; later blocks
                # of this chain and later tables are never read.
                last_pos = int(accept[-1])
                if len(accept) == room:
                    block_reads += last_pos // blk.ENTRIES_PER_BLOCK + 1
                else:
                    block_reads += int(np.ceil((hi - lo) / blk.ENTRIES_PER_BLOCK))
                ids = sorted_ids[lo:hi][accept]
                dists = point_distances(self.data, ids, q)
                examined += len(accept)
                pool.offer(ids, dists)
            else:
                block_reads += int(np.ceil((hi - lo) / blk.ENTRIES_PER_BLOCK))
        return examined, block_reads

    def rcnn_search(self, q, radius_index: int) -> RcnnReport:
        """Single fixed-radius search: full S budget, reports the nearest
        in-range object among the examined candidates (any in-range object
        satisfies the contract; nearest is our fixed choice)."""
        pool = _TopK()
        examined, block_reads = self._radius_pass(np.asarray(q), radius_index, pool)
        ids, dists = pool.topk(1)
        limit = self.params.c * self.params.radii[radius_index]
        hit = None
        if len(ids) and dists[0] <= limit:
            hit = (int(ids[0]), float(dists[0]))
        return RcnnReport(found=hit, candidates_seen=examined,
                          table_reads=self.params.L, block_reads=block_reads)

    def ann_query(self, q, k: int) -> QueryResult:
        """Increasing-radius top-k search.

        Each radius runs its full S budget; the loop stops at the first
        radius after which the global top-k holds at least k results within
        c*R, then returns the heap sorted by (distance, id).
        """
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        params = self.params
        q = np.asarray(q, dtype=np.float32)
        pool = _TopK()
        stats = QueryStats()
        for ridx, radius in enumerate(params.radii):
            examined, block_reads = self._radius_pass(q, ridx, pool)
            stats.table_reads += params.L
            stats.block_reads += block_reads
            stats.candidates += examined
            stats.radii_searched += 1
            if pool.in_range_count(k, params.c * radius) >= k:
                break
        ids, dists = pool.topk(k)
        return QueryResult(ids=ids, distances=dists, partial=len(ids) < k, stats=stats)


def reference_batch(data: np.ndarray, params: ParamSet, queries: np.ndarray,
                    k: int) -> list:
    """Streaming batch evaluation: identical results to ReferenceIndex
    ann_query per query, but organized as one pass per (radius, table) over
    the whole dataset so nothing index-shaped is ever held in memory.

    Memory is O(n + active_queries * S); suitable where the resident index
    would not fit. I/O counters are filled exactly as the resident path
    would count them.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    data = np.ascontiguousarray(data, dtype=np.float32)
    queries = np.ascontiguousarray(queries, dtype=np.float32)
    nq = len(queries)
    u = blk.table_key_width(params.n)
    blk.check_entry_widths(params.n, u)
    pools = [_TopK() for _ in range(nq)]
    stats = [QueryStats() for _ in range(nq)]
    done = np.zeros(nq, dtype=bool)
    for ridx, radius in enumerate(params.radii):
        alive = np.nonzero(~done)[0]
        if not len(alive):
            break
        room = np.full(nq, params.S, dtype=np.int64)
        for l in range(params.L):
            a, b = gen_projections(params, ridx, l)
            h32_x = compound_keys(data, a, b, params.w, radius, params.seed)
            ukeys_x = (h32_x >> np.uint32(blk.V_BITS - u)).astype(np.uint32)
            order = np.argsort(ukeys_x, kind="stable")
            sorted_keys = ukeys_x[order]
            sorted_h32 = h32_x[order]
            sorted_ids = order.astype(np.int64)
            h32_q = compound_keys(queries[alive], a, b, params.w, radius, params.seed)
            ukeys_q = (h32_q >> np.uint32(blk.V_BITS - u)).astype(np.uint32)
            los = np.searchsorted(sorted_keys, ukeys_q, side="left")
            his = np.searchsorted(sorted_keys, ukeys_q, side="right")
            for qi_pos in range(len(alive)):
                qi = int(alive[qi_pos])
                if room[qi] <= 0:
                    continue
                lo, hi = int(los[qi_pos]), int(his[qi_pos])
                if lo == hi:
                    continue
                bucket_h32 = sorted_h32[lo:hi]
                accept = np.nonzero(bucket_h32 == h32_q[qi_pos])[0]
                if len(accept) > room[qi]:
                    accept = accept[:room[qi]]
                if len(accept):
                    last_pos = int(accept[-1])
                    if len(accept) == room[qi]:
                        stats[qi].block_reads += last_pos // blk.ENTRIES_PER_BLOCK + 1
                    else:
                        stats[qi].block_reads += int(np.ceil((hi - lo) / blk.ENTRIES_PER_BLOCK))
                    ids = sorted_ids[lo:hi][accept]
                    dists = point_distances(data, ids, queries[qi])
                    room[qi] -= len(accept)
                    stats[qi].candidates += len(accept)
                    pools[qi].offer(ids, dists)
                else:
                    stats[qi].block_reads += int(np.ceil((hi - lo) / blk.ENTRIES_PER_BLOCK))
        for qi in alive.tolist():
            stats[qi].table_reads += params.L
            stats[qi].radii_searched += 1
            if pools[qi].in_range_count(k, params.c * radius) >= k:
                done[qi] = True
    out = []
    for qi in range(nq):
        ids, dists = pools[qi].topk(k)
        out.append(QueryResult(ids=ids, distances=dists, partial=len(ids) < k,
                               stats=stats[qi]))
    return out
