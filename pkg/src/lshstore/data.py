"""Dataset ingestion, synthetic generation, and accuracy metrics.

File formats:

  fvecs    per record: 4-byte little-endian int32 dimension header, then
           d 32-bit little-endian reals. All records must agree on d.
  bvecs    same layout with unsigned byte elements.
  f32raw   16-byte header (n then d, little-endian uint64), then n*d
           32-bit reals, row major.

Byte data is promoted to 32-bit reals on load; all distance math runs in
64-bit over the 32-bit stored coordinates.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .reference import point_distances

DEFAULT_QUERY_COUNT = 1000

# Ratio term charged when a result distance is positive but the true
# distance is zero. The quotient is undefined; a large finite penalty
# keeps the aggregate comparable while making the mismatch obvious.
ZERO_MISMATCH_PENALTY = 1.0e6


class DataError(ValueError):
    """Malformed dataset file or invalid generation request."""


@dataclass(frozen=True)
class Dataset:
    """An in-memory point set. `kind` records the on-disk element type."""

    data: np.ndarray
    kind: str

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    @property
    def x_max(self) -> float:
        return float(np.max(np.abs(self.data))) if self.data.size else 0.0


def _as_points(data) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DataError(f"expected a (n, d) array with n, d >= 1, got shape {arr.shape}")
    return arr


def load_fvecs(path) -> Dataset:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size < 4:
        raise DataError(f"{path}: too short for a dimension header")
    d = int(raw[:4].view("<i4")[0])
    if d < 1:
        raise DataError(f"{path}: dimension header {d} is not positive")
    record = 4 + 4 * d
    if raw.size % record != 0:
        raise DataError(f"{path}: size {raw.size} is not a multiple of record size {record}")
    rows = raw.reshape(-1, record)
    dims = rows[:, :4].copy().view("<i4").ravel()
    if not np.all(dims == d):
        bad = int(np.argmax(dims != d))
        raise DataError(f"{path}: record {bad} has dimension {int(dims[bad])}, expected {d}")
    data = rows[:, 4:].copy().view("<f4").reshape(-1, d)
    return Dataset(data=np.ascontiguousarray(data, dtype=np.float32), kind="real")


def load_bvecs(path) -> Dataset:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size < 4:
        raise DataError(f"{path}: too short for a dimension header")
    d = int(raw[:4].view("<i4")[0])
    if d < 1:
        raise DataError(f"{path}: dimension header {d} is not positive")
    record = 4 + d
    if raw.size % record != 0:
        raise DataError(f"{path}: size {raw.size} is not a multiple of record size {record}")
    rows = raw.reshape(-1, record)
    dims = rows[:, :4].copy().view("<i4").ravel()
    if not np.all(dims == d):
        bad = int(np.argmax(dims != d))
        raise DataError(f"{path}: record {bad} has dimension {int(dims[bad])}, expected {d}")
    data = rows[:, 4:].astype(np.float32)
    return Dataset(data=np.ascontiguousarray(data), kind="byte")


def load_f32raw(path) -> Dataset:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size < 16:
        raise DataError(f"{path}: too short for the (n, d) header")
    n, d = (int(x) for x in raw[:16].view("<u8"))
    if n < 1 or d < 1:
        raise DataError(f"{path}: header (n={n}, d={d}) is not positive")
    expect = 16 + 4 * n * d
    if raw.size != expect:
        raise DataError(f"{path}: size {raw.size}, header implies {expect}")
    data = raw[16:].copy().view("<f4").reshape(n, d)
    return Dataset(data=np.ascontiguousarray(data, dtype=np.float32), kind="real")


_LOADERS = {"fvecs": load_fvecs, "bvecs": load_bvecs, "f32raw": load_f32raw}


def load_dataset(path, fmt: str) -> Dataset:
    try:
        loader = _LOADERS[fmt]
    except KeyError:
        raise DataError(f"unknown format {fmt!r}, expected one of {sorted(_LOADERS)}")
    try:
        return loader(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def write_fvecs(path, data) -> None:
    arr = _as_points(data)
    n, d = arr.shape
    out = np.empty((n, 4 + 4 * d), dtype=np.uint8)
    out[:, :4] = np.full(n, d, dtype="<i4")[:, None].view(np.uint8)
    out[:, 4:] = arr.astype("<f4").view(np.uint8)
    out.tofile(path)


def write_bvecs(path, data) -> None:
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise DataError(f"expected a (n, d) array, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer) or arr.min() < 0 or arr.max() > 255:
        raise DataError("byte format requires integer values in [0, 255]")
    n, d = arr.shape
    out = np.empty((n, 4 + d), dtype=np.uint8)
    out[:, :4] = np.full(n, d, dtype="<i4")[:, None].view(np.uint8)
    out[:, 4:] = arr.astype(np.uint8)
    out.tofile(path)


def write_f32raw(path, data) -> None:
    arr = _as_points(data)
    with open(path, "wb") as fh:
        fh.write(np.array(arr.shape, dtype="<u8").tobytes())
        fh.write(arr.astype("<f4").tobytes())


_WRITERS = {"fvecs": write_fvecs, "bvecs": write_bvecs, "f32raw": write_f32raw}


def write_dataset(path, data, fmt: str) -> None:
    try:
        writer = _WRITERS[fmt]
    except KeyError:
        raise DataError(f"unknown format {fmt!r}, expected one of {sorted(_WRITERS)}")
    writer(path, data)


def generate_uniform(n: int, d: int, seed: int,
                     n_queries: int = DEFAULT_QUERY_COUNT):
    """Uniform points on [0, 1]^d plus held-out queries from the same law."""
    if n < 1 or d < 1 or n_queries < 0:
        raise DataError(f"need n, d >= 1 and n_queries >= 0, got {(n, d, n_queries)}")
    rng = np.random.default_rng(seed)
    data = rng.random((n, d), dtype=np.float32)
    queries = rng.random((n_queries, d), dtype=np.float32)
    return data, queries


def generate_gaussian_clusters(n: int, d: int, seed: int,
                               n_clusters: int = 10, spread: float = 0.05,
                               n_queries: int = DEFAULT_QUERY_COUNT):
    """Gaussian blobs around uniform centers in [0, 1]^d, queries held out."""
    if n < 1 or d < 1 or n_clusters < 1 or n_queries < 0:
        raise DataError(f"invalid sizes {(n, d, n_clusters, n_queries)}")
    if spread <= 0:
        raise DataError(f"spread must be > 0, got {spread}")
    rng = np.random.default_rng(seed)
    centers = rng.random((n_clusters, d))
    total = n + n_queries
    member = rng.integers(0, n_clusters, size=total)
    pts = centers[member] + rng.normal(0.0, spread, size=(total, d))
    pts = pts.astype(np.float32)
    return pts[:n], pts[n:]


def generate_planted(n: int, d: int, c: float, seed: int,
                     eps: float = 0.05, margin: float = 1.05):
    """A radius-1 decision instance with exactly one in-range object.

    One object is planted at distance (1 - eps) from the query; every
    other object sits strictly beyond margin * c, so any object reported
    within c of the query must be the planted one. Placement is verified
    by exhaustive scan before returning.

    Returns (data, query, planted_index).
    """
    if n < 2 or d < 1:
        raise DataError(f"need n >= 2 and d >= 1, got {(n, d)}")
    if c <= 1 or not 0 < eps < 1 or margin <= 1:
        raise DataError(f"invalid instance shape {(c, eps, margin)}")
    rng = np.random.default_rng(seed)
    q = rng.random(d)
    dirs = rng.normal(size=(n, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dists = rng.uniform(margin * c, margin * c + 1.0, size=n)
    planted = int(rng.integers(0, n))
    dists[planted] = 1.0 - eps
    data = (q + dirs * dists[:, None]).astype(np.float32)
    q = q.astype(np.float32)

    actual = point_distances(data, np.arange(n), q)
    others = np.delete(actual, planted)
    if actual[planted] > 1.0 or np.min(others) <= c:
        raise DataError("planted instance failed its exhaustive placement check")
    return data, q, planted


def brute_force_topk(data, q, k: int):
    """Exact Euclidean top-k by exhaustive scan, ties by ascending id.

    Distance arithmetic matches the query engines exactly (64-bit over
    32-bit coordinates), so shared candidates compare bit-identically.
    Returns (ids, distances), distances ascending.
    """
    data = np.asarray(data, dtype=np.float32)
    n = data.shape[0]
    if not 1 <= k <= n:
        raise DataError(f"need 1 <= k <= n, got k={k}, n={n}")
    chunk = 1 << 16
    dists = np.empty(n, dtype=np.float64)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        dists[start:stop] = point_distances(data, np.arange(start, stop), q)
    # Stable sort on distance keeps ties in id order, ids being 0..n-1.
    order = np.argsort(dists, kind="stable")[:k]
    return order.astype(np.int64), dists[order]


def brute_force_topk_batch(data, queries, k: int):
    """brute_force_topk for each query row. Returns (ids, dists) arrays
    of shape (nq, k)."""
    queries = np.asarray(queries, dtype=np.float32)
    nq = queries.shape[0]
    ids = np.empty((nq, k), dtype=np.int64)
    dists = np.empty((nq, k), dtype=np.float64)
    for i in range(nq):
        ids[i], dists[i] = brute_force_topk(data, queries[i], k)
    return ids, dists


@dataclass(frozen=True)
class RatioResult:
    """Accuracy of one query's result list against exact ground truth."""

    ratio: float
    partial: bool
    zero_mismatches: int


def overall_ratio(result_dists, truth_dists, k: int,
                  zero_penalty: float = ZERO_MISMATCH_PENALTY) -> RatioResult:
    """Mean of per-rank distance ratios result[i] / truth[i] over the top-k.

    1.0 means exact. Fewer than k results marks the outcome partial and
    averages over the returned prefix only. A zero true distance with a
    zero result distance contributes 1; a positive result distance
    against a zero truth has no defined quotient and contributes
    `zero_penalty` with a warning.
    """
    result = np.asarray(result_dists, dtype=np.float64)
    truth = np.asarray(truth_dists, dtype=np.float64)
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if len(truth) < k:
        raise DataError(f"ground truth has {len(truth)} entries, need {k}")
    take = min(len(result), k)
    if take == 0:
        return RatioResult(ratio=float("nan"), partial=True, zero_mismatches=0)
    r = result[:take]
    t = truth[:take]
    terms = np.empty(take, dtype=np.float64)
    zero_t = t == 0.0
    regular = ~zero_t
    terms[regular] = r[regular] / t[regular]
    both_zero = zero_t & (r == 0.0)
    mismatch = zero_t & (r > 0.0)
    terms[both_zero] = 1.0
    terms[mismatch] = zero_penalty
    n_mismatch = int(np.count_nonzero(mismatch))
    if n_mismatch:
        warnings.warn(f"{n_mismatch} result distance(s) positive where the true "
                      f"distance is zero; charged penalty {zero_penalty}")
    return RatioResult(ratio=float(terms.mean()), partial=take < k,
                       zero_mismatches=n_mismatch)
