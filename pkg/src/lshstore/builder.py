"""Index construction: streams one (radius, table) pass at a time over the
dataset and writes contiguous bucket chains plus the table slot arrays.

Each pass hashes all n objects, stable-sorts them by table key, and emits
every bucket's chain as consecutive 512-byte blocks. Insertion order inside
a bucket is dataset order, which fixes the candidate-examination order that
the S cap later makes semantically relevant. Builds are byte-reproducible
from (dataset, parameters): the hash functions come from counter-based
streams and every write is a pure function of the sorted arrays.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import blocks as blk
from .core import ParamSet, compute_params, gen_projections, compound_keys
from .core import MIXING_RULE_ID, GAUSSIAN_RULE_ID
from .manifest import (
    IndexManifest, write_manifest, read_manifest, sha256_file, sha256_bytes,
    FORMAT_VERSION, MANIFEST_NAME, TABLES_NAME, BUCKETS_NAME,
)


class BuildError(RuntimeError):
    pass


def dataset_x_max(data: np.ndarray) -> float:
    x_max = float(np.max(np.abs(data)))
    if x_max <= 0 or not np.isfinite(x_max):
        raise BuildError(f"dataset max absolute coordinate {x_max} unusable for a radius schedule")
    return x_max


def derive_build_params(data: np.ndarray, c: float, w: float, gamma: float,
                        seed: int, x_max: float | None = None) -> ParamSet:
    data = np.asarray(data)
    if data.ndim != 2 or data.shape[0] < 1:
        raise BuildError(f"dataset must be a nonempty (n, d) array, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise BuildError("dataset contains non-finite coordinates")
    if x_max is None:
        x_max = dataset_x_max(data)
    return compute_params(data.shape[0], data.shape[1], c, w, gamma, x_max, seed)


def _build_streams(data: np.ndarray, params: ParamSet, buckets_f, tables_f):
    """Core build loop writing to two binary streams. Returns
    (relative table offsets, buckets length, tables length)."""
    n = params.n
    u = blk.table_key_width(n)
    blk.check_entry_widths(n, u)
    table_bytes = (1 << u) * 8
    buckets_pos = 0
    tables_pos = 0
    rel_offsets = []
    x = np.ascontiguousarray(data, dtype=np.float32)
    ids = np.arange(n, dtype=np.uint64)
    for ridx, radius in enumerate(params.radii):
        per_radius = []
        for l in range(params.L):
            a, b = gen_projections(params, ridx, l)
            h32 = compound_keys(x, a, b, params.w, radius, params.seed)
            ukeys, fps = blk.split_hash_batch(h32, u)
            order = np.argsort(ukeys, kind="stable")
            sorted_keys = ukeys[order]
            unique_keys, counts = np.unique(sorted_keys, return_counts=True)
            chain = blk.encode_chain_array(
                ids[order], fps[order].astype(np.uint64), counts, buckets_pos, n, u
            )
            buckets_f.write(chain.tobytes())
            nblocks_per = (counts + (blk.ENTRIES_PER_BLOCK - 1)) // blk.ENTRIES_PER_BLOCK
            head_block = np.concatenate(([0], np.cumsum(nblocks_per)[:-1]))
            slots = np.full(1 << u, blk.SENTINEL, dtype="<u8")
            slots[unique_keys] = np.uint64(buckets_pos) + head_block.astype(np.uint64) * np.uint64(blk.BLOCK_SIZE)
            tables_f.write(slots.tobytes())
            per_radius.append(tables_pos)
            tables_pos += table_bytes
            buckets_pos += chain.shape[0] * blk.BLOCK_SIZE
        rel_offsets.append(per_radius)
    return rel_offsets, buckets_pos, tables_pos


def _make_manifest(params: ParamSet, rel_offsets, buckets_len: int, tables_len: int,
                   dataset_sha: str, file_shas: dict) -> IndexManifest:
    # Device address space: buckets at 0, tables appended after.
    table_offsets = tuple(
        tuple(buckets_len + off for off in per_radius) for per_radius in rel_offsets
    )
    return IndexManifest(
        format_version=FORMAT_VERSION,
        params=params,
        u=blk.table_key_width(params.n),
        v=blk.V_BITS,
        mixing_rule=MIXING_RULE_ID,
        gaussian_rule=GAUSSIAN_RULE_ID,
        buckets_length=buckets_len,
        tables_offset=buckets_len,
        tables_length=tables_len,
        table_offsets=table_offsets,
        dataset_sha256=dataset_sha,
        files=file_shas,
    )


def build_index(data: np.ndarray, out_dir, c: float, w: float, gamma: float,
                seed: int, x_max: float | None = None) -> IndexManifest:
    """Build a complete index directory: buckets.bin, tables.bin, and the
    manifest, written in that order. The manifest is the commit point: a
    crash before it leaves no valid index behind."""
    params = derive_build_params(data, c, w, gamma, seed, x_max)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    x = np.ascontiguousarray(data, dtype=np.float32)
    with open(out / BUCKETS_NAME, "wb", buffering=1 << 22) as bf, \
         open(out / TABLES_NAME, "wb", buffering=1 << 22) as tf:
        rel_offsets, buckets_len, tables_len = _build_streams(x, params, bf, tf)
        bf.flush()
        tf.flush()
    file_shas = {
        BUCKETS_NAME: sha256_file(out / BUCKETS_NAME),
        TABLES_NAME: sha256_file(out / TABLES_NAME),
    }
    m = _make_manifest(params, rel_offsets, buckets_len, tables_len,
                       sha256_bytes(x.tobytes()), file_shas)
    write_manifest(out / MANIFEST_NAME, m)
    return m


def build_index_in_memory(data: np.ndarray, c: float, w: float, gamma: float,
                          seed: int, x_max: float | None = None):
    """Build without touching disk: returns (manifest, buckets bytes,
    tables bytes). Bytes are identical to what build_index writes."""
    params = derive_build_params(data, c, w, gamma, seed, x_max)
    x = np.ascontiguousarray(data, dtype=np.float32)
    bf, tf = io.BytesIO(), io.BytesIO()
    rel_offsets, buckets_len, tables_len = _build_streams(x, params, bf, tf)
    buckets, tables = bf.getvalue(), tf.getvalue()
    file_shas = {BUCKETS_NAME: sha256_bytes(buckets), TABLES_NAME: sha256_bytes(tables)}
    m = _make_manifest(params, rel_offsets, buckets_len, tables_len,
                       sha256_bytes(x.tobytes()), file_shas)
    return m, buckets, tables


@dataclass
class AuditReport:
    """Outcome of a full index audit."""

    ok: bool
    violations: list = field(default_factory=list)
    total_blocks: int = 0
    total_entries: int = 0
    empty_slot_fraction: float = 0.0
    chain_length_hist: dict = field(default_factory=dict)

    def add(self, msg: str, limit: int = 50):
        self.ok = False
        if len(self.violations) < limit:
            self.violations.append(msg)


def verify_index(index_dir, data: np.ndarray, check_file_hashes: bool = True) -> AuditReport:
    """Audit an index directory against its dataset.

    Checks file checksums, walks every chain (termination, counts, zero
    padding, no cycles), confirms each object sits in exactly the bucket its
    recomputed hash selects in every table, and reports chain statistics.
    """
    out = Path(index_dir)
    m = read_manifest(out / MANIFEST_NAME)
    params = m.params
    report = AuditReport(ok=True)
    x = np.ascontiguousarray(data, dtype=np.float32)
    if x.shape != (params.n, params.d):
        report.add(f"dataset shape {x.shape} does not match manifest ({params.n}, {params.d})")
        return report
    if sha256_bytes(x.tobytes()) != m.dataset_sha256:
        report.add("dataset checksum does not match the manifest")
    if check_file_hashes:
        for name, want in m.files.items():
            got = sha256_file(out / name)
            if got != want:
                report.add(f"{name} checksum mismatch: {got} != {want}")

    buckets = np.fromfile(out / BUCKETS_NAME, dtype=np.uint8)
    tables = np.fromfile(out / TABLES_NAME, dtype=np.uint8)
    if len(buckets) != m.buckets_length:
        report.add(f"buckets.bin length {len(buckets)} != manifest {m.buckets_length}")
        return report
    if len(tables) != m.tables_length:
        report.add(f"tables.bin length {len(tables)} != manifest {m.tables_length}")
        return report

    u = m.u
    table_bytes = (1 << u) * 8
    n = params.n
    memberships = np.zeros(n, dtype=np.int64)
    total_blocks = 0
    total_entries = 0
    empty_slots = 0
    hist: dict = {}
    for ridx, radius in enumerate(params.radii):
        for l in range(params.L):
            a, b = gen_projections(params, ridx, l)
            h32 = compound_keys(x, a, b, params.w, radius, params.seed)
            ukeys, fps = blk.split_hash_batch(h32, u)
            order = np.argsort(ukeys, kind="stable")
            exp_keys = ukeys[order]
            exp_ids = order.astype(np.int64)
            exp_fps = fps[order].astype(np.int64)

            rel = m.table_offset(ridx, l) - m.tables_offset
            slots = tables[rel:rel + table_bytes].view("<u8")
            occupied = np.nonzero(slots != np.uint64(blk.SENTINEL))[0]
            keys_to_check = np.union1d(occupied, np.unique(exp_keys).astype(np.int64))
            empty_slots += (1 << u) - len(occupied)
            table_entries = 0
            for key in keys_to_check:
                addr = int(slots[key])
                lo = np.searchsorted(exp_keys, np.uint32(key), side="left")
                hi = np.searchsorted(exp_keys, np.uint32(key), side="right")
                want_ids = exp_ids[lo:hi]
                want_fps = exp_fps[lo:hi]
                if addr == blk.SENTINEL:
                    if len(want_ids):
                        report.add(f"table ({ridx},{l}) key {key}: {len(want_ids)} objects but empty slot")
                    continue
                got_ids, got_fps, nblocks, bad = _walk_chain(buckets, addr, n, u, m.buckets_length)
                for msg in bad:
                    report.add(f"table ({ridx},{l}) key {key}: {msg}")
                total_blocks += nblocks
                chain_len = len(got_ids)
                hist[nblocks] = hist.get(nblocks, 0) + 1
                table_entries += chain_len
                if not np.array_equal(got_ids, want_ids) or not np.array_equal(got_fps, want_fps):
                    report.add(f"table ({ridx},{l}) key {key}: chain content mismatch")
                else:
                    memberships[want_ids] += 1
                total_entries += chain_len
            if table_entries != n:
                report.add(f"table ({ridx},{l}): entry total {table_entries} != n = {n}")
    expected = params.L * params.r
    if report.ok and not np.all(memberships == expected):
        bad_obj = int(np.argmin(memberships == expected))
        report.add(f"object {bad_obj} appears {int(memberships[bad_obj])} times, expected {expected}")
    report.total_blocks = total_blocks
    report.total_entries = total_entries
    slots_total = params.L * params.r * (1 << u)
    report.empty_slot_fraction = empty_slots / slots_total if slots_total else 0.0
    report.chain_length_hist = dict(sorted(hist.items()))
    return report


def _walk_chain(buckets: np.ndarray, addr: int, n: int, u: int, region_len: int):
    """Follow one chain, validating every block. Returns (ids, fps, nblocks,
    violations)."""
    ids_parts = []
    fps_parts = []
    bad = []
    nblocks = 0
    seen = set()
    while addr != blk.SENTINEL:
        if addr % blk.BLOCK_SIZE or addr + blk.BLOCK_SIZE > region_len:
            bad.append(f"invalid block address {addr}")
            break
        if addr in seen:
            bad.append(f"chain cycle at address {addr}")
            break
        seen.add(addr)
        raw = buckets[addr:addr + blk.BLOCK_SIZE]
        try:
            next_addr, ids, fps = blk.decode_block_entries(raw, n, u)
        except blk.FormatError as e:
            bad.append(str(e))
            break
        count = len(ids)
        pad = raw[8 + 2:blk.HEADER_SIZE]
        tail = raw[blk.HEADER_SIZE + count * blk.ENTRY_SIZE:]
        if np.any(pad != 0) or np.any(tail != 0):
            bad.append(f"nonzero padding in block {addr}")
        if count == 0:
            bad.append(f"empty block {addr} inside a chain")
        if np.any(ids >= n):
            bad.append(f"object id out of range in block {addr}")
        nblocks += 1
        ids_parts.append(ids)
        fps_parts.append(fps)
        addr = next_addr
    ids = np.concatenate(ids_parts) if ids_parts else np.zeros(0, dtype=np.int64)
    fps = np.concatenate(fps_parts) if fps_parts else np.zeros(0, dtype=np.int64)
    return ids, fps, nblocks, bad
