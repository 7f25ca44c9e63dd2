"""Bit-exact codecs for the on-storage layout: 512-byte bucket blocks,
40-bit packed object entries, and the table-key / fingerprint split.

All integers are little-endian with fixed widths. Pad bytes encode as zero
and are ignored on decode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BLOCK_SIZE = 512
HEADER_SIZE = 16
ENTRY_SIZE = 5
ENTRY_BITS = 40
# (512 - 16) // 5 entries fit after the header; 1 tail byte stays as pad.
ENTRIES_PER_BLOCK = (BLOCK_SIZE - HEADER_SIZE) // ENTRY_SIZE
# All-ones marks both end-of-chain and an empty table slot; address 0 is valid.
SENTINEL = 0xFFFFFFFFFFFFFFFF
V_BITS = 32


class FormatError(ValueError):
    """Raised on any violation of the on-storage layout."""


def table_key_width(n: int) -> int:
    """Key width u in bits for an index over n objects.

    Slightly below log2 n: u = max(8, floor(log2 n) - 2). The -2 quarters
    table size at the cost of ~4x expected slot load, which the fingerprint
    check absorbs.
    """
    if n < 1:
        raise FormatError(f"object count must be >= 1, got {n}")
    return max(8, int(math.floor(math.log2(n))) - 2) if n > 1 else 8


def id_bits(n: int) -> int:
    """Bits needed to store any object id below n."""
    if n < 1:
        raise FormatError(f"object count must be >= 1, got {n}")
    return max(1, math.ceil(math.log2(n))) if n > 1 else 1


def check_entry_widths(n: int, u: int, v: int = V_BITS) -> int:
    """Validate that ids and fingerprints fit the 40-bit entry; returns the
    fingerprint width v - u."""
    fp_bits = v - u
    if fp_bits < 0:
        raise FormatError(f"key width {u} exceeds hash width {v}")
    if id_bits(n) + fp_bits > ENTRY_BITS:
        raise FormatError(
            f"id bits {id_bits(n)} + fingerprint bits {fp_bits} exceed {ENTRY_BITS}"
        )
    return fp_bits


def split_hash(h: int, u: int):
    """(table key, fingerprint) from a 32-bit hash: key is the high u bits,
    fingerprint the low v - u bits. Lossless: merge_hash inverts."""
    if not 1 <= u <= V_BITS:
        raise FormatError(f"key width {u} outside [1, {V_BITS}]")
    key = (h >> (V_BITS - u)) & ((1 << u) - 1)
    fp = h & ((1 << (V_BITS - u)) - 1)
    return key, fp


def merge_hash(key: int, fp: int, u: int) -> int:
    if not 1 <= u <= V_BITS:
        raise FormatError(f"key width {u} outside [1, {V_BITS}]")
    return (key << (V_BITS - u)) | fp


def split_hash_batch(h: np.ndarray, u: int):
    """Vectorized split_hash over a uint32 array."""
    if not 1 <= u <= V_BITS:
        raise FormatError(f"key width {u} outside [1, {V_BITS}]")
    h = np.asarray(h, dtype=np.uint32)
    keys = (h >> np.uint32(V_BITS - u)).astype(np.uint32)
    fps = (h & np.uint32((1 << (V_BITS - u)) - 1)).astype(np.uint32)
    return keys, fps


def pack_object_info(object_id: int, fingerprint: int, n: int, u: int, v: int = V_BITS) -> bytes:
    """Pack (id, fingerprint) into 5 little-endian bytes.

    Layout inside the 40-bit value: fingerprint in the high v - u bits, id in
    the low ceil(log2 n) bits, zero bits between.
    """
    fp_bits = check_entry_widths(n, u, v)
    if not 0 <= object_id < n:
        raise FormatError(f"object id {object_id} out of range for n = {n}")
    if not 0 <= fingerprint < (1 << fp_bits):
        raise FormatError(f"fingerprint {fingerprint} needs more than {fp_bits} bits")
    value = object_id
    if fp_bits:
        value |= fingerprint << (ENTRY_BITS - fp_bits)
    return value.to_bytes(ENTRY_SIZE, "little")


def unpack_object_info(raw: bytes, n: int, u: int, v: int = V_BITS):
    """Inverse of pack_object_info: (object_id, fingerprint)."""
    fp_bits = check_entry_widths(n, u, v)
    if len(raw) != ENTRY_SIZE:
        raise FormatError(f"entry must be {ENTRY_SIZE} bytes, got {len(raw)}")
    value = int.from_bytes(raw, "little")
    object_id = value & ((1 << id_bits(n)) - 1)
    fingerprint = value >> (ENTRY_BITS - fp_bits) if fp_bits else 0
    return object_id, fingerprint


@dataclass
class BucketBlock:
    """One decoded 512-byte block: a chain link holding up to 99 entries."""

    next_addr: int
    ids: np.ndarray
    fps: np.ndarray

    @property
    def count(self) -> int:
        return len(self.ids)


def encode_block(block: BucketBlock, n: int, u: int, v: int = V_BITS) -> bytes:
    """Encode one block to exactly 512 bytes.

    Header: next_addr (8 bytes), count (2 bytes), 6 zero pad bytes. Entries
    follow at 5 bytes each; unused slots and the tail byte are zero.
    """
    fp_bits = check_entry_widths(n, u, v)
    count = len(block.ids)
    if count != len(block.fps):
        raise FormatError("ids and fingerprints must have equal length")
    if count > ENTRIES_PER_BLOCK:
        raise FormatError(f"block capacity is {ENTRIES_PER_BLOCK}, got {count}")
    if not 0 <= block.next_addr <= SENTINEL:
        raise FormatError(f"next address {block.next_addr} out of range")
    out = bytearray(BLOCK_SIZE)
    out[0:8] = int(block.next_addr).to_bytes(8, "little")
    out[8:10] = count.to_bytes(2, "little")
    for i in range(count):
        off = HEADER_SIZE + i * ENTRY_SIZE
        out[off:off + ENTRY_SIZE] = pack_object_info(
            int(block.ids[i]), int(block.fps[i]), n, u, v
        )
    return bytes(out)


def decode_block(raw: bytes, n: int, u: int, v: int = V_BITS) -> BucketBlock:
    """Decode one 512-byte block; validates length and count."""
    fp_bits = check_entry_widths(n, u, v)
    if len(raw) != BLOCK_SIZE:
        raise FormatError(f"block must be {BLOCK_SIZE} bytes, got {len(raw)}")
    next_addr = int.from_bytes(raw[0:8], "little")
    count = int.from_bytes(raw[8:10], "little")
    if count > ENTRIES_PER_BLOCK:
        raise FormatError(f"block count {count} exceeds {ENTRIES_PER_BLOCK}")
    ids = np.empty(count, dtype=np.int64)
    fps = np.empty(count, dtype=np.int64)
    for i in range(count):
        off = HEADER_SIZE + i * ENTRY_SIZE
        ids[i], fps[i] = unpack_object_info(raw[off:off + ENTRY_SIZE], n, u, v)
    return BucketBlock(next_addr=next_addr, ids=ids, fps=fps)


_BYTE_WEIGHTS = (np.uint64(1) << (np.uint64(8) * np.arange(ENTRY_SIZE, dtype=np.uint64)))


def decode_block_entries(raw: np.ndarray, n: int, u: int, v: int = V_BITS):
    """Fast decode of one block already in a uint8 array: returns
    (next_addr, ids, fps) without per-entry Python loops.

    The engine's hot path; must stay bit-compatible with decode_block.
    """
    fp_bits = check_entry_widths(n, u, v)
    next_addr = int.from_bytes(raw[:8].tobytes(), "little")
    count = int.from_bytes(raw[8:10].tobytes(), "little")
    if count > ENTRIES_PER_BLOCK:
        raise FormatError(f"block count {count} exceeds {ENTRIES_PER_BLOCK}")
    ent = raw[HEADER_SIZE:HEADER_SIZE + count * ENTRY_SIZE].reshape(count, ENTRY_SIZE)
    values = ent.astype(np.uint64) @ _BYTE_WEIGHTS
    ids = (values & np.uint64((1 << id_bits(n)) - 1)).astype(np.int64)
    if fp_bits:
        fps = (values >> np.uint64(ENTRY_BITS - fp_bits)).astype(np.int64)
    else:
        fps = np.zeros(count, dtype=np.int64)
    return next_addr, ids, fps


def encode_chain_array(ids: np.ndarray, fps: np.ndarray, counts: np.ndarray,
                       base_addr: int, n: int, u: int, v: int = V_BITS) -> np.ndarray:
    """Encode many bucket chains at once into a (total_blocks, 512) uint8 array.

    ids/fps hold all entries of all buckets back to back, bucket b owning the
    slice of length counts[b], entries already in their final in-chain order.
    Chains are laid out contiguously starting at byte base_addr: each block's
    next_addr points to the following 512-byte slot, the last block of each
    chain gets the sentinel. Returns the block array; the caller writes it
    and records per-bucket head addresses.

    Bit-identical to encoding each block via encode_block; tests enforce it.
    """
    fp_bits = check_entry_widths(n, u, v)
    ids = np.asarray(ids, dtype=np.uint64)
    fps = np.asarray(fps, dtype=np.uint64)
    counts = np.asarray(counts, dtype=np.int64)
    if ids.shape != fps.shape or ids.ndim != 1:
        raise FormatError("ids and fingerprints must be equal-length 1-d arrays")
    if counts.sum() != len(ids):
        raise FormatError("bucket counts do not cover the entry array")
    nblocks_per = (counts + (ENTRIES_PER_BLOCK - 1)) // ENTRIES_PER_BLOCK
    total_blocks = int(nblocks_per.sum())
    out = np.zeros((total_blocks, BLOCK_SIZE), dtype=np.uint8)
    if total_blocks == 0:
        return out

    # Global block index of each bucket's first block, then of each entry.
    bucket_block_start = np.concatenate(([0], np.cumsum(nblocks_per)[:-1]))
    entry_bucket = np.repeat(np.arange(len(counts)), counts)
    entry_start = np.concatenate(([0], np.cumsum(counts)[:-1]))
    pos_in_bucket = np.arange(len(ids)) - entry_start[entry_bucket]
    entry_block = bucket_block_start[entry_bucket] + pos_in_bucket // ENTRIES_PER_BLOCK
    entry_slot = pos_in_bucket % ENTRIES_PER_BLOCK

    # Per-block header fields, all vectorized.
    block_bucket = np.repeat(np.arange(len(counts)), nblocks_per)
    block_within = np.arange(total_blocks) - bucket_block_start[block_bucket]
    is_last = block_within == (nblocks_per[block_bucket] - 1)
    next_addrs = np.where(
        is_last,
        np.uint64(SENTINEL),
        np.uint64(base_addr) + (np.arange(total_blocks, dtype=np.uint64) + np.uint64(1)) * np.uint64(BLOCK_SIZE),
    )
    remaining = counts[block_bucket] - block_within * ENTRIES_PER_BLOCK
    block_counts = np.minimum(remaining, ENTRIES_PER_BLOCK).astype(np.uint16)

    header = out[:, :HEADER_SIZE]
    header[:, 0:8] = next_addrs.astype("<u8").view(np.uint8).reshape(total_blocks, 8)
    header[:, 8:10] = block_counts.astype("<u2").view(np.uint8).reshape(total_blocks, 2)

    # 40-bit entry values scattered into their block slots byte by byte.
    values = ids
    if fp_bits:
        values = ids | (fps << np.uint64(ENTRY_BITS - fp_bits))
    byte_base = HEADER_SIZE + entry_slot * ENTRY_SIZE
    for byte_i in range(ENTRY_SIZE):
        out[entry_block, byte_base + byte_i] = ((values >> np.uint64(8 * byte_i)) & np.uint64(0xFF)).astype(np.uint8)
    return out