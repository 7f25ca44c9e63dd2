"""The index manifest: a versioned, self-checksummed JSON document that alone
suffices to reopen and query an index deterministically.

The manifest is written last during a build and so doubles as the commit
point: a directory without a valid manifest is not an index.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path

from .core import ParamSet, MIXING_RULE_ID, GAUSSIAN_RULE_ID

FORMAT_VERSION = 1

MANIFEST_NAME = "manifest.json"
TABLES_NAME = "tables.bin"
BUCKETS_NAME = "buckets.bin"

_CHECKSUM_FIELD = "manifest_sha256"


class ManifestError(ValueError):
    """Raised when a manifest is missing, malformed, corrupt, or from an
    unsupported format version."""


@dataclass(frozen=True)
class IndexManifest:
    """Everything needed to reopen an index: parameters, bit layout, and the
    device address map.

    Addresses live in a single logical device space: buckets.bin occupies
    [0, buckets_length), tables.bin starts at tables_offset. table_offsets
    holds the device address of table (radius_index, l) at
    table_offsets[radius_index][l]; each table is 2**u slots of 8 bytes.
    """

    format_version: int
    params: ParamSet
    u: int
    v: int
    mixing_rule: str
    gaussian_rule: str
    buckets_length: int
    tables_offset: int
    tables_length: int
    table_offsets: tuple
    dataset_sha256: str
    files: dict

    def table_offset(self, radius_index: int, l: int) -> int:
        return self.table_offsets[radius_index][l]


def _canonical_payload(doc: dict) -> bytes:
    scrubbed = dict(doc)
    scrubbed[_CHECKSUM_FIELD] = ""
    return json.dumps(scrubbed, sort_keys=True, separators=(",", ":")).encode()


def manifest_to_doc(m: IndexManifest) -> dict:
    doc = {
        "format_version": m.format_version,
        "params": asdict(m.params),
        "u": m.u,
        "v": m.v,
        "mixing_rule": m.mixing_rule,
        "gaussian_rule": m.gaussian_rule,
        "buckets_length": m.buckets_length,
        "tables_offset": m.tables_offset,
        "tables_length": m.tables_length,
        "table_offsets": [list(per_radius) for per_radius in m.table_offsets],
        "dataset_sha256": m.dataset_sha256,
        "files": dict(m.files),
    }
    doc[_CHECKSUM_FIELD] = hashlib.sha256(_canonical_payload(doc)).hexdigest()
    return doc


def write_manifest(path, m: IndexManifest) -> None:
    doc = manifest_to_doc(m)
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


_EXPECTED_KEYS = {
    "format_version", "params", "u", "v", "mixing_rule", "gaussian_rule",
    "buckets_length", "tables_offset", "tables_length", "table_offsets",
    "dataset_sha256", "files", _CHECKSUM_FIELD,
}


def read_manifest(path) -> IndexManifest:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"no manifest at {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest is not valid JSON: {e}") from e
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ManifestError(
            f"unsupported manifest version {version!r}, this reader supports {FORMAT_VERSION}"
        )
    if set(doc) != _EXPECTED_KEYS:
        unexpected = set(doc) - _EXPECTED_KEYS
        missing = _EXPECTED_KEYS - set(doc)
        raise ManifestError(f"manifest keys mismatch: unexpected {sorted(unexpected)}, missing {sorted(missing)}")
    stored = doc[_CHECKSUM_FIELD]
    actual = hashlib.sha256(_canonical_payload(doc)).hexdigest()
    if stored != actual:
        raise ManifestError(f"manifest checksum mismatch: stored {stored}, computed {actual}")
    params = ParamSet(**doc["params"])
    return IndexManifest(
        format_version=version,
        params=params,
        u=doc["u"],
        v=doc["v"],
        mixing_rule=doc["mixing_rule"],
        gaussian_rule=doc["gaussian_rule"],
        buckets_length=doc["buckets_length"],
        tables_offset=doc["tables_offset"],
        tables_length=doc["tables_length"],
        table_offsets=tuple(tuple(per_radius) for per_radius in doc["table_offsets"]),
        dataset_sha256=doc["dataset_sha256"],
        files=doc["files"],
    )


def sha256_file(path, chunk_size: int = 1 << 22) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        while True:
            chunk = f.read(chunk_size)
            if not chunk:
                break
            h.update(chunk)
    return h.hexdigest()


def sha256_bytes(data) -> str:
    return hashlib.sha256(data).hexdigest()
