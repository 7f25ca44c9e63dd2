"""Storage-backed locality-sensitive hashing for nearest-neighbor search.

The index lives on a block device as fixed 512-byte bucket blocks plus
per-radius hash tables; queries hash in memory and touch storage only
for table slots and bucket chains, so read cost stays sublinear in the
dataset size. A fully resident reference evaluator produces identical
results and identical read counts, and an analytic cost model turns the
measured read counts into latency and IOPS requirements.

Typical use:

    from lshstore import build_index, open_index, run_batch

    manifest = build_index(data, "idx/", c=2.0, w=4.0, gamma=1.0, seed=7)
    index = open_index("idx/", data, backend="memory")
    batch = run_batch(index, queries, k=10)
"""

from .blocks import (BLOCK_SIZE, ENTRIES_PER_BLOCK, BucketBlock, FormatError,
                     decode_block, encode_block, pack_object_info,
                     unpack_object_info)
from .builder import (AuditReport, BuildError, build_index,
                      build_index_in_memory, verify_index)
from .core import (CompoundHash, LshFunction, ParameterError, ParamSet,
                   collision_probability, compound_hash, compute_params,
                   gen_projections, hash_batch, hash_point, radius_schedule)
from .costmodel import (CostInputs, CostModelError, InfeasibleTargetError,
                        async_query_time, required_read_iops,
                        required_request_rate, sync_query_time)
from .data import (DataError, Dataset, brute_force_topk, generate_planted,
                   generate_uniform, load_dataset, overall_ratio,
                   write_dataset)
from .engine import (BatchResult, EngineError, Index, IndexCorruptionError,
                     ann_query, open_index, open_index_buffers, rcnn_search,
                     run_batch)
from .manifest import FORMAT_VERSION, IndexManifest, ManifestError, read_manifest
from .reference import QueryResult, QueryStats, RcnnReport, ReferenceIndex
from .storage import (FileBackend, IoStats, MemoryBackend, SimBackend,
                      SimConfig, StorageBackend, StorageError)

__version__ = "0.1.0"

__all__ = [
    "AuditReport", "BatchResult", "BLOCK_SIZE", "BucketBlock", "BuildError",
    "CompoundHash", "CostInputs", "CostModelError", "DataError", "Dataset",
    "ENTRIES_PER_BLOCK", "EngineError", "FileBackend", "FORMAT_VERSION",
    "FormatError", "Index", "IndexCorruptionError", "IndexManifest",
    "InfeasibleTargetError", "IoStats", "LshFunction", "ManifestError",
    "MemoryBackend", "ParamSet", "ParameterError", "QueryResult",
    "QueryStats", "RcnnReport", "ReferenceIndex", "SimBackend", "SimConfig",
    "StorageBackend", "StorageError", "ann_query", "async_query_time",
    "brute_force_topk", "build_index", "build_index_in_memory",
    "collision_probability", "compound_hash", "compute_params",
    "decode_block", "encode_block", "gen_projections", "generate_planted",
    "generate_uniform", "hash_batch", "hash_point", "load_dataset",
    "open_index", "open_index_buffers", "overall_ratio", "pack_object_info",
    "radius_schedule", "rcnn_search", "read_manifest", "required_read_iops",
    "required_request_rate", "run_batch", "sync_query_time",
    "unpack_object_info", "verify_index", "write_dataset",
]
