"""Build pipeline: reproducibility, structural completeness, and the audit's
power to catch corruption."""

import numpy as np
import pytest

from lshstore.builder import (BuildError, build_index, build_index_in_memory,
                              dataset_x_max, derive_build_params, verify_index)
from lshstore.manifest import (BUCKETS_NAME, MANIFEST_NAME, TABLES_NAME,
                               read_manifest, sha256_bytes)


def _uniform(n=200, d=4, seed=0):
    rng = np.random.default_rng(seed)
    return rng.random((n, d), dtype=np.float32)


BUILD = dict(c=2.0, w=4.0, gamma=1.0, seed=11, x_max=1.0)


class TestBuild:
    def test_audit_passes_and_counts_match(self, tmp_path):
        data = _uniform()
        manifest = build_index(data, tmp_path, **BUILD)
        report = verify_index(tmp_path, data)
        assert report.ok, report.violations
        p = manifest.params
        assert report.total_entries == p.n * p.L * p.r
        assert sum(length * count for length, count in
                   report.chain_length_hist.items()) <= report.total_entries
        assert 0.0 < report.empty_slot_fraction < 1.0

    def test_manifest_written_last(self, tmp_path):
        build_index(_uniform(), tmp_path, **BUILD)
        names = {p.name for p in tmp_path.iterdir()}
        assert names == {MANIFEST_NAME, BUCKETS_NAME, TABLES_NAME}

    def test_dataset_checksum_recorded(self, tmp_path):
        data = _uniform()
        manifest = build_index(data, tmp_path, **BUILD)
        assert manifest.dataset_sha256 == sha256_bytes(
            np.ascontiguousarray(data, dtype=np.float32).tobytes())

    def test_same_seed_reproduces_bytes(self, tmp_path):
        data = _uniform()
        build_index(data, tmp_path / "a", **BUILD)
        build_index(data, tmp_path / "b", **BUILD)
        for name in (BUCKETS_NAME, TABLES_NAME, MANIFEST_NAME):
            assert (tmp_path / "a" / name).read_bytes() == \
                   (tmp_path / "b" / name).read_bytes()

    def test_different_seed_differs(self, tmp_path):
        data = _uniform()
        build_index(data, tmp_path / "a", **BUILD)
        build_index(data, tmp_path / "b", **{**BUILD, "seed": 12})
        assert (tmp_path / "a" / BUCKETS_NAME).read_bytes() != \
               (tmp_path / "b" / BUCKETS_NAME).read_bytes()

    def test_in_memory_build_is_byte_identical(self, tmp_path):
        data = _uniform()
        disk = build_index(data, tmp_path, **BUILD)
        mem, buckets, tables = build_index_in_memory(data, **BUILD)
        assert mem == disk
        assert buckets == (tmp_path / BUCKETS_NAME).read_bytes()
        assert tables == (tmp_path / TABLES_NAME).read_bytes()

    def test_x_max_override_extends_schedule(self):
        data = _uniform()
        m_default, _, _ = build_index_in_memory(data, c=2.0, w=4.0, gamma=1.0,
                                                seed=11)
        m_wide, _, _ = build_index_in_memory(data, c=2.0, w=4.0, gamma=1.0,
                                             seed=11, x_max=50.0)
        assert m_wide.params.x_max == 50.0
        assert m_wide.params.r > m_default.params.r

    def test_default_x_max_comes_from_data(self):
        data = _uniform()
        params = derive_build_params(data, 2.0, 4.0, 1.0, 0)
        assert params.x_max == dataset_x_max(data)

    def test_identical_points_share_one_chain(self):
        row = np.full(4, 0.75, dtype=np.float32)
        data = np.tile(row, (200, 1))
        manifest, buckets, tables = build_index_in_memory(
            data, c=2.0, w=4.0, gamma=1.0, seed=3, x_max=1.0)
        p = manifest.params
        # 200 entries per table need ceil(200/99) = 3 chained blocks.
        assert len(buckets) == 3 * 512 * p.L * p.r

    def test_input_validation(self):
        with pytest.raises(BuildError):
            derive_build_params(np.zeros((0, 4), dtype=np.float32), 2.0, 4.0, 1.0, 0)
        with pytest.raises(BuildError):
            derive_build_params(np.zeros(8, dtype=np.float32), 2.0, 4.0, 1.0, 0)
        bad = _uniform()
        bad[3, 2] = np.nan
        with pytest.raises(BuildError):
            derive_build_params(bad, 2.0, 4.0, 1.0, 0)
        with pytest.raises(BuildError):
            dataset_x_max(np.zeros((5, 2), dtype=np.float32))


class TestAuditDetectsCorruption:
    @pytest.fixture
    def built(self, tmp_path):
        data = _uniform()
        build_index(data, tmp_path, **BUILD)
        return tmp_path, data

    def test_flipped_entry_byte(self, built):
        index_dir, data = built
        path = index_dir / BUCKETS_NAME
        raw = bytearray(path.read_bytes())
        raw[16] ^= 0xFF
        path.write_bytes(raw)
        assert not verify_index(index_dir, data).ok
        # Detection must not depend on the file checksum alone.
        report = verify_index(index_dir, data, check_file_hashes=False)
        assert not report.ok
        assert any("mismatch" in v or "count" in v for v in report.violations)

    def test_unaligned_table_slot(self, built):
        index_dir, data = built
        manifest = read_manifest(index_dir / MANIFEST_NAME)
        path = index_dir / TABLES_NAME
        raw = bytearray(path.read_bytes())
        slots = np.frombuffer(raw, dtype="<u8")
        occupied = int(np.nonzero(slots != np.uint64(0xFFFFFFFFFFFFFFFF))[0][0])
        raw[occupied * 8:occupied * 8 + 8] = (513).to_bytes(8, "little")
        path.write_bytes(raw)
        report = verify_index(index_dir, data, check_file_hashes=False)
        assert not report.ok
        assert any("invalid block address" in v for v in report.violations)

    def test_emptied_slot(self, built):
        index_dir, data = built
        path = index_dir / TABLES_NAME
        raw = bytearray(path.read_bytes())
        slots = np.frombuffer(raw, dtype="<u8")
        occupied = int(np.nonzero(slots != np.uint64(0xFFFFFFFFFFFFFFFF))[0][0])
        raw[occupied * 8:occupied * 8 + 8] = b"\xff" * 8
        path.write_bytes(raw)
        report = verify_index(index_dir, data, check_file_hashes=False)
        assert not report.ok
        assert any("empty slot" in v for v in report.violations)

    def test_wrong_dataset(self, built):
        index_dir, data = built
        other = data.copy()
        other[0, 0] += 0.5
        report = verify_index(index_dir, other)
        assert not report.ok
        assert any("dataset checksum" in v for v in report.violations)

    def test_truncated_buckets(self, built):
        index_dir, data = built
        path = index_dir / BUCKETS_NAME
        path.write_bytes(path.read_bytes()[:-512])
        report = verify_index(index_dir, data, check_file_hashes=False)
        assert not report.ok
        assert any("length" in v for v in report.violations)
