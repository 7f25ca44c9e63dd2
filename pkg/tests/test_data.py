"""Dataset I/O formats, synthetic generators, the exact-scan oracle, and the
accuracy-ratio metric."""

import math
import struct

import numpy as np
import pytest

from lshstore.data import (DataError, Dataset, ZERO_MISMATCH_PENALTY,
                           brute_force_topk, brute_force_topk_batch,
                           generate_gaussian_clusters, generate_planted,
                           generate_uniform, load_dataset, load_fvecs,
                           load_f32raw, overall_ratio, write_bvecs,
                           write_dataset, write_fvecs)
from lshstore.reference import point_distances


class TestVectorFormats:
    def test_fvecs_hand_bytes(self, tmp_path):
        path = tmp_path / "two.fvecs"
        path.write_bytes(struct.pack("<i2f", 2, 1.5, -2.0) +
                         struct.pack("<i2f", 2, 0.0, 3.25))
        ds = load_fvecs(path)
        assert ds.kind == "real"
        assert ds.data.dtype == np.float32
        assert ds.data.tolist() == [[1.5, -2.0], [0.0, 3.25]]
        assert (ds.n, ds.d) == (2, 2)
        assert ds.x_max == 3.25

    def test_fvecs_mixed_dimension_named(self, tmp_path):
        path = tmp_path / "bad.fvecs"
        path.write_bytes(struct.pack("<i2f", 2, 1.0, 2.0) +
                         struct.pack("<i2f", 3, 1.0, 2.0))
        with pytest.raises(DataError, match="record 1 has dimension 3"):
            load_fvecs(path)

    def test_fvecs_truncated(self, tmp_path):
        path = tmp_path / "cut.fvecs"
        path.write_bytes(struct.pack("<i2f", 2, 1.0, 2.0)[:-2])
        with pytest.raises(DataError, match="record size"):
            load_fvecs(path)

    def test_fvecs_empty_and_bad_header(self, tmp_path):
        path = tmp_path / "x.fvecs"
        path.write_bytes(b"\x01")
        with pytest.raises(DataError, match="too short"):
            load_fvecs(path)
        path.write_bytes(struct.pack("<if", -3, 0.0))
        with pytest.raises(DataError, match="not positive"):
            load_fvecs(path)

    @pytest.mark.parametrize("fmt", ["fvecs", "f32raw"])
    def test_real_round_trip(self, tmp_path, fmt):
        rng = np.random.default_rng(3)
        data = rng.standard_normal((17, 5)).astype(np.float32)
        path = tmp_path / f"pts.{fmt}"
        write_dataset(path, data, fmt)
        ds = load_dataset(path, fmt)
        assert np.array_equal(ds.data, data)
        assert ds.kind == "real"

    def test_byte_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        data = rng.integers(0, 256, size=(23, 9))
        path = tmp_path / "pts.bvecs"
        write_dataset(path, data, "bvecs")
        ds = load_dataset(path, "bvecs")
        assert ds.kind == "byte"
        assert ds.data.dtype == np.float32
        assert np.array_equal(ds.data, data.astype(np.float32))

    def test_bvecs_rejects_non_bytes(self, tmp_path):
        path = tmp_path / "x.bvecs"
        with pytest.raises(DataError, match="integer"):
            write_bvecs(path, np.array([[0.5, 1.0]]))
        with pytest.raises(DataError, match="integer"):
            write_bvecs(path, np.array([[0, 256]]))
        with pytest.raises(DataError, match="integer"):
            write_bvecs(path, np.array([[-1, 4]]))

    def test_f32raw_header_checks(self, tmp_path):
        path = tmp_path / "x.f32raw"
        good = np.array([3, 2], dtype="<u8").tobytes() + bytes(4 * 6)
        path.write_bytes(good[:-4])
        with pytest.raises(DataError, match="header implies"):
            load_f32raw(path)
        path.write_bytes(good[:8])
        with pytest.raises(DataError, match="too short"):
            load_f32raw(path)

    def test_unknown_format(self, tmp_path):
        with pytest.raises(DataError, match="unknown format"):
            load_dataset(tmp_path / "x", "hdf5")
        with pytest.raises(DataError, match="unknown format"):
            write_dataset(tmp_path / "x", np.ones((1, 1)), "hdf5")

    def test_write_rejects_bad_shapes(self, tmp_path):
        with pytest.raises(DataError):
            write_fvecs(tmp_path / "x.fvecs", np.ones(4))
        with pytest.raises(DataError):
            write_fvecs(tmp_path / "x.fvecs", np.ones((0, 4)))


class TestGenerators:
    def test_uniform_deterministic_and_in_range(self):
        data1, queries1 = generate_uniform(300, 7, seed=9, n_queries=40)
        data2, queries2 = generate_uniform(300, 7, seed=9, n_queries=40)
        assert np.array_equal(data1, data2)
        assert np.array_equal(queries1, queries2)
        assert data1.shape == (300, 7) and queries1.shape == (40, 7)
        assert data1.dtype == queries1.dtype == np.float32
        assert data1.min() >= 0.0 and data1.max() <= 1.0
        _, empty = generate_uniform(10, 2, seed=0, n_queries=0)
        assert empty.shape == (0, 2)

    def test_uniform_seed_changes_data(self):
        a, _ = generate_uniform(100, 3, seed=1)
        b, _ = generate_uniform(100, 3, seed=2)
        assert not np.array_equal(a, b)

    def test_clusters_deterministic(self):
        d1, q1 = generate_gaussian_clusters(200, 4, seed=3, n_queries=20)
        d2, q2 = generate_gaussian_clusters(200, 4, seed=3, n_queries=20)
        assert np.array_equal(d1, d2) and np.array_equal(q1, q2)
        assert d1.shape == (200, 4) and q1.shape == (20, 4)

    def test_cluster_spread_is_tight(self):
        data, _ = generate_gaussian_clusters(2000, 8, seed=5, n_clusters=1,
                                             spread=0.01, n_queries=0)
        assert np.all(data.std(axis=0) < 0.05)

    def test_generator_validation(self):
        with pytest.raises(DataError):
            generate_uniform(0, 4, seed=0)
        with pytest.raises(DataError):
            generate_gaussian_clusters(10, 4, seed=0, spread=0.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_planted_instance_shape(self, seed):
        n, d, c = 500, 8, 2.0
        data, q, planted = generate_planted(n, d, c, seed)
        assert data.shape == (n, d) and q.shape == (d,)
        dists = point_distances(data, np.arange(n), q)
        assert dists[planted] <= 1.0
        others = np.delete(dists, planted)
        assert others.min() > c
        # The planted id must not leak through its position.
        assert 0 <= planted < n

    def test_planted_validation(self):
        with pytest.raises(DataError):
            generate_planted(1, 4, 2.0, 0)
        with pytest.raises(DataError):
            generate_planted(10, 4, 1.0, 0)
        with pytest.raises(DataError):
            generate_planted(10, 4, 2.0, 0, eps=0.0)
        with pytest.raises(DataError):
            generate_planted(10, 4, 2.0, 0, margin=1.0)


class TestBruteForce:
    def test_self_match_first(self):
        rng = np.random.default_rng(6)
        data = rng.random((60, 5), dtype=np.float32)
        ids, dists = brute_force_topk(data, data[7], k=3)
        assert ids[0] == 7 and dists[0] == 0.0
        assert np.all(np.diff(dists) >= 0)

    def test_collinear_hand_case(self):
        data = np.array([[0.0], [1.0], [3.0]], dtype=np.float32)
        ids, dists = brute_force_topk(data, np.array([0.9], dtype=np.float32), k=3)
        assert ids.tolist() == [1, 0, 2]
        assert dists == pytest.approx([0.1, 0.9, 2.1], abs=1e-7)

    def test_duplicate_rows_tie_by_id(self):
        data = np.array([[2.0], [1.0], [1.0], [5.0]], dtype=np.float32)
        ids, _ = brute_force_topk(data, np.array([1.0], dtype=np.float32), k=4)
        assert ids.tolist() == [1, 2, 0, 3]

    def test_distances_match_engine_arithmetic(self):
        rng = np.random.default_rng(7)
        data = rng.random((40, 6), dtype=np.float32)
        q = rng.random(6, dtype=np.float32)
        ids, dists = brute_force_topk(data, q, k=10)
        assert np.array_equal(dists, point_distances(data, ids, q))

    def test_k_validated(self):
        data = np.zeros((5, 2), dtype=np.float32)
        q = np.zeros(2, dtype=np.float32)
        with pytest.raises(DataError):
            brute_force_topk(data, q, k=0)
        with pytest.raises(DataError):
            brute_force_topk(data, q, k=6)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(8)
        data = rng.random((80, 4), dtype=np.float32)
        queries = rng.random((6, 4), dtype=np.float32)
        ids, dists = brute_force_topk_batch(data, queries, k=4)
        for i, q in enumerate(queries):
            one_ids, one_dists = brute_force_topk(data, q, k=4)
            assert np.array_equal(ids[i], one_ids)
            assert np.array_equal(dists[i], one_dists)


class TestOverallRatio:
    def test_exact_result(self):
        out = overall_ratio([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], k=3)
        assert out.ratio == 1.0
        assert not out.partial
        assert out.zero_mismatches == 0

    def test_mean_of_rank_ratios(self):
        out = overall_ratio([2.0, 4.0], [1.0, 4.0], k=2)
        assert out.ratio == pytest.approx(1.5)

    def test_partial_prefix(self):
        out = overall_ratio([1.0], [1.0, 2.0], k=2)
        assert out.ratio == 1.0
        assert out.partial

    def test_empty_result(self):
        out = overall_ratio([], [1.0, 2.0], k=2)
        assert math.isnan(out.ratio)
        assert out.partial

    def test_both_zero_counts_as_exact(self):
        out = overall_ratio([0.0, 3.0], [0.0, 3.0], k=2)
        assert out.ratio == 1.0
        assert out.zero_mismatches == 0

    def test_zero_mismatch_penalized_with_warning(self):
        with pytest.warns(UserWarning, match="penalty"):
            out = overall_ratio([0.5, 3.0], [0.0, 3.0], k=2)
        assert out.ratio == pytest.approx((ZERO_MISMATCH_PENALTY + 1.0) / 2)
        assert out.zero_mismatches == 1

    def test_custom_penalty(self):
        with pytest.warns(UserWarning):
            out = overall_ratio([1.0], [0.0], k=1, zero_penalty=7.0)
        assert out.ratio == 7.0

    def test_validation(self):
        with pytest.raises(DataError):
            overall_ratio([1.0], [1.0], k=0)
        with pytest.raises(DataError):
            overall_ratio([1.0, 1.0], [1.0], k=2)

    def test_extra_results_beyond_k_ignored(self):
        out = overall_ratio([1.0, 2.0, 99.0], [1.0, 2.0], k=2)
        assert out.ratio == 1.0
