"""End-to-end checks for the command-line interface.

Every test drives ``lshstore.cli.main`` in-process with an argv list and
captures stdout, so the assertions see exactly what a shell user would.
"""

import contextlib
import csv
import io
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from lshstore.cli import CliError, main, parse_config_file, parse_duration_ns
from lshstore.data import load_dataset


def run_cli(argv):
    """Run main() with stdout captured; returns (exit_code, stdout_text)."""
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        rc = main([str(a) for a in argv])
    return rc, buf.getvalue()


def run_json(argv):
    rc, out = run_cli(argv)
    return rc, json.loads(out)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A generated dataset plus a built index, shared by the happy-path tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data.fvecs"
    queries = root / "queries.fvecs"
    index = root / "index"
    rc, gen_doc = run_json([
        "gen", "--kind", "uniform", "--n", 400, "--d", 6, "--seed", 3,
        "--out", data, "--queries-out", queries, "--n-queries", 12,
    ])
    assert rc == 0
    rc, build_doc = run_json([
        "build", "--dataset", data, "--format", "fvecs",
        "--c", 2.0, "--w", 4.0, "--gamma", 1.0, "--seed", 9, "--out", index,
    ])
    assert rc == 0
    return {"root": root, "data": data, "queries": queries, "index": index,
            "gen_doc": gen_doc, "build_doc": build_doc}


def query_argv(ws, *extra):
    return ["query", "--index", ws["index"], "--dataset", ws["data"],
            "--format", "fvecs", "--queries", ws["queries"], "--k", 3, *extra]


class TestDurationParsing:
    @pytest.mark.parametrize("text, expected", [
        ("250ns", 250.0),
        ("100us", 100_000.0),
        ("1.5ms", 1_500_000.0),
        ("2s", 2_000_000_000.0),
        ("300", 300.0),
        ("1e3us", 1_000_000.0),
    ])
    def test_suffixes_scale_to_nanoseconds(self, text, expected):
        assert parse_duration_ns(text) == expected

    @pytest.mark.parametrize("text", ["12 parsecs", "", "xyzms"])
    def test_garbage_is_rejected(self, text):
        with pytest.raises(CliError, match="bad duration"):
            parse_duration_ns(text)


class TestConfigFile:
    def test_parses_known_keys_with_comments(self, tmp_path):
        path = tmp_path / "storage.conf"
        path.write_text(
            "# storage settings\n"
            "backend = sim\n"
            "\n"
            "sim.read_latency_us = 50  # device latency\n"
            "sim.max_parallel = 4\n"
            "sim.request_overhead_ns = 500\n"
            "queue_capacity = 64\n")
        assert parse_config_file(path) == {
            "backend": "sim",
            "sim_read_latency_us": 50.0,
            "sim_max_parallel": 4,
            "sim_request_overhead_ns": 500.0,
            "queue_capacity": 64,
        }

    def test_unknown_key_reports_file_and_line(self, tmp_path):
        path = tmp_path / "bad.conf"
        path.write_text("backend = memory\n\nfoo = 1\n")
        with pytest.raises(CliError, match=r"bad\.conf:3: unknown config key"):
            parse_config_file(path)

    def test_line_without_equals_is_rejected(self, tmp_path):
        path = tmp_path / "bad.conf"
        path.write_text("backend memory\n")
        with pytest.raises(CliError, match="expected key=value"):
            parse_config_file(path)

    def test_unconvertible_value_is_rejected(self, tmp_path):
        path = tmp_path / "bad.conf"
        path.write_text("queue_capacity = many\n")
        with pytest.raises(CliError, match="bad value for queue_capacity"):
            parse_config_file(path)


class TestGen:
    def test_uniform_doc_and_files(self, workspace):
        doc = workspace["gen_doc"]
        assert doc["kind"] == "uniform"
        assert doc["n"] == 400 and doc["d"] == 6
        assert doc["queries_out"] == str(workspace["queries"])
        assert doc["n_queries"] == 12
        assert load_dataset(workspace["data"], "fvecs").data.shape == (400, 6)
        assert load_dataset(workspace["queries"], "fvecs").data.shape == (12, 6)

    def test_planted_reports_the_near_neighbor(self, tmp_path):
        data_path = tmp_path / "planted.fvecs"
        query_path = tmp_path / "pq.fvecs"
        rc, doc = run_json([
            "gen", "--kind", "planted", "--n", 500, "--d", 8, "--c", 2.0,
            "--seed", 2, "--out", data_path, "--queries-out", query_path,
        ])
        assert rc == 0
        planted = doc["planted_index"]
        assert 0 <= planted < 500
        assert doc["n_queries"] == 1
        data = load_dataset(data_path, "fvecs").data
        query = load_dataset(query_path, "fvecs").data[0]
        dists = np.linalg.norm(data.astype(np.float64) - query, axis=1)
        assert int(np.argmin(dists)) == planted
        assert dists[planted] <= 1.0
        assert np.delete(dists, planted).min() > 2.0

    def test_cluster_doc_carries_shape_parameters(self, tmp_path):
        out = tmp_path / "clusters.fvecs"
        rc, doc = run_json([
            "gen", "--kind", "gaussian-clusters", "--n", 200, "--d", 4,
            "--seed", 1, "--clusters", 5, "--spread", 0.1, "--out", out,
        ])
        assert rc == 0
        assert doc["clusters"] == 5 and doc["spread"] == 0.1
        assert load_dataset(out, "fvecs").data.shape == (200, 4)


class TestBuildAndVerify:
    def test_build_doc_reports_derived_parameters(self, workspace):
        doc = workspace["build_doc"]
        assert doc["n"] == 400 and doc["d"] == 6
        assert doc["m"] >= 1 and doc["L"] >= 1 and doc["r"] >= 1
        assert doc["S"] == 2 * doc["L"]
        assert doc["u"] >= 8 and doc["v"] == 32
        assert doc["buckets_bytes"] % 512 == 0
        for name in ("manifest.json", "buckets.bin", "tables.bin"):
            assert (workspace["index"] / name).is_file()

    def test_verify_passes_on_fresh_index(self, workspace):
        rc, doc = run_json(["verify", "--index", workspace["index"],
                            "--dataset", workspace["data"], "--format", "fvecs"])
        assert rc == 0
        assert doc["ok"] is True
        assert doc["violations"] == []
        assert doc["total_entries"] > 0

    def test_verify_fails_on_corrupted_index(self, workspace, tmp_path):
        clone = tmp_path / "index"
        shutil.copytree(workspace["index"], clone)
        buckets = clone / "buckets.bin"
        raw = bytearray(buckets.read_bytes())
        raw[16] ^= 0xFF
        buckets.write_bytes(bytes(raw))
        rc, doc = run_json(["verify", "--index", clone,
                            "--dataset", workspace["data"], "--format", "fvecs"])
        assert rc == 1
        assert doc["ok"] is False
        assert doc["violations"]


class TestQuery:
    def test_json_report_on_stdout(self, workspace):
        rc, doc = run_json(query_argv(workspace))
        assert rc == 0
        assert doc["backend"] == "memory"
        assert doc["k"] == 3
        assert doc["queries"] == 12 and doc["failed"] == 0
        records = doc["records"]
        assert len(records) == 12
        for record in records:
            assert len(record["ids"]) == len(record["distances"]) <= 3
            assert record["distances"] == sorted(record["distances"])
            assert record["n_io"] == record["table_reads"] + record["block_reads"]
        counted = sum(r["n_io"] for r in records)
        assert doc["mean_n_io"] == pytest.approx(counted / 12)
        assert doc["io_stats"]["submitted"] == counted

    def test_out_file_holds_records_and_stdout_summarizes(self, workspace,
                                                          tmp_path):
        out = tmp_path / "report.json"
        rc, summary = run_json(query_argv(workspace, "--out", out))
        assert rc == 0
        assert summary["out"] == str(out)
        assert "records" not in summary
        report = json.loads(out.read_text())
        assert len(report["records"]) == 12
        assert report["mean_n_io"] == summary["mean_n_io"]

    def test_csv_report_round_trips(self, workspace, tmp_path):
        out = tmp_path / "report.csv"
        rc, _ = run_json(query_argv(workspace, "--report", "csv", "--out", out))
        assert rc == 0
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 12
        for row in rows:
            ids = [int(x) for x in row["ids"].split(";")]
            dists = [float(x) for x in row["distances"].split(";")]
            assert len(ids) == len(dists) <= 3
            assert int(row["n_io"]) == int(row["table_reads"]) + int(row["block_reads"])

    def test_csv_report_on_stdout_matches_json(self, workspace):
        rc, text = run_cli(query_argv(workspace, "--report", "csv"))
        assert rc == 0
        rows = list(csv.DictReader(io.StringIO(text)))
        _, doc = run_json(query_argv(workspace))
        assert len(rows) == len(doc["records"])
        for row, record in zip(rows, doc["records"]):
            assert [int(x) for x in row["ids"].split(";")] == record["ids"]

    def test_sim_backend_flags_shape_the_run(self, workspace):
        rc, doc = run_json(query_argv(
            workspace, "--backend", "sim", "--sim-read-latency-us", 50,
            "--sim-max-parallel", 4))
        assert rc == 0
        assert doc["backend"] == "sim"
        # Every query performs at least one read, so the simulated
        # turnaround can never dip below one device latency.
        assert doc["mean_turnaround_ns"] >= 50_000.0
        assert doc["io_stats"]["mean_latency_ns"] >= 50_000.0

    def test_config_file_supplies_backend(self, workspace, tmp_path):
        conf = tmp_path / "storage.conf"
        conf.write_text("backend = sim\nsim.read_latency_us = 50\n")
        rc, doc = run_json(query_argv(workspace, "--config", conf))
        assert rc == 0
        assert doc["backend"] == "sim"

    def test_explicit_flag_overrides_config_file(self, workspace, tmp_path):
        conf = tmp_path / "storage.conf"
        conf.write_text("backend = sim\n")
        rc, doc = run_json(query_argv(workspace, "--config", conf,
                                      "--backend", "mem"))
        assert rc == 0
        assert doc["backend"] == "memory"

    def test_file_backend_matches_memory(self, workspace):
        _, mem_doc = run_json(query_argv(workspace))
        rc, file_doc = run_json(query_argv(workspace, "--backend", "file"))
        assert rc == 0
        for mine, theirs in zip(file_doc["records"], mem_doc["records"]):
            assert mine["ids"] == theirs["ids"]
            assert mine["distances"] == theirs["distances"]


class TestCost:
    ARGS = ["cost", "--t-compute", "1ms", "--n-io", 100,
            "--t-request", "1us", "--t-read", "10us"]

    def test_sync_and_async_predictions(self):
        rc, doc = run_json([*self.ARGS, "--mode", "sync"])
        assert rc == 0
        assert doc["sync_ns"] == pytest.approx(2_100_000.0)
        assert doc["async_ns"] == pytest.approx(1_100_000.0)
        assert doc["async_cpu_term_ns"] == pytest.approx(1_100_000.0)
        assert doc["async_read_term_ns"] == pytest.approx(1_000_000.0)
        assert doc["predicted_ns"] == doc["sync_ns"]
        rc, doc = run_json([*self.ARGS, "--mode", "async"])
        assert rc == 0
        assert doc["predicted_ns"] == doc["async_ns"]

    def test_target_yields_device_requirements(self):
        rc, doc = run_json([*self.ARGS, "--mode", "async", "--target", "2ms"])
        assert rc == 0
        assert doc["target_ns"] == 2_000_000.0
        assert doc["required_read_iops"] == pytest.approx(50_000.0)
        assert doc["required_request_rate"] == pytest.approx(100_000.0)

    def test_infeasible_target_nulls_fields_without_failing(self):
        rc, doc = run_json([*self.ARGS, "--mode", "sync", "--target", "0.5ms"])
        assert rc == 0
        assert doc["required_read_iops"] is None
        assert "not reachable" in doc["read_iops_infeasible"] or \
            doc["read_iops_infeasible"]
        assert doc["required_request_rate"] is None
        assert doc["request_rate_infeasible"]

    def test_compute_fraction_overrides_measured_compute(self):
        rc, doc = run_json([*self.ARGS, "--mode", "async", "--target", "2ms",
                            "--compute-fraction", 0.9])
        assert rc == 0
        assert doc["required_read_iops"] == pytest.approx(50_000.0)
        assert doc["required_request_rate"] == pytest.approx(500_000.0)

    def test_trace_supplies_measured_inputs(self, workspace, tmp_path):
        report_path = tmp_path / "report.json"
        rc, _ = run_json(query_argv(workspace, "--out", report_path))
        assert rc == 0
        report = json.loads(report_path.read_text())
        rc, doc = run_json(["cost", "--trace", report_path,
                            "--t-request", "1us", "--t-read", "10us",
                            "--mode", "async"])
        assert rc == 0
        assert doc["inputs_ns"]["n_io"] == pytest.approx(report["mean_n_io"])
        assert doc["inputs_ns"]["compute_ns"] == pytest.approx(
            report["mean_compute_ns"])
        assert doc["inputs_ns"]["request_ns"] == 1_000.0
        assert doc["predicted_ns"] > 0

    def test_missing_inputs_exit_with_usage_error(self, capsys):
        rc = main(["cost", "--t-request", "1us", "--t-read", "10us",
                   "--mode", "sync"])
        assert rc == 2
        assert "error:" in capsys.readouterr().err


class TestBench:
    def test_grid_writes_tables_and_figures(self, tmp_path):
        out = tmp_path / "grid"
        rc, doc = run_json([
            "bench", "--gen-n", 400, "--gen-d", 6, "--n-queries", 8,
            "--ws", "4", "--gammas", "1", "--ks", "1", "--conc", "1x1,2x2",
            "--seed", 4, "--out", out,
        ])
        assert rc == 0
        assert doc["mode"] == "grid"
        assert doc["cells"] == 2 and doc["failed_cells"] == 0
        assert isinstance(doc["best"], int)
        assert set(doc["files"]) == {"cells.csv", "queries.jsonl",
                                     "ratio_vs_nio.png", "latency_hist.png"}
        for name in doc["files"]:
            path = out / name
            assert path.is_file() and path.stat().st_size > 0
        with open(out / "cells.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        assert {(int(r["workers"]), int(r["interleave"])) for r in rows} == \
            {(1, 1), (2, 2)}
        for row in rows:
            assert float(row["ratio"]) >= 1.0
            assert row["error"] == ""
        lines = (out / "queries.jsonl").read_text().splitlines()
        assert len(lines) == 2 * 8
        record = json.loads(lines[0])
        assert {"cell", "query", "ratio", "n_io", "ids"} <= set(record)

    def test_scaling_writes_tables_and_figure(self, tmp_path):
        out = tmp_path / "scaling"
        rc, doc = run_json([
            "bench", "--scale-ns", "300,600", "--gen-d", 6, "--n-queries", 5,
            "--seed", 4, "--out", out,
        ])
        assert rc == 0
        assert doc["mode"] == "scaling"
        assert [p["n"] for p in doc["points"]] == [300, 600]
        for point in doc["points"]:
            assert point["executor"] == "engine"
            assert point["error"] == ""
            assert point["mean_n_io"] > 0
        assert isinstance(doc["loglog_slope"], float)
        assert set(doc["files"]) == {"scaling.csv", "scaling_queries.jsonl",
                                     "scaling.png"}
        with open(out / "scaling.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [int(r["n"]) for r in rows] == [300, 600]
        assert all(r["cross_checked"] == "True" for r in rows)
        lines = (out / "scaling_queries.jsonl").read_text().splitlines()
        assert len(lines) == 2 * 5
        assert json.loads(lines[0]) == {
            "n": 300, "query": 0, "n_io": json.loads(lines[0])["n_io"]}

    def test_dataset_without_queries_is_usage_error(self, workspace, capsys):
        rc = main(["bench", "--dataset", str(workspace["data"]),
                   "--out", str(workspace["root"] / "nowhere")])
        assert rc == 2
        assert "--queries is required" in capsys.readouterr().err


class TestErrorExits:
    def test_missing_dataset_file_exits_2(self, tmp_path, capsys):
        rc = main(["build", "--dataset", str(tmp_path / "absent.fvecs"),
                   "--format", "fvecs", "--c", "2", "--w", "4",
                   "--gamma", "1", "--seed", "1",
                   "--out", str(tmp_path / "index")])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_unknown_config_backend_exits_2(self, workspace, tmp_path, capsys):
        conf = tmp_path / "storage.conf"
        conf.write_text("backend = nvme\n")
        rc = main([str(a) for a in query_argv(workspace, "--config", conf)])
        assert rc == 2
        assert "unknown backend" in capsys.readouterr().err

    def test_missing_required_flag_is_an_argparse_exit(self):
        with pytest.raises(SystemExit):
            main(["build"])
