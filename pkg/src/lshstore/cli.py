"""Command-line interface.

Subcommands: gen, build, verify, query, bench, cost. A key=value config
file (--config) can supply the storage settings; explicit flags win.
Recognized config keys:

    backend                  memory | file | sim
    sim.read_latency_us      simulated device latency
    sim.max_parallel         simulated device parallelism
    sim.request_overhead_ns  simulated per-submit CPU cost
    queue_capacity           backend queue depth limit

Durations on the command line accept ns/us/ms/s suffixes; bare numbers
are nanoseconds.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

from . import bench as benchmod
from . import figures
from .builder import build_index, verify_index
from .costmodel import (CostInputs, CostModelError, InfeasibleTargetError,
                        async_query_time, async_terms, inputs_from_report,
                        required_read_iops, required_request_rate,
                        sync_query_time)
from .data import (DataError, generate_gaussian_clusters, generate_planted,
                   generate_uniform, load_dataset, write_dataset)
from .engine import open_index, run_batch
from .reference import QueryResult
from .storage import DEFAULT_QUEUE_CAPACITY, SimConfig

_BACKEND_ALIASES = {"mem": "memory", "memory": "memory", "file": "file", "sim": "sim"}

_CONFIG_KEYS = {
    "backend": ("backend", str),
    "sim.read_latency_us": ("sim_read_latency_us", float),
    "sim.max_parallel": ("sim_max_parallel", int),
    "sim.request_overhead_ns": ("sim_request_overhead_ns", float),
    "queue_capacity": ("queue_capacity", int),
}

_DURATION_UNITS = (("ns", 1.0), ("us", 1.0e3), ("ms", 1.0e6), ("s", 1.0e9))


class CliError(Exception):
    pass


def parse_duration_ns(text: str) -> float:
    """'100us' -> 100000.0. Bare numbers are nanoseconds."""
    text = text.strip()
    for suffix, scale in _DURATION_UNITS:
        if text.endswith(suffix):
            try:
                return float(text[: -len(suffix)]) * scale
            except ValueError:
                raise CliError(f"bad duration {text!r}")
    try:
        return float(text)
    except ValueError:
        raise CliError(f"bad duration {text!r} (use ns/us/ms/s suffix or bare ns)")


def _floats(text: str):
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str):
    return tuple(int(float(x)) for x in text.split(",") if x.strip())


def _conc_pairs(text: str):
    pairs = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            w, q = part.split("x")
            pairs.append((int(w), int(q)))
        except ValueError:
            raise CliError(f"bad concurrency spec {part!r}, expected WxQ")
    return tuple(pairs)


def parse_config_file(path) -> dict:
    """key = value lines; '#' starts a comment; unknown keys are errors."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise CliError(f"{path}:{lineno}: unknown config key {key!r} "
                           f"(known: {', '.join(sorted(_CONFIG_KEYS))})")
        dest, conv = _CONFIG_KEYS[key]
        try:
            out[dest] = conv(value)
        except ValueError:
            raise CliError(f"{path}:{lineno}: bad value for {key}: {value!r}")
    return out


def _add_storage_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--backend", default=None,
                        choices=sorted(set(_BACKEND_ALIASES)),
                        help="storage backend (default memory)")
    parser.add_argument("--queue-capacity", type=int, default=None)
    parser.add_argument("--sim-read-latency-us", type=float, default=None)
    parser.add_argument("--sim-max-parallel", type=int, default=None)
    parser.add_argument("--sim-request-overhead-ns", type=float, default=None)


def _resolve_storage(args):
    """Merge config file and flags into (backend, sim_config, queue_capacity)."""
    merged = {}
    if args.config:
        merged.update(parse_config_file(args.config))
    for dest in ("backend", "sim_read_latency_us", "sim_max_parallel",
                 "sim_request_overhead_ns", "queue_capacity"):
        value = getattr(args, dest, None)
        if value is not None:
            merged[dest] = value
    backend = _BACKEND_ALIASES.get(merged.get("backend", "memory"))
    if backend is None:
        raise CliError(f"unknown backend {merged['backend']!r}")
    default_sim = SimConfig()
    sim_config = SimConfig(
        read_latency_ns=int(merged.get("sim_read_latency_us",
                                       default_sim.read_latency_ns / 1000.0) * 1000),
        max_parallel=merged.get("sim_max_parallel", default_sim.max_parallel),
        request_overhead_ns=int(merged.get("sim_request_overhead_ns",
                                           default_sim.request_overhead_ns)),
    )
    queue_capacity = merged.get("queue_capacity", DEFAULT_QUEUE_CAPACITY)
    return backend, sim_config, queue_capacity


def _print_json(doc) -> None:
    json.dump(doc, sys.stdout, indent=2, default=str)
    sys.stdout.write("\n")


def _cmd_gen(args) -> int:
    if args.kind == "uniform":
        data, queries = generate_uniform(args.n, args.d, args.seed, args.n_queries)
        extra = {}
    elif args.kind == "gaussian-clusters":
        data, queries = generate_gaussian_clusters(
            args.n, args.d, args.seed, n_clusters=args.clusters,
            spread=args.spread, n_queries=args.n_queries)
        extra = {"clusters": args.clusters, "spread": args.spread}
    else:
        data, query, planted = generate_planted(
            args.n, args.d, args.c, args.seed, eps=args.eps, margin=args.margin)
        queries = query[None, :]
        extra = {"planted_index": planted, "c": args.c,
                 "eps": args.eps, "margin": args.margin}
    write_dataset(args.out, data, args.format)
    doc = {"kind": args.kind, "n": int(data.shape[0]), "d": int(data.shape[1]),
           "seed": args.seed, "format": args.format, "out": args.out, **extra}
    if args.queries_out:
        write_dataset(args.queries_out, queries, args.format)
        doc["queries_out"] = args.queries_out
        doc["n_queries"] = int(queries.shape[0])
    _print_json(doc)
    return 0


def _cmd_build(args) -> int:
    dataset = load_dataset(args.dataset, args.format)
    manifest = build_index(dataset.data, args.out, args.c, args.w, args.gamma,
                           args.seed, x_max=args.xmax)
    params = manifest.params
    _print_json({
        "out": args.out,
        "n": params.n, "d": params.d, "c": params.c, "w": params.w,
        "gamma": params.gamma, "seed": params.seed, "x_max": params.x_max,
        "rho": params.rho, "m": params.m, "L": params.L, "S": params.S,
        "r": params.r, "u": manifest.u, "v": manifest.v,
        "buckets_bytes": manifest.buckets_length,
        "tables_bytes": manifest.tables_length,
    })
    return 0


def _cmd_verify(args) -> int:
    dataset = load_dataset(args.dataset, args.format)
    report = verify_index(args.index, dataset.data)
    _print_json({
        "index": args.index, "ok": report.ok,
        "total_blocks": report.total_blocks,
        "total_entries": report.total_entries,
        "empty_slot_fraction": report.empty_slot_fraction,
        "violations": report.violations,
    })
    return 0 if report.ok else 1


def _query_records(results):
    records = []
    for qi, res in enumerate(results):
        if isinstance(res, QueryResult):
            records.append({
                "query": qi,
                "ids": [int(x) for x in res.ids],
                "distances": [float(x) for x in res.distances],
                "partial": res.partial,
                "table_reads": res.stats.table_reads,
                "block_reads": res.stats.block_reads,
                "n_io": res.stats.n_io,
                "radii": res.stats.radii_searched,
                "candidates": res.stats.candidates,
                "compute_ns": res.stats.compute_ns,
                "turnaround_ns": res.stats.turnaround_ns,
            })
        else:
            records.append({"query": qi, "error": repr(res)})
    return records


def _write_records_csv(fh, records) -> None:
    cols = ["query", "partial", "table_reads", "block_reads", "n_io", "radii",
            "candidates", "compute_ns", "turnaround_ns", "ids", "distances",
            "error"]
    writer = csv.DictWriter(fh, fieldnames=cols)
    writer.writeheader()
    for record in records:
        row = dict(record)
        if "ids" in row:
            row["ids"] = ";".join(str(x) for x in row["ids"])
            row["distances"] = ";".join(f"{x:.17g}" for x in row["distances"])
        writer.writerow(row)


def _cmd_query(args) -> int:
    backend, sim_config, queue_capacity = _resolve_storage(args)
    dataset = load_dataset(args.dataset, args.format)
    queries = load_dataset(args.queries, args.queries_format or args.format)
    index = open_index(args.index, dataset.data, backend=backend,
                       sim_config=sim_config, queue_capacity=queue_capacity)
    try:
        batch = run_batch(index, queries.data, args.k,
                          workers=args.workers, interleave=args.interleave)
    finally:
        index.close()
    failed = sum(1 for r in batch.results if not isinstance(r, QueryResult))
    doc = {
        "index": args.index, "k": args.k, "backend": backend,
        "workers": batch.workers, "interleave": batch.interleave,
        "queries": len(batch.results), "failed": failed,
        "elapsed_ns": batch.elapsed_ns,
        "mean_query_ns": batch.mean_query_ns,
        "mean_turnaround_ns": batch.mean_turnaround_ns,
        "mean_n_io": batch.mean_n_io,
        "mean_table_reads": batch.mean_table_reads,
        "mean_block_reads": batch.mean_block_reads,
        "mean_radii": batch.mean_radii,
        "mean_candidates": batch.mean_candidates,
        "mean_compute_ns": batch.mean_compute_ns,
        "io_stats": dataclasses.asdict(batch.io_stats) if batch.io_stats else None,
        "records": _query_records(batch.results),
    }
    if args.out:
        with open(args.out, "w", newline="") as fh:
            if args.report == "json":
                json.dump(doc, fh, indent=2)
                fh.write("\n")
            else:
                _write_records_csv(fh, doc["records"])
        summary = {k: v for k, v in doc.items() if k != "records"}
        summary["out"] = args.out
        _print_json(summary)
    else:
        if args.report == "json":
            _print_json(doc)
        else:
            _write_records_csv(sys.stdout, doc["records"])
    return 0 if failed == 0 else 1


def _cmd_cost(args) -> int:
    if args.trace:
        with open(args.trace) as fh:
            report = json.load(fh)
        request_ns = parse_duration_ns(args.t_request)
        read_ns = parse_duration_ns(args.t_read)
        inputs = inputs_from_report(report, request_ns, read_ns)
    else:
        if args.t_compute is None or args.n_io is None:
            raise CliError("need --t-compute and --n-io (or --trace)")
        inputs = CostInputs(
            compute_ns=parse_duration_ns(args.t_compute),
            n_io=args.n_io,
            request_ns=parse_duration_ns(args.t_request),
            read_ns=parse_duration_ns(args.t_read),
        )
    cpu_term, read_term = async_terms(inputs)
    doc = {
        "mode": args.mode,
        "inputs_ns": dataclasses.asdict(inputs),
        "sync_ns": sync_query_time(inputs),
        "async_ns": async_query_time(inputs),
        "async_cpu_term_ns": cpu_term,
        "async_read_term_ns": read_term,
        "predicted_ns": (sync_query_time(inputs) if args.mode == "sync"
                         else async_query_time(inputs)),
    }
    if args.target is not None:
        target_ns = parse_duration_ns(args.target)
        doc["target_ns"] = target_ns
        # A target below the CPU time has no finite requirement; report
        # that per field instead of failing the whole command.
        try:
            doc["required_read_iops"] = required_read_iops(target_ns, inputs, args.mode)
        except InfeasibleTargetError as exc:
            doc["required_read_iops"] = None
            doc["read_iops_infeasible"] = str(exc)
        try:
            doc["required_request_rate"] = required_request_rate(
                target_ns, inputs, compute_fraction=args.compute_fraction)
        except InfeasibleTargetError as exc:
            doc["required_request_rate"] = None
            doc["request_rate_infeasible"] = str(exc)
    _print_json(doc)
    return 0


def _cmd_bench(args) -> int:
    backend, sim_config, queue_capacity = _resolve_storage(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.scale_ns:
        rows = benchmod.scaling_sweep(
            _ints(args.scale_ns), args.gen_d, c=args.c,
            w=args.ws[0] if args.ws else 4.0,
            gamma=args.gammas[0] if args.gammas else 1.0,
            seed=args.seed, k=args.ks[0] if args.ks else 1,
            n_queries=args.n_queries, engine_limit=args.engine_limit)
        benchmod.write_scaling_csv(out_dir / "scaling.csv", rows)
        benchmod.write_scaling_records_jsonl(out_dir / "scaling_queries.jsonl", rows)
        good = [row for row in rows if not row.error]
        slope = None
        if len(good) >= 2:
            slope = benchmod.fit_loglog_slope([row.n for row in good],
                                              [row.mean_n_io for row in good])
        fig_written = figures.plot_scaling(rows, out_dir / "scaling.png", slope)
        _print_json({
            "out": str(out_dir), "mode": "scaling",
            "points": [{"n": row.n, "mean_n_io": row.mean_n_io,
                        "executor": row.executor, "error": row.error}
                       for row in rows],
            "loglog_slope": slope,
            "files": ["scaling.csv", "scaling_queries.jsonl"]
                     + (["scaling.png"] if fig_written else []),
        })
        return 0 if all(not row.error for row in rows) else 1

    if args.dataset:
        data = load_dataset(args.dataset, args.format).data
        if not args.queries:
            raise CliError("--queries is required with --dataset")
        queries = load_dataset(args.queries, args.queries_format or args.format).data
    else:
        data, queries = generate_uniform(args.gen_n, args.gen_d, args.seed,
                                         args.n_queries)
    cells, records = benchmod.run_accuracy_grid(
        data, queries, c=args.c, seed=args.seed, x_max=args.xmax,
        w_values=args.ws or (4.0,), gamma_values=args.gammas or (1.0,),
        k_values=args.ks or (1,), backends=(backend,),
        concurrency=args.conc or ((1, 1),),
        sim_config=sim_config, queue_capacity=queue_capacity)
    benchmod.write_cells_csv(out_dir / "cells.csv", cells)
    benchmod.write_records_jsonl(out_dir / "queries.jsonl", records)
    files = ["cells.csv", "queries.jsonl"]
    if figures.plot_ratio_vs_nio(cells, out_dir / "ratio_vs_nio.png"):
        files.append("ratio_vs_nio.png")
    if figures.plot_latency_hist(records, cells, out_dir / "latency_hist.png"):
        files.append("latency_hist.png")
    errors = [c for c in cells if c.error]
    _print_json({
        "out": str(out_dir), "mode": "grid",
        "cells": len(cells), "failed_cells": len(errors),
        "best": min((c.ratio, c.cell) for c in cells if not c.error)[1]
                if len(errors) < len(cells) else None,
        "files": files,
    })
    return 0 if not errors else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lshstore",
        description="Storage-backed LSH nearest-neighbor index.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--kind", required=True,
                   choices=("uniform", "gaussian-clusters", "planted"))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="fvecs", choices=("fvecs", "bvecs", "f32raw"))
    p.add_argument("--queries-out")
    p.add_argument("--n-queries", type=int, default=1000)
    p.add_argument("--clusters", type=int, default=10)
    p.add_argument("--spread", type=float, default=0.05)
    p.add_argument("--c", type=float, default=2.0)
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--margin", type=float, default=1.05)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("build", help="build an index directory")
    p.add_argument("--dataset", required=True)
    p.add_argument("--format", required=True, choices=("fvecs", "bvecs", "f32raw"))
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--w", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--xmax", type=float, default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build)

    p = sub.add_parser("verify", help="audit an index against its dataset")
    p.add_argument("--index", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--format", required=True, choices=("fvecs", "bvecs", "f32raw"))
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("query", help="run a query batch against an index")
    p.add_argument("--index", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--format", required=True, choices=("fvecs", "bvecs", "f32raw"))
    p.add_argument("--queries", required=True)
    p.add_argument("--queries-format", default=None,
                   choices=("fvecs", "bvecs", "f32raw"))
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--interleave", type=int, default=1)
    p.add_argument("--report", default="json", choices=("json", "csv"))
    p.add_argument("--out", help="write the report here instead of stdout")
    _add_storage_flags(p)
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("cost", help="analytic query-time model")
    p.add_argument("--t-compute", help="CPU time per query (duration)")
    p.add_argument("--n-io", type=float, help="mean reads per query")
    p.add_argument("--t-request", required=True, help="CPU time per submit")
    p.add_argument("--t-read", required=True, help="device time per read")
    p.add_argument("--mode", required=True, choices=("sync", "async"))
    p.add_argument("--target", help="latency target (duration)")
    p.add_argument("--compute-fraction", type=float, default=None,
                   help="model compute as this fraction of the target")
    p.add_argument("--trace", help="query report JSON; supplies compute/N_IO")
    p.set_defaults(func=_cmd_cost)

    p = sub.add_parser("bench", help="benchmark grid or scaling sweep")
    p.add_argument("--dataset")
    p.add_argument("--format", default="fvecs", choices=("fvecs", "bvecs", "f32raw"))
    p.add_argument("--queries")
    p.add_argument("--queries-format", default=None,
                   choices=("fvecs", "bvecs", "f32raw"))
    p.add_argument("--gen-n", type=int, default=10000,
                   help="synthetic dataset size when --dataset is absent")
    p.add_argument("--gen-d", type=int, default=16)
    p.add_argument("--n-queries", type=int, default=100)
    p.add_argument("--c", type=float, default=2.0)
    p.add_argument("--xmax", type=float, default=None)
    p.add_argument("--ws", type=_floats, default=None, help="comma list of w")
    p.add_argument("--gammas", type=_floats, default=None, help="comma list of gamma")
    p.add_argument("--ks", type=_ints, default=None, help="comma list of k")
    p.add_argument("--conc", type=_conc_pairs, default=None,
                   help="comma list of WxQ pairs, e.g. 1x1,4x16")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--scale-ns", default=None,
                   help="comma list of n values: run the scaling sweep instead")
    p.add_argument("--engine-limit", type=int,
                   default=benchmod.DEFAULT_SCALING_ENGINE_LIMIT)
    p.add_argument("--out", required=True, help="report directory")
    _add_storage_flags(p)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, DataError, CostModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
