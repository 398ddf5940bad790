"""Command-line front end.

Exit codes: 0 success, 2 input or validation error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import math
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor

from .config import ConfigError, load_config, sample_config
from .contact_map import (DEFAULT_MAX_GAP_S, TraceError, ShardedContactMap, read_map,
                          read_trace, write_map, write_trace, learn_from_trace)
from .planner import (ALL, MPP, REPRESENTATIVE, NoPrediction, Strategy, format_plan,
                      make_plan)
from .sim import CSV_FIELDS, ScenarioError, Simulation, run

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_IO = 3

REPORT_HEADER = ["run_id", "strategy", "seed"] + CSV_FIELDS


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _read_trace(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return read_trace(fh)


def cmd_learn(args) -> int:
    graph = learn_from_trace(_read_trace(args.trace), args.max_gap_s)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        write_map(graph, fh)
    return EXIT_OK


def cmd_plan(args) -> int:
    with open(args.map, encoding="utf-8", newline="") as fh:
        graph = read_map(fh)
    if args.root not in graph.aps:
        raise CliError(f"unknown root AP {args.root!r}")
    if args.strategy == REPRESENTATIVE:
        limits = dict(max_aps=args.max_aps, max_total_prefetch_bytes=args.budget_bytes,
                      target_hit_prob=args.target_hit_prob)
        if all(v is None for v in limits.values()):
            limits["max_aps"] = 4
        strategy = Strategy.representative(**limits)
    else:
        strategy = Strategy(args.strategy)
    tree, _ = ShardedContactMap(graph).build_tree(args.root, args.k, args.prune_epsilon,
                                                  args.max_children)
    g, n = args.generation_size, args.shortfall_pieces
    needed = [(j, min(g, n - j * g)) for j in range(math.ceil(n / g))]
    try:
        # one byte per piece so the budget flag counts pieces
        plan = make_plan("vehicle", "content", needed, tree, strategy, n, 1, g)
    except NoPrediction:
        plan = None
    sys.stdout.write(format_plan(tree, strategy, plan))
    return EXIT_OK


def _run_one(job):
    scenario, run_id = job
    return run_id, scenario.strategy, scenario.seed, run(scenario)


def format_row(run_id, strategy, seed, report) -> list[str]:
    return [run_id, strategy, str(seed)] + [f"{float(v):.6f}" for v in report.csv_values()]


def _check_header(path):
    """True if ``path`` exists and already holds rows under the report header."""
    if not os.path.exists(path) or os.path.getsize(path) == 0:
        return False
    with open(path, encoding="utf-8", newline="") as fh:
        header = next(csv.reader(fh), None)
    if header != REPORT_HEADER:
        raise CliError(f"{path}: existing file has a different header")
    return True


def cmd_simulate(args) -> int:
    base = load_config(args.config)
    first = base.seed if args.seed is None else args.seed
    if args.repeat < 1:
        raise CliError("--repeat must be >= 1")
    stem = os.path.splitext(os.path.basename(args.config))[0]
    jobs = [(dataclasses.replace(base, seed=s), f"{stem}-{s}")
            for s in range(first, first + args.repeat)]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, jobs))  # map keeps seed order
    else:
        results = [_run_one(j) for j in jobs]
    append = _check_header(args.out)
    with open(args.out, "a" if append else "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not append:
            w.writerow(REPORT_HEADER)
        for row in results:
            w.writerow(format_row(*row))
    return EXIT_OK


def read_report(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != REPORT_HEADER:
            raise CliError(f"{path}: header must be {','.join(REPORT_HEADER)}")
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(REPORT_HEADER):
                raise CliError(f"{path} line {reader.line_num}: expected "
                               f"{len(REPORT_HEADER)} fields")
            try:
                rows.append({"strategy": row[1],
                             **{k: float(v) for k, v in zip(CSV_FIELDS, row[3:])}})
            except ValueError:
                raise CliError(f"{path} line {reader.line_num}: non-numeric metric") from None
    return rows


def summarize(rows: list[dict]) -> dict[str, dict[str, tuple[float, float]]]:
    """Per-strategy (mean, sample std) of every metric; std is 0 for a single run."""
    groups: dict[str, list[dict]] = {}
    for r in rows:
        groups.setdefault(r["strategy"], []).append(r)
    out = {}
    for name in sorted(groups):
        rs = groups[name]
        out[name] = {}
        for k in CSV_FIELDS:
            vals = [r[k] for r in rs]
            sd = statistics.stdev(vals) if len(vals) > 1 else 0.0
            out[name][k] = (statistics.fmean(vals), sd)
    return out


def cmd_report(args) -> int:
    rows = []
    for path in args.files:
        rows.extend(read_report(path))
    summary = summarize(rows)
    counts = {}
    for r in rows:
        counts[r["strategy"]] = counts.get(r["strategy"], 0) + 1
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["strategy", "runs"] + [f"{k}_{s}" for k in CSV_FIELDS for s in ("mean", "std")])
    for name, stats in summary.items():
        w.writerow([name, counts[name]]
                   + [f"{x:.6f}" for k in CSV_FIELDS for x in stats[k]])
    return EXIT_OK


def cmd_trace(args) -> int:
    sim = Simulation(load_config(args.config))
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        write_trace(sim.trace, fh)
    return EXIT_OK


def cmd_sample_config(args) -> int:
    text = sample_config()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vcdsim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("learn", help="learn a contact map from a trace CSV")
    s.add_argument("--trace", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--max-gap-s", type=float, default=DEFAULT_MAX_GAP_S)
    s.set_defaults(func=cmd_learn)

    s = sub.add_parser("plan", help="print the lookahead tree and prefetch selection")
    s.add_argument("--map", required=True)
    s.add_argument("--root", required=True)
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--strategy", choices=[ALL, MPP, REPRESENTATIVE], required=True)
    s.add_argument("--max-aps", type=int)
    s.add_argument("--budget-bytes", type=float)
    s.add_argument("--target-hit-prob", type=float)
    s.add_argument("--prune-epsilon", type=float, default=0.01)
    s.add_argument("--max-children", type=int, default=8)
    s.add_argument("--shortfall-pieces", type=int, default=16,
                   help="pieces still missing; sizes the per-AP assignments")
    s.add_argument("--generation-size", type=int, default=16)
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("simulate", help="run a scenario config, appending report rows")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--repeat", type=int, default=1)
    s.add_argument("--seed", type=int, help="first seed (default: the config's)")
    s.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("report", help="per-strategy mean and std over report CSVs")
    s.add_argument("files", nargs="+")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("trace", help="write the mobility trace a config generates")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_trace)

    s = sub.add_parser("sample-config", help="print a config with every default")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sample_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (ConfigError, ScenarioError, TraceError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
