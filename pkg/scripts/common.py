"""Shared helpers for the experiment scripts."""

import argparse
import csv
import statistics
import sys
import time

from vcdsim.cli import REPORT_HEADER, format_row
from vcdsim.sim import run


def parser(doc, seeds):
    p = argparse.ArgumentParser(description=doc)
    p.add_argument("--seeds", type=int, default=seeds, help="number of seeds (0..n-1)")
    p.add_argument("--out", help="write every run as a report CSV (readable by `vcdsim report`)")
    return p


def run_grid(cells, seeds, metrics, out=None):
    """Run ``cells`` (label -> seed -> Scenario) over ``seeds`` and print means.

    Returns label -> list of reports.
    """
    results, rows = {}, []
    t0 = time.perf_counter()
    for label, make in cells.items():
        reports = []
        for s in range(seeds):
            sc = make(s)
            r = run(sc)
            reports.append(r)
            rows.append(format_row(f"{label}-{s}", sc.strategy, s, r))
        results[label] = reports
        line = "  ".join(f"{m}={statistics.fmean(getattr(r, m) for r in reports):.4g}"
                         for m in metrics)
        print(f"{label:<24} {line}  ({time.perf_counter() - t0:.0f} s)", flush=True)
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_HEADER)
            w.writerows(rows)
        print(f"wrote {len(rows)} rows to {out}", file=sys.stderr)
    return results
