#!/usr/bin/env python3
"""Run the stage-2 reranker benchmarks and write raw timings plus a summary.

Two suites: `wallclock` compares the attention and transport rerankers at the
production shape (64 patches, 512-d, shortlist 100), `scaling` fits log-log
time-vs-patch-count slopes over n in {16, 64, 256}. Raw per-query timings go
to CSV, aggregates to JSON."""

import argparse
import json
from pathlib import Path

from facevit.bench import (env_metadata, rows_to_csv, run_scaling,
                           run_wallclock, summary_to_json)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("suite", choices=["wallclock", "scaling", "all"])
    ap.add_argument("--out-dir", type=Path, default=Path("bench_out"))
    ap.add_argument("--reps", type=int, default=None,
                    help="queries per timing run (default 100 wallclock, 7 scaling)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    args.out_dir.mkdir(parents=True, exist_ok=True)
    suites = ["wallclock", "scaling"] if args.suite == "all" else [args.suite]
    for suite in suites:
        if suite == "wallclock":
            report = run_wallclock(reps=args.reps or 100, seed=args.seed)
            headline = f"median ratio h2l/emd = {report['ratio_h2l_over_emd']:.3f}"
        else:
            report = run_scaling(reps=args.reps or 7, seed=args.seed)
            headline = (f"slopes {json.dumps(report['slopes'])}"
                        f" gap = {report['slope_gap']:.3f}")
        csv_path = args.out_dir / f"{suite}.csv"
        json_path = args.out_dir / f"{suite}.json"
        rows_to_csv(report["rows"], csv_path, env_metadata())
        summary_to_json(report, json_path)
        print(f"{suite}: {headline}")
        print(f"  raw timings -> {csv_path}")
        print(f"  summary     -> {json_path}")


if __name__ == "__main__":
    main()
