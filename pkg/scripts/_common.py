"""Shared helpers for the experiment scripts: argument parsing and TSV output."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

from mixdeconv import benchmarks as B


def parser(description: str, out_default: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--out", type=Path, default=Path("results") / out_default, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="first simulation and MEA seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads per MEA run")
    return p


def log_record(rec: B.Record) -> None:
    print(f"{rec.label:>14s}  rep {rec.replicate:2d}  alleles {rec.identical_alleles:.3f}  "
          f"iterations {rec.iterations:3d}  {rec.wall_time:6.1f}s", file=sys.stderr, flush=True)


def write_outputs(out: Path, records: list[B.Record]) -> list[dict]:
    """Write per-replicate records and the per-label summary; return the summary."""
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "replicates.tsv", "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(B.record_fields())
        for r in records:
            w.writerow(dataclasses.astuple(r))
    rows = B.summarise(records)
    with open(out / "summary.tsv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), delimiter="\t", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    for row in rows:
        print(f"{row['label']:>14s}  identical alleles {row['identical_alleles']:.3f} "
              f"[{row['ci_low']:.3f}, {row['ci_high']:.3f}]  iterations {row['iterations']:.1f}  "
              f"{row['wall_time_s']:.1f}s")
    return rows
