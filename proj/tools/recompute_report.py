#!/usr/bin/env python3
"""Recompute report.csv metrics from eval.csv and compare with the CLI output."""
import argparse
import csv
import sys
from pathlib import Path


def rows(path):
    with open(path, newline="") as f:
        lines = [l for l in f if l.strip() and not l.startswith("#")]
    return list(csv.DictReader(lines))


def pct(start, end):
    return 100.0 * (start - end) / start if start else 0.0


def recompute(eval_csv):
    w = {r["variant"]: float(r["waiting_time"]) for r in rows(eval_csv)}
    out = {f"waiting_{k}": v for k, v in w.items()}
    out["es_vs_initial_pct"] = pct(w["initial"], w["es"])
    out["marl_vs_es_pct"] = pct(w["es"], w["marl"])
    out["total_vs_initial_pct"] = pct(w["initial"], w["marl"])
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--tol", type=float, default=1e-6, help="relative tolerance")
    args = ap.parse_args()

    want = recompute(args.out_dir / "eval.csv")
    got = {r["metric"]: float(r["value"]) for r in rows(args.out_dir / "report.csv")}
    bad = 0
    for k, v in want.items():
        g = got.get(k)
        ok = g is not None and abs(g - v) <= args.tol * max(1.0, abs(v))
        bad += not ok
        print(f"{'ok ' if ok else 'BAD'} {k:24s} report={g} recomputed={v:.10g}")
    extra = set(got) - set(want)
    if extra:
        print("unexpected metrics:", ", ".join(sorted(extra)))
        bad += len(extra)
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
