"""Simulate the nine rate-table rows and compare with the published columns.

Usage: python scripts/reproduce_table1.py [--out DIR] [--threads N] [--n-env-min N]
"""
import argparse
import sys
import time
from pathlib import Path

from nmdecay.rates import Table1Config, table1_report


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--n-env-min", type=int, default=2000)
    ap.add_argument("--tolerance", type=float, default=0.07)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    report = table1_report(Table1Config(n_env_min=args.n_env_min, tolerance=args.tolerance,
                                        threads=args.threads))
    report.to_json(out / "table1.json")
    text = report.to_text()
    (out / "table1.txt").write_text(text + "\n")
    print(text)
    print(f"\n{time.perf_counter() - start:.0f} s, wrote {out / 'table1.json'}")
    return 0 if report.passed else 2


if __name__ == "__main__":
    sys.exit(main())
