"""Rates over a V0 grid and the slope of rate against V0^2/V.

Usage: python scripts/sweep.py CASE [--v0 0.05,0.1,0.15,0.2] [--v 1] [--out DIR]
"""
import argparse
import json
from pathlib import Path

from nmdecay.rates import rate_sweep
from nmdecay.spectral import le_rate_prediction, scfgr_rate, wba_rate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("case")
    ap.add_argument("--v0", default="0.05,0.1,0.15,0.2")
    ap.add_argument("--v", type=float, default=1.0)
    ap.add_argument("--kinds", default="SP,LE")
    ap.add_argument("--threads", default=None)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()

    res = rate_sweep(args.case, [float(x) for x in args.v0.split(",")], v=args.v,
                     kinds=args.kinds.split(","), threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"sweep_{res.case_id.value}"
    stem.with_suffix(".json").write_text(json.dumps(res.to_record(), indent=2, sort_keys=True))
    res.to_plot_csv(stem.with_suffix(".csv"))

    case = res.case_id.value
    print(f"case {case}, V={args.v:g}: WBA {wba_rate(case):.3f}, "
          f"SC-FGR {scfgr_rate(case, 1.0, args.v):.3f}, LE mean {le_rate_prediction(case, 1.0, args.v):.3f}")
    for p in res.points:
        row = "  ".join(f"{k} {e.rate:.4f}" for k, e in sorted(p.rates.items()))
        print(f"V0={p.v0:<6g} {row}")
    for kind, (slope, err) in sorted(res.slopes.items()):
        print(f"{kind} slope {slope:.4f} ± {err:.4f} (units V0^2/V)")
    print(f"wrote {stem}.json and {stem}.csv")


if __name__ == "__main__":
    main()
