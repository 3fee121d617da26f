"""Tuned steady and transient bound errors over scales 1..1024, with the fitted power law."""

import argparse

from lossnet.bounds import power_law_fit, table1
from lossnet.core import builtin


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", default="eq52")
    ap.add_argument("--corollary", action="store_true", help="tune on the closed-form ratio")
    args = ap.parse_args()

    rows = table1(builtin(args.scenario), use_corollary=args.corollary)
    print(f"{'scale':>6} {'eps':>7} {'beta':>10} {'steady %':>10} {'transient %':>12}")
    for r in rows:
        print(f"{r['scale']:6d} {r['eps']:7.3f} {r['beta']:10.3f} {r['steady_error_pct']:10.3f} {r['transient_error_pct']:12.3f}")
    pos = [r for r in rows if r["steady_error_pct"] < 100]
    if len(pos) >= 3:
        a, p = power_law_fit([r["scale"] for r in pos], [r["steady_error_pct"] / 100 for r in pos])
        print(f"scale ~ {a:.4f} * error^{p:.4f}")


if __name__ == "__main__":
    main()
