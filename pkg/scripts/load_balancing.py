"""Per-class loads over time for the two load-balancing scenarios.

Writes one CSV per scenario with the mean class loads b_i x_i(t) under
the penalty and thinning policies, and prints a few time slices.
"""

import argparse
import os

import numpy as np

from lossnet.cli import LOAD_TARGETS
from lossnet.core import builtin, load_balancing_alphas
from lossnet.policy import Policy, load_balancing_penalty
from lossnet.sim import simulate_coupled


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/load_balancing")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    for name in ("s4", "s5"):
        sc = builtin(name)
        frac = LOAD_TARGETS[name]
        target = np.asarray(frac) * sc.capacity[0]
        pen = Policy.from_penalty(load_balancing_penalty(sc, frac))
        thin = Policy.thinning(load_balancing_alphas(sc, frac))
        grid = np.linspace(0, 10 / sc.mu.min(), 201)
        a, b = simulate_coupled(sc, [pen, thin], args.runs, args.seed, grid=grid)
        pl, tl = a.mean("x") * sc.sizes(), b.mean("x") * sc.sizes()
        cols = ["t"] + [f"penalty_{i + 1}" for i in range(sc.m)] + [f"thinning_{i + 1}" for i in range(sc.m)]
        data = np.column_stack([grid, pl, tl])
        np.savetxt(os.path.join(args.out, f"{name}.csv"), data, delimiter=",", header=",".join(cols), comments="", fmt="%.10g")
        print(f"{name}: targets {target.tolist()}")
        for frac_t in (0.02, 0.1, 0.2, 1.0):
            g = int(np.argmin(np.abs(grid - frac_t * grid[-1])))
            print(f"  t={grid[g]:6.2f} penalty={np.round(pl[g], 2).tolist()} thinning={np.round(tl[g], 2).tolist()}")


if __name__ == "__main__":
    main()
