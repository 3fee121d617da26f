"""Simulated penalty reward against the upper and lower bound curves.

For each scenario and scale, writes t, normalized mean reward, its SE and
both bounds (all divided by R*, time in units of 1/mu_min), and prints the
number of grid points outside the 3-SE envelope.
"""

import argparse
import os

import numpy as np

from lossnet.bounds import bound_curve, tune_epsilon
from lossnet.core import builtin, scale_scenario
from lossnet.policy import Policy, build_penalty_config
from lossnet.sim import simulate_ensemble


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenarios", nargs="+", default=["s1", "s2", "s3"])
    ap.add_argument("--scales", nargs="+", type=float, default=[10, 100, 1000])
    ap.add_argument("--runs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/envelope")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    for name in args.scenarios:
        for n in args.scales:
            sc = scale_scenario(builtin(name), n)
            res = tune_epsilon(sc)
            tr = simulate_ensemble(sc, Policy.from_penalty(build_penalty_config(sc, res.eps)), args.runs, args.seed)
            bc = bound_curve(sc, res.eps, res.beta, tr.times)
            R = bc.steady_upper
            m, se = tr.reward_mean, tr.reward_se
            out = int(np.sum((m < bc.lower - 3 * se) | (m > bc.upper + 3 * se)))
            data = np.column_stack([tr.times * sc.mu.min(), m / R, se / R, bc.upper / R, bc.lower / R])
            path = os.path.join(args.out, f"{name}_n{n:g}.csv")
            np.savetxt(path, data, delimiter=",", header="t,reward,se,upper,lower", comments="", fmt="%.10g")
            late = m[tr.times >= 5 / sc.mu.min()].mean() / R
            print(f"{name} n={n:g} eps={res.eps:.3f} late reward/R*={late:.3f} outside={out}")


if __name__ == "__main__":
    main()
