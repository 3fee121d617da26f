"""Command-line entry point: bounds, simulations, the bound table, polytope tracking.

Every command writes its outputs plus ``manifest.json`` into ``--out``; the
manifest is echoed into each CSV header and ``lossnet rerun`` replays it.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .bounds import (
    REFERENCE_LADDER,
    bound_curve,
    power_law_fit,
    table1,
    tune_epsilon,
)
from .core import (
    BUILTIN_NAMES,
    LOAD_TARGETS,
    builtin,
    builtin_description,
    load_scenario,
    scale_scenario,
    validate_scenario,
)
from .lp import LpInfeasible, solve_lp
from .policy import (
    Policy,
    build_network_penalty_config,
    build_penalty_config,
    load_balancing_penalty,
)
from .polytope import AssumptionViolation, build_tracking_config, inflated_membership, load_polytope
from .sim import FeasibilityFault, default_grid, simulate_coupled, simulate_ensemble

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_FAULT = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _scenario(spec: str, scale: float):
    if spec in BUILTIN_NAMES:
        sc = builtin(spec)
    elif os.path.exists(spec):
        sc = load_scenario(spec)
    else:
        raise ConfigError(f"unknown scenario {spec!r}: not a built-in name or a file")
    bad = validate_scenario(sc)
    if bad:
        raise ConfigError("invalid scenario: " + "; ".join(bad))
    if scale != 1:
        sc = scale_scenario(sc, scale)
    return sc


def _check_eps(eps):
    if eps is not None and not 0 < eps <= 0.25:
        raise ConfigError("eps must be in (0, 0.25]")


def _fmt(v) -> str:
    return f"{float(v):.10g}"


def _header(manifest: dict) -> str:
    return "# manifest=" + json.dumps(manifest, sort_keys=True) + "\n"


def _write(out_dir: str, name: str, text: str, outputs: list):
    path = os.path.join(out_dir, name)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    outputs.append(name)
    return path


def _write_json_mirror(out_dir, name, csv_text, outputs):
    lines = [l for l in csv_text.splitlines() if not l.startswith("#")]
    head = lines[0].split(",")
    cols = {h: [] for h in head}
    for l in lines[1:]:
        for h, v in zip(head, l.split(",")):
            cols[h].append(float(v))
    _write(out_dir, name, json.dumps(cols, sort_keys=True, indent=1) + "\n", outputs)


def _penalty_policy(sc, spec, eps, beta):
    """Penalty policy for a scenario: load targets for the balancing built-ins, tuned eps otherwise."""
    if spec in LOAD_TARGETS:
        return Policy.from_penalty(load_balancing_penalty(sc, LOAD_TARGETS[spec], *([eps] if eps else [])))
    beta_arg = "max" if beta is None else beta
    if not sc.single_resource:
        if eps is None:
            raise ConfigError("network scenarios need an explicit --eps")
        return Policy.from_penalty(build_network_penalty_config(sc, eps, beta_arg))
    if eps is None:
        eps = tune_epsilon(sc).eps
    return Policy.from_penalty(build_penalty_config(sc, eps, beta_arg))


def _thinning_policy(sc, spec):
    if spec in LOAD_TARGETS:
        from .core import load_balancing_alphas

        return Policy.thinning(load_balancing_alphas(sc, LOAD_TARGETS[spec]))
    return Policy.thinning(solve_lp(sc).alpha)


def _policy(sc, args):
    kind = args.policy
    if kind == "penalty":
        return _penalty_policy(sc, args.scenario, args.eps, args.beta)
    if kind == "thinning":
        return _thinning_policy(sc, args.scenario)
    if kind == "greedy":
        return Policy.greedy()
    raise ConfigError("the polytope policy runs through the 'polytope' command")


def _grid(sc, args):
    t_max = args.tmax
    if t_max is not None and t_max <= 0:
        raise ConfigError("tmax must be positive")
    return default_grid(sc, t_max, args.grid)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_scenarios(args, manifest, outputs):
    rows = []
    for name in BUILTIN_NAMES:
        sc = builtin(name)
        rows.append(
            {
                "name": name,
                "description": builtin_description(name),
                "lambda": sc.lam.tolist(),
                "mu": sc.mu.tolist(),
                "reward": sc.reward.tolist(),
                "sizes": sc.sizes().tolist(),
                "capacity": sc.cap.tolist(),
            }
        )
    for r in rows:
        print(
            f"{r['name']:5s} lambda={r['lambda']} mu={r['mu']} r={r['reward']} b_i={r['sizes']} "
            f"b={r['capacity']}  ({r['description']})"
        )
    if args.json:
        _write(args.out, "scenarios.json", json.dumps(rows, indent=1) + "\n", outputs)


def cmd_bounds(args, manifest, outputs):
    _check_eps(args.eps)
    sc = _scenario(args.scenario, args.scale)
    eps, beta = args.eps, args.beta
    if eps is None:
        if not sc.single_resource:
            raise ConfigError("network scenarios need an explicit --eps")
        res = tune_epsilon(sc)
        eps, beta = res.eps, res.beta if beta is None else beta
    if beta is None:
        if sc.single_resource:
            beta = build_penalty_config(sc, eps).beta
        else:
            beta = build_network_penalty_config(sc, eps).beta
    horizon = args.horizon if args.horizon is not None else args.tmax
    if horizon is not None and horizon < 0:
        raise ConfigError("horizon must be nonnegative")
    t_max = 10.0 / float(sc.mu.min()) if horizon is None else horizon
    times = np.linspace(0.0, t_max, args.grid)
    curve = bound_curve(sc, eps, beta, times, exact=args.exact_upper)
    manifest["resolved"] = {"eps": eps, "beta": beta}
    text = _header(manifest) + curve.to_csv({"eps": _fmt(eps), "beta": _fmt(beta), **curve.meta})
    _write(args.out, "bounds.csv", text, outputs)
    if args.json:
        _write_json_mirror(args.out, "bounds.json", text, outputs)
    print(f"steady_upper={curve.steady_upper:.4f} steady_lower={curve.steady_lower:.4f} eps={eps:.4g} beta={beta:.6g}")


def _emit_trace(args, manifest, outputs, tr, name, extra=None):
    tr.meta.update(scale=args.scale, **(extra or {}))
    text = _header(manifest) + tr.to_csv()
    _write(args.out, name + ".csv", text, outputs)
    if args.json:
        _write_json_mirror(args.out, name + ".json", text, outputs)


def cmd_simulate(args, manifest, outputs):
    _check_eps(args.eps)
    sc = _scenario(args.scenario, args.scale)
    pol = _policy(sc, args)
    t_max, grid = _grid(sc, args)
    tr = simulate_ensemble(sc, pol, args.runs, args.seed, t_max, grid)
    _emit_trace(args, manifest, outputs, tr, f"trace_{args.policy}")
    print(f"mean reward at t_max: {tr.reward_mean[-1]:.6g} (se {tr.reward_se[-1]:.3g})")


def cmd_compare(args, manifest, outputs):
    _check_eps(args.eps)
    sc = _scenario(args.scenario, args.scale)
    pols = [_penalty_policy(sc, args.scenario, args.eps, args.beta), _thinning_policy(sc, args.scenario)]
    t_max, grid = _grid(sc, args)
    traces = simulate_coupled(sc, pols, args.runs, args.seed, t_max, grid)
    for pol, tr in zip(pols, traces):
        _emit_trace(args, manifest, outputs, tr, f"trace_{pol.label}")
    print(f"arrival stream sha256 {traces[0].meta['arrival_sha256']}")


def cmd_table1(args, manifest, outputs):
    sc = _scenario(args.scenario, 1)
    rows = table1(sc, use_corollary=args.corollary)
    lines = [_header(manifest), "# transient_error=sup over t >= 0.1/mu_min of 1 - L(t)/R*(t)\n"]
    lines.append("scale,eps,beta,steady_error_pct,transient_error_pct,ref_eps,ref_steady_pct,ref_transient_pct\n")
    for r in rows:
        ref = REFERENCE_LADDER.get(r["scale"], (np.nan,) * 3) if args.scenario == "eq52" else (np.nan,) * 3
        vals = [r["scale"], r["eps"], r["beta"], r["steady_error_pct"], r["transient_error_pct"], *ref]
        lines.append(",".join(_fmt(v) for v in vals) + "\n")
        print(
            f"n={r['scale']:5d} eps={r['eps']:.4f} beta={r['beta']:10.4f} "
            f"steady={r['steady_error_pct']:8.4f}% transient={r['transient_error_pct']:8.4f}%"
        )
    pos = [r for r in rows if r["steady_error_pct"] < 100]
    if len(pos) >= 3:
        a, p = power_law_fit([r["scale"] for r in pos], [r["steady_error_pct"] / 100 for r in pos])
        lines.append(f"# power_law scale = {a:.6g} * error^{p:.6g}\n")
        print(f"power law: scale = {a:.4f} * error^{p:.4f}")
    text = "".join(lines)
    _write(args.out, "table1.csv", text, outputs)
    if args.json:
        _write(args.out, "table1.json", json.dumps(rows, indent=1) + "\n", outputs)


def cmd_polytope(args, manifest, outputs):
    _check_eps(args.eps)
    eps = 0.1 if args.eps is None else args.eps
    sc = _scenario(args.scenario, args.scale)
    if not sc.single_resource:
        raise ConfigError("polytope tracking needs one allocation per class")
    # tracking runs on an uncapacitated system
    from .core import Scenario

    sc = Scenario(sc.classes, (float("inf"),), sc.name)
    P = load_polytope(args.polytope).scaled(args.scale)
    cfg = build_tracking_config(P, sc, eps, args.beta)
    t_max, grid = _grid(sc, args)
    tr = simulate_ensemble(sc, Policy.from_tracking(cfg), args.runs, args.seed, t_max, grid)
    _emit_trace(args, manifest, outputs, tr, "trace_polytope", {"gamma_star": _fmt(cfg.gamma_star)})
    xbar = tr.mean("x")
    lines = [_header(manifest), f"# gamma_star={_fmt(cfg.gamma_star)} beta={_fmt(cfg.beta)} y0={cfg.y0.tolist()}\n"]
    lines.append("# initial load constraint: " + cfg.meta["initial_load_constraint"] + "\n")
    lines.append("t," + ",".join(f"slack_{j + 1}" for j in range(P.rows)) + ",inside\n")
    worst = -np.inf
    for g, t in enumerate(tr.times):
        sl = inflated_membership(P, sc, eps, cfg.beta, cfg.y0, xbar[g], t)
        worst = max(worst, float(sl.max()))
        lines.append(",".join(_fmt(v) for v in [t, *sl]) + f",{int(np.all(sl <= 0))}\n")
    _write(args.out, "membership.csv", "".join(lines), outputs)
    print(f"gamma*={cfg.gamma_star:.4g} beta={cfg.beta:.4g} worst slack={worst:.4g}")


COMMANDS = {
    "scenarios": cmd_scenarios,
    "bounds": cmd_bounds,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "table1": cmd_table1,
    "polytope": cmd_polytope,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lossnet", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, scenario=True, sim=False):
        if scenario:
            p.add_argument("--scenario", default="eq52", help="built-in name or JSON file")
            p.add_argument("--scale", type=float, default=1.0)
        p.add_argument("--out", default="out")
        p.add_argument("--json", action="store_true", help="also write JSON mirrors")
        if sim:
            p.add_argument("--runs", type=int, default=100)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--tmax", type=float, default=None)
            p.add_argument("--grid", type=int, default=200)
            p.add_argument("--eps", type=float, default=None)
            p.add_argument("--beta", type=float, default=None)

    common(sub.add_parser("scenarios", help="list built-in scenarios"), scenario=False)
    p = sub.add_parser("bounds", help="upper/lower reward bound curves")
    common(p)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--tmax", type=float, default=None)
    p.add_argument("--horizon", type=float, default=None, help="alias of --tmax that also accepts 0")
    p.add_argument("--grid", type=int, default=200)
    p.add_argument("--exact-upper", action="store_true", help="per-t LP optimum instead of the closed form")
    p = sub.add_parser("simulate", help="ensemble simulation of one policy")
    common(p, sim=True)
    p.add_argument("--policy", choices=["penalty", "thinning", "greedy", "polytope"], default="penalty")
    p = sub.add_parser("compare", help="coupled penalty vs thinning")
    common(p, sim=True)
    p.add_argument("--coupled", action="store_true", default=True, help="shared streams (always on)")
    p = sub.add_parser("table1", help="tuned bound errors over scales 1..1024")
    common(p)
    p.add_argument("--corollary", action="store_true", help="tune on the looser closed-form ratio")
    p = sub.add_parser("polytope", help="polytope tracking run and membership report")
    common(p, sim=True)
    p.add_argument("--polytope", required=True, help="JSON file with D and h")
    p = sub.add_parser("rerun", help="replay a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="output directory (default: the manifest's)")
    return ap


def _manifest(args) -> dict:
    d = {k: v for k, v in vars(args).items() if k not in ("out",)}
    return {"command": args.command, "args": d}


def run(args) -> int:
    if args.command == "rerun":
        with open(args.manifest) as fh:
            man = json.load(fh)
        argv = [man["command"]]
        for k, v in man["args"].items():
            if k == "command" or v is None or v is False:
                continue
            flag = "--" + k.replace("_", "-")
            argv += [flag] if v is True else [flag, str(v)]
        argv += ["--out", args.out or os.path.dirname(os.path.abspath(args.manifest))]
        return main(argv)
    os.makedirs(args.out, exist_ok=True)
    manifest = _manifest(args)
    outputs: list[str] = []
    COMMANDS[args.command](args, manifest, outputs)
    manifest["outputs"] = outputs
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return EXIT_OK


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return run(args)
    except FeasibilityFault as exc:
        print(f"error: feasibility fault: {exc}", file=sys.stderr)
        return EXIT_FAULT
    except (AssumptionViolation, LpInfeasible) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
