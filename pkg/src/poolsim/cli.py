"""Command line driver.

Subcommands::

    poolsim bound --config cfg.json [--rho R]        greedy ceiling summary
    poolsim assign --config cfg.json [--rho R]       full target profile
    poolsim rank --config cfg.json [--count K]       best-first slot listing
    poolsim simulate --config cfg.json --policy slta --T 180 --reps 20
    poolsim fluid --config cfg.json --init empty --T 20 --dt 1e-3
    poolsim table1 --scale 50 100 200 --reps 20      canned scaling matrix
    poolsim suboptimal --a 1 --eps 0.05 --rho 1      two-pool counterexample

Exit codes: 0 on success, 2 for configuration or parameter problems, 3 when a
runtime invariant breaks (a run landing above its utility ceiling, or the
fluid integrator rejecting a step).

CSV output uses '.' decimals and 9 significant digits; JSON output is sorted
and indented. Fixed seeds give identical bytes for everything except the
wall-clock column of per-run metrics.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .assign import optimal_assignment
from .config import ConfigError, ExperimentConfig, load_config
from .fluid import IntegratorConfig, equilibrium_profile, integrate_fluid, verify_reflection_system
from .model import LogQuality, SystemConfig, UtilityFamily
from .sim import Metrics, RunConfig, coupled_simulate, simulate

__all__ = ["main"]

METRIC_COLUMNS = (
    "policy", "n", "rho", "seed", "rep", "avg_u", "avg_s",
    "empirical_bound", "bound_rho", "r_final", "switches", "events", "wall_ms",
)

TABLE1_RHOS = (9.75, 10.0)
TABLE1_HORIZON = 180.0
TABLE1_SCALE = (50, 100, 200)


def _fmt(value: Any) -> str:
    """CSV cell formatting: 9 significant digits for floats, '' for None."""
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def _write_text(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _csv(rows: Sequence[Sequence[Any]], header: Sequence[str]) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _json_text(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load(args: argparse.Namespace) -> ExperimentConfig:
    if not getattr(args, "config", None):
        raise ConfigError("", "this command needs --config")
    return load_config(args.config)


# ---------------------------------------------------------------------------
# assignment commands


def _assignment_payload(cfg: ExperimentConfig, rho: float) -> dict:
    assign = optimal_assignment(cfg.family, cfg.fractions, rho)
    return {
        "rho": rho,
        "sigma_star": [assign.sigma_star.cls, assign.sigma_star.level],
        "rank": assign.sigma_index,
        "residual": assign.residual,
        "bound": assign.bound,
        "q_star": [[c, l, v] for c, l, v in assign.q_star.to_pairs()],
    }


def cmd_bound(args: argparse.Namespace) -> int:
    cfg = _load(args)
    payload = _assignment_payload(cfg, cfg.offered_load(args.rho))
    del payload["q_star"]
    _write_text(_json_text(payload), args.out)
    return 0


def cmd_assign(args: argparse.Namespace) -> int:
    cfg = _load(args)
    payload = _assignment_payload(cfg, cfg.offered_load(args.rho))
    mass = sum(v for _, _, v in payload["q_star"])
    payload["mass"] = mass
    payload["class_mass"] = [
        sum(v for c, _, v in payload["q_star"] if c == ci + 1)
        for ci in range(len(cfg.fractions))
    ]
    _write_text(_json_text(payload), args.out)
    return 0


def cmd_rank(args: argparse.Namespace) -> int:
    cfg = _load(args)
    if args.count < 1:
        raise ConfigError("count", f"must be >= 1, got {args.count}")
    family = cfg.family
    slots = family.enumerate_ranked(args.count)
    payload = [
        {"rank": k + 1, "cls": c.cls, "level": c.level,
         "marginal": family.marginal(c.cls, c.level - 1)}
        for k, c in enumerate(slots)
    ]
    _write_text(_json_text(payload), args.out)
    return 0


# ---------------------------------------------------------------------------
# simulation commands


def _metric_row(m: Metrics) -> list:
    return [
        m.policy, m.n, m.rho, m.seed, m.replication, m.avg_u, m.avg_s,
        m.empirical_bound, m.bound_rho, m.r_final, m.switches, m.events,
        m.wall_ms,
    ]


def _run_cell(payload: dict) -> list[list]:
    """Worker: one (system, seed, replication) cell, all policies coupled."""
    system: SystemConfig = payload["system"]
    run: RunConfig = payload["run"]
    policies = [_policy_for(name, payload["beta"]) for name in payload["policies"]]
    rows = []
    for m in coupled_simulate(system, policies, run):
        rows.append(_metric_row(m))
    return rows


def _policy_for(name: str, beta: float | None):
    from .policies import parse_policy

    return parse_policy(name, beta=beta)


def _fan_out(cells: list[dict], threads: int) -> list[list[list]]:
    """Run cells in order; with threads > 1 fan out but keep input order."""
    if threads <= 1:
        return [_run_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_run_cell, cells))


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _load(args)
    policies = args.policy or cfg.policies
    if not policies:
        raise ConfigError("policies", "no policies given (flag --policy or config list)")
    n_values = args.n or cfg.sweep.n_values or ([cfg.n] if cfg.n else [])
    if not n_values:
        raise ConfigError("n", "no pool count given (flag --n, config n, or sweep.n)")
    rho_values = args.rho or cfg.sweep.rho_values or [cfg.offered_load()]
    seeds = [args.seed] if args.seed is not None else (cfg.sweep.seeds or [0])
    reps = args.reps if args.reps is not None else cfg.sweep.replications
    horizon = args.T if args.T is not None else cfg.run.horizon
    warmup = args.warmup if args.warmup is not None else cfg.run.warmup
    init = args.init if args.init is not None else cfg.run.init

    cells = []
    for n in n_values:
        for rho in rho_values:
            system = cfg.system(n=n, rho=rho)
            for seed in seeds:
                for rep in range(reps):
                    run = RunConfig(
                        horizon=horizon, warmup=warmup, seed=seed,
                        replication=rep, init=init, batches=cfg.run.batches,
                    )
                    cells.append({
                        "system": system, "run": run,
                        "policies": policies, "beta": cfg.beta,
                    })
    rows = [row for cell_rows in _fan_out(cells, args.threads) for row in cell_rows]
    _write_text(_csv(rows, METRIC_COLUMNS), args.out or cfg.out)
    return 0


def table1_system(n: int, rho: float) -> SystemConfig:
    """The two-class log-quality benchmark used by the scaling matrix."""
    family = UtilityFamily((LogQuality(20.0), LogQuality(30.0)))
    return SystemConfig.from_rho(n=n, alpha=(0.5, 0.5), rho=rho, mu=1.0, family=family)


def cmd_table1(args: argparse.Namespace) -> int:
    scale = args.scale or list(TABLE1_SCALE)
    rhos = args.rho or list(TABLE1_RHOS)
    seed = args.seed if args.seed is not None else 0
    if args.reps < 1:
        raise ConfigError("reps", f"must be >= 1, got {args.reps}")
    cells = []
    for n in scale:
        for rho in rhos:
            system = table1_system(n, rho)
            for rep in range(args.reps):
                run = RunConfig(
                    horizon=args.T, seed=seed, replication=rep, init="optimal",
                )
                cells.append({
                    "system": system, "run": run,
                    "policies": ["jlmu", "slta"], "beta": None,
                })
    results = _fan_out(cells, args.threads)

    # cell -> per-rep (bound at realized mass, jlmu mean, slta mean)
    per_rep: dict[tuple[int, float, int], dict[str, float]] = {}
    for cell, rows in zip(cells, results):
        n = cell["system"].n
        rho = cell["system"].rho
        rep = cell["run"].replication
        entry: dict[str, float] = {}
        for row in rows:
            record = dict(zip(METRIC_COLUMNS, row))
            if record["empirical_bound"] < record["avg_u"] - 1e-9:
                raise RuntimeError(
                    f"run above its ceiling: {record['policy']} n={n} rho={rho}"
                )
            entry[record["policy"]] = record["avg_u"]
            entry["u_star"] = record["empirical_bound"]
        per_rep[(n, rho, rep)] = entry

    header = ["n", "rep"]
    for rho in rhos:
        tag = _fmt(float(rho))
        header += [f"u_star@{tag}", f"jlmu@{tag}", f"slta@{tag}"]
    rows_out: list[list] = []
    for n in scale:
        for rep in range(args.reps):
            row: list = [n, rep]
            for rho in rhos:
                e = per_rep[(n, float(rho), rep)]
                row += [e["u_star"], e["jlmu"], e["slta"]]
            rows_out.append(row)
        mean_row: list = [n, "mean"]
        for rho in rhos:
            for key in ("u_star", "jlmu", "slta"):
                vals = [per_rep[(n, float(rho), r)][key] for r in range(args.reps)]
                mean_row.append(sum(vals) / len(vals))
        rows_out.append(mean_row)

    out = args.out
    if out and Path(out).is_dir():
        out = str(Path(out) / "table1.csv")
    _write_text(_csv(rows_out, header), out)
    return 0


def cmd_suboptimal(args: argparse.Namespace) -> int:
    from .model import CappedLinear, Linear

    a, eps, rho = args.a, args.eps, args.rho
    if not a > 0:
        raise ConfigError("a", f"must be > 0, got {a}")
    if not 0 < eps < 1:
        raise ConfigError("eps", f"must be in (0, 1), got {eps}")
    if not rho > 0:
        raise ConfigError("rho", f"must be > 0, got {rho}")
    if args.reps < 2:
        raise ConfigError("reps", "need at least 2 replications for error bars")
    seed = args.seed if args.seed is not None else 0

    # Two pools, one per class; total arrival rate rho * mu splits as n * lam.
    family = UtilityFamily((Linear(a * eps), CappedLinear(a, 1)))
    system = SystemConfig.from_rho(n=2, alpha=(0.5, 0.5), rho=rho / 2.0, mu=1.0, family=family)

    sums: dict[str, list[float]] = {"jlmu": [], "fixed:2": []}
    wins = 0
    for rep in range(args.reps):
        run = RunConfig(horizon=args.T, seed=seed, replication=rep, init="empty")
        pair = coupled_simulate(system, ["jlmu", "fixed:2"], run)
        agg = {m.policy: 2.0 * m.avg_u for m in pair}
        sums["jlmu"].append(agg["jlmu"])
        sums["fixed:2"].append(agg["fixed:2"])
        if agg["jlmu"] < agg["fixed:2"]:
            wins += 1

    def mean_se(vals: list[float]) -> tuple[float, float]:
        arr = np.asarray(vals)
        return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))

    jl_mean, jl_se = mean_se(sums["jlmu"])
    fx_mean, fx_se = mean_se(sums["fixed:2"])
    report = {
        "a": a, "eps": eps, "rho": rho, "horizon": args.T,
        "reps": args.reps,
        "closed_form_fixed2": a * (1.0 - math.exp(-rho)),
        "jlmu_mean_formula": a * (eps * rho + rho / (rho + 1.0)),
        "fixed2_mean": fx_mean, "fixed2_se": fx_se,
        "jlmu_mean": jl_mean, "jlmu_se": jl_se,
        "fixed2_beats_jlmu": wins,
    }
    report["seed"] = seed
    _write_text(_json_text(report), args.out)
    return 0


# ---------------------------------------------------------------------------
# fluid command


def _fluid_system(cfg: ExperimentConfig, rho: float | None) -> SystemConfig:
    """The mean-field model needs no pool count; pick the smallest valid one."""
    if cfg.n is not None:
        return cfg.system(rho=rho)
    for n in range(1, 100001):
        if all(abs(n * f - round(n * f)) < 1e-9 for f in cfg.fractions):
            return cfg.system(n=n, rho=rho)
    raise ConfigError("classes", "fractions have no small common denominator; set n")


def cmd_fluid(args: argparse.Namespace) -> int:
    cfg = _load(args)
    system = _fluid_system(cfg, args.rho)
    integ = IntegratorConfig.for_system(system, horizon=args.T)
    if args.dt is not None:
        integ = replace(integ, dt=args.dt)
    if args.levels is not None:
        integ = replace(integ, levels=args.levels)
    record = args.record_every if args.record_every is not None else max(
        1, int(round(integ.horizon / integ.dt / 400))
    )
    if args.verify_reflection:
        record = 1  # the reflection check needs every step
    integ = replace(integ, record_every=record)

    if args.init == "empty":
        q0 = None
    else:
        q0 = equilibrium_profile(system)
    path = integrate_fluid(system, q0=q0, config=integ)

    rows = []
    for k, t in enumerate(path.times):
        q = path.profile(k)
        mass = float(q.mass())
        emitted = False
        for c, l, v in q.to_pairs():
            if v > 1e-12:
                rows.append([float(t), c, l, float(v), mass])
                emitted = True
        if not emitted:
            rows.append([float(t), 0, 0, 0.0, mass])
    _write_text(_csv(rows, ("t", "cls", "level", "q", "mass")), args.out or cfg.out)

    if args.verify_reflection:
        report = verify_reflection_system(path)
        payload = {
            "dt": integ.dt,
            "horizon": integ.horizon,
            "slots_checked": len(report.slots),
            "max_flow_residual": max(report.flow_residuals),
            "max_state_residual": max(report.state_residuals),
            "max_residual": report.max_residual,
        }
        sys.stdout.write(_json_text(payload))
    return 0


# ---------------------------------------------------------------------------
# parser plumbing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poolsim",
        description="Task assignment across heterogeneous pools: bounds, policies, fluid model.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, default=None, help="base RNG seed")
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--threads", type=int, default=1,
                        help="worker processes for replication fan-out")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bound", parents=[common], help="ceiling value and boundary slot")
    p.add_argument("--rho", type=float, default=None, help="override the config load")
    p.set_defaults(handler=cmd_bound)

    p = sub.add_parser("assign", parents=[common], help="full greedy-fill profile")
    p.add_argument("--rho", type=float, default=None)
    p.set_defaults(handler=cmd_assign)

    p = sub.add_parser("rank", parents=[common], help="best-first slot enumeration")
    p.add_argument("--count", "-k", type=int, default=20, help="slots to print")
    p.set_defaults(handler=cmd_rank)

    p = sub.add_parser("simulate", parents=[common], help="finite-system runs, CSV metrics")
    p.add_argument("--policy", action="append",
                   help="jlmu | slta | random | fixed:<cls>; repeat to couple several")
    p.add_argument("--T", type=float, default=None, help="run horizon")
    p.add_argument("--warmup", type=float, default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--n", type=int, action="append", help="pool count; repeatable")
    p.add_argument("--rho", type=float, action="append", help="offered load; repeatable")
    p.add_argument("--init", choices=("empty", "optimal"), default=None)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("fluid", parents=[common], help="integrate the mean-field model")
    p.add_argument("--init", choices=("empty", "qstar"), default="empty")
    p.add_argument("--T", type=float, default=20.0)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--levels", type=int, default=None)
    p.add_argument("--record-every", type=int, default=None)
    p.add_argument("--verify-reflection", action="store_true",
                   help="rebuild the path from its reflected free process and report residuals")
    p.set_defaults(handler=cmd_fluid)

    p = sub.add_parser("table1", parents=[common], help="canned scaling matrix (two-class benchmark)")
    p.add_argument("--scale", type=int, nargs="+", default=None, help="pool counts")
    p.add_argument("--rho", type=float, nargs="+", default=None)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--T", type=float, default=TABLE1_HORIZON)
    p.set_defaults(handler=cmd_table1)

    p = sub.add_parser("suboptimal", parents=[common], help="two-pool greedy counterexample")
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--T", type=float, default=5000.0)
    p.add_argument("--reps", type=int, default=20)
    p.set_defaults(handler=cmd_suboptimal)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
