"""Command-line entry point: ``invpoa <subcommand> ...``.

Subcommands::

    assign ue INSTANCE
    assign so INSTANCE --welfare SPEC
    poa INSTANCE --welfare SPEC[,SPEC...]
    sweep INSTANCE --rate-min R --rate-max R --steps N --welfare SPECS [--plot out.svg]
    invariance FILE --class {cnc,cuc} --trials N
    gen-city --nodes N --edges M --trips T --seed S

``--out`` writes CSV (or the instance JSON for ``gen-city``).  Sweep worker
processes come from the ``INVPOA_THREADS`` environment variable.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .equilibrium import UE_CONFIG, solve_user_equilibrium
from .fw import FWConfig
from .games import check_invariance, random_transform, transform_instance
from .instances import InstanceFormatError, emit_instance, parse_game_text, parse_instance_text
from .network import Instance, NetworkError
from .optimum import SO_CONFIG, SolverError, solve_social_optimum
from .poa import PoAReport, SweepRow, SweepSpec, evaluate_poa, toll_sweep
from .synth import generate_synthetic_city
from .welfare import WelfareDomainError, WelfareSpec

log = logging.getLogger("invpoa")

SWEEP_COLUMNS = (
    "rate", "spec", "poa", "poa_raw", "welfare_star", "welfare_ne",
    "ue_relative_gap", "so_relative_gap", "converged", "error",
)


class CLIError(Exception):
    pass


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return format(value, ".12g")
    return str(value)


def sweep_csv(rows: Sequence[SweepRow], timing: bool = False) -> str:
    """CSV text: fixed columns, then ``u_star:<group>`` and ``u_ne:<group>``, then optional ``wall_time``."""
    groups: tuple[str, ...] = rows[0].groups if rows else ()
    header = list(SWEEP_COLUMNS) + [f"u_star:{g}" for g in groups] + [f"u_ne:{g}" for g in groups]
    if timing:
        header.append("wall_time")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        line = [r.rate, r.spec, r.poa, r.poa_raw, r.welfare_star, r.welfare_ne,
                r.ue_relative_gap, r.so_relative_gap, r.converged, r.error]
        line += list(r.u_star) + list(r.u_ne)
        if timing:
            line.append(r.wall_time)
        w.writerow([_fmt(v) for v in line])
    return buf.getvalue()


def report_row(report: PoAReport, rate: float | None = None) -> SweepRow:
    return SweepRow(
        rate=math.nan if rate is None else rate,
        spec=report.spec,
        poa=report.poa,
        poa_raw=report.poa_raw,
        welfare_star=report.welfare_star,
        welfare_ne=report.welfare_ne,
        u_star=tuple(map(float, report.u_star)),
        u_ne=tuple(map(float, report.u_ne)),
        groups=report.groups,
        ue_relative_gap=report.ue_relative_gap,
        so_relative_gap=report.so_relative_gap,
        converged=report.converged,
    )


def plot_sweep(rows: Sequence[SweepRow], path, title: str = "") -> None:
    """One PoA curve per spec against the toll rate, as a static SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "invpoa"
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    specs = list(dict.fromkeys(r.spec for r in rows))
    for spec in specs:
        pts = [(r.rate, r.poa) for r in rows if r.spec == spec]
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", markersize=3, label=spec)
    ax.set_xlabel("toll rate (money per length unit)")
    ax.set_ylabel("invariant PoA")
    if title:
        ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _load_instance(path: str) -> Instance:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise CLIError(f"{path}: cannot read ({err.strerror})") from None
    return parse_instance_text(text, path)


def _specs(text: str) -> list[WelfareSpec]:
    try:
        specs = [WelfareSpec.parse(t) for t in text.split(",") if t.strip()]
    except ValueError as err:
        raise CLIError(str(err)) from None
    if not specs:
        raise CLIError("--welfare needs at least one spec")
    return specs


def _configs(args) -> tuple[FWConfig, FWConfig]:
    ue, so = UE_CONFIG, SO_CONFIG
    if args.tol is not None:
        if not args.tol > 0:
            raise CLIError("--tol must be > 0")
        ue, so = replace(ue, gap_target=args.tol), replace(so, gap_target=args.tol)
    if args.max_iter is not None:
        if args.max_iter < 1:
            raise CLIError("--max-iter must be >= 1")
        ue, so = replace(ue, max_iterations=args.max_iter), replace(so, max_iterations=args.max_iter)
    return ue, so


def _write(text: str, path: str | None, out) -> None:
    if path:
        Path(path).write_text(text)
    else:
        out.write(text)


def _flow_csv(instance: Instance, flows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["edge"] + [f"flow:{g.id}" for g in instance.groups] + ["flow"])
    x = flows.group_edge_flow
    for k, e in enumerate(instance.network.edges):
        w.writerow([e.id] + [_fmt(float(v)) for v in x[:, k]] + [_fmt(float(x[:, k].sum()))])
    return buf.getvalue()


def _print_utilities(instance: Instance, u: np.ndarray, out) -> None:
    for g, v in zip(instance.groups, u):
        if not math.isnan(v):
            print(f"  U[{g.id}] = {v:.9g}", file=out)


def cmd_assign(args, out) -> int:
    inst = _load_instance(args.instance)
    ue_cfg, so_cfg = _configs(args)
    if args.kind == "ue":
        res = solve_user_equilibrium(inst, ue_cfg)
        print(f"user equilibrium: {res.fw.iterations} iterations, relative gap {res.relative_gap:.3g} ({res.fw.message})", file=out)
        _print_utilities(inst, res.utilities, out)
        flows = res.flows
    else:
        if not args.welfare:
            raise CLIError("assign so needs --welfare")
        spec = _specs(args.welfare)[0]
        res = solve_social_optimum(inst, spec, so_cfg, include_tolls=args.accounting == "cost")
        print(f"optimum ({spec.name}): welfare {res.welfare:.12g}, {res.iterations} iterations, "
              f"relative gap {res.relative_gap:.3g}, start {res.start}", file=out)
        _print_utilities(inst, res.utilities, out)
        flows = res.flows
    if args.out:
        _write(_flow_csv(inst, flows), args.out, out)
    return 0


def cmd_poa(args, out) -> int:
    inst = _load_instance(args.instance)
    ue_cfg, so_cfg = _configs(args)
    specs = _specs(args.welfare)
    ev = evaluate_poa(inst, specs, ue_cfg, so_cfg, accounting=args.accounting, standard=args.standard)
    for spec in specs:
        r = ev.reports[spec.name]
        extra = f" (raw Nash ratio {r.poa_raw:.9g})" if r.poa_raw is not None else ""
        print(f"PoA[{r.spec}] = {r.poa:.9g}{extra}", file=out)
    if ev.standard is not None:
        print(f"standard PoA = {ev.standard.poa:.9g} (C_NE {ev.standard.c_ne:.9g}, C* {ev.standard.c_opt:.9g})", file=out)
    if args.out:
        rows = [report_row(ev.reports[s.name]) for s in specs]
        _write(sweep_csv(rows), args.out, out)
    return 0


def cmd_sweep(args, out) -> int:
    inst = _load_instance(args.instance)
    ue_cfg, so_cfg = _configs(args)
    specs = _specs(args.welfare)
    edges = tuple(e for e in args.edges.split(",") if e) if args.edges else None
    try:
        sweep = SweepSpec(args.rate_min, args.rate_max, args.steps, edges)
    except ValueError as err:
        raise CLIError(str(err)) from None
    rows = toll_sweep(inst, specs, sweep, ue_cfg, so_cfg, accounting=args.accounting)
    for r in rows:
        status = r.error or ("" if r.converged else "not converged")
        print(f"rate {r.rate:.6g}  {r.spec:>12}  PoA {r.poa:.9g}  {status}".rstrip(), file=out)
    if args.out:
        _write(sweep_csv(rows, timing=args.timing), args.out, out)
    if args.plot:
        plot_sweep(rows, args.plot, inst.name)
    failed = sum(1 for r in rows if r.error)
    if failed:
        print(f"{failed} of {len(rows)} rows failed", file=sys.stderr)
    return 0


def _invariance_specs(cls: str, rhos: list[float]) -> list[WelfareSpec]:
    if cls == "cnc":
        return [WelfareSpec("cnc")]
    return [WelfareSpec("cuc", r) for r in rhos]


def cmd_invariance(args, out) -> int:
    try:
        text = Path(args.file).read_text()
    except OSError as err:
        raise CLIError(f"{args.file}: cannot read ({err.strerror})") from None
    fmt = json.loads(text).get("format", "")
    kind = "individual-affine" if args.cls == "cnc" else "common-scale"
    specs = _invariance_specs(args.cls, args.rho)
    rng = np.random.default_rng(args.seed)
    failures = 0
    worst = 0.0
    if fmt.startswith("invpoa-game"):
        game = parse_game_text(text, args.file)
        for _ in range(args.trials):
            t = random_transform(rng, game.n_players, kind)
            for spec in specs:
                rep = check_invariance(game, spec, t)
                worst = max(worst, rep.violation)
                if not (rep.pne_sets_equal and rep.poa_equal):
                    failures += 1
        tol = 1e-9
    else:
        inst = parse_instance_text(text, args.file)
        ue_cfg, so_cfg = _configs(args)
        base = evaluate_poa(inst, specs, ue_cfg, so_cfg)
        for _ in range(args.trials):
            t = random_transform(rng, inst.n_groups, kind)
            other = evaluate_poa(transform_instance(inst, t), specs, ue_cfg, so_cfg, ue=base.ue)
            for spec in specs:
                a, b = base.reports[spec.name].poa, other.reports[spec.name].poa
                v = abs(a - b) / abs(a)
                worst = max(worst, v)
                if v > 1e-6:
                    failures += 1
        tol = 1e-6
    checks = args.trials * len(specs)
    print(f"{checks - failures}/{checks} invariance checks passed "
          f"({kind} transforms, specs {', '.join(s.name for s in specs)}); "
          f"largest relative PoA change {worst:.3g} (tolerance {tol:g})", file=out)
    return 0 if failures == 0 else 1


def cmd_gen_city(args, out) -> int:
    try:
        inst = generate_synthetic_city(args.nodes, args.edges, args.trips, args.seed)
    except ValueError as err:
        raise CLIError(str(err)) from None
    text = emit_instance(inst)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}: {inst.network.n_nodes} nodes, {inst.network.n_edges} edges, "
              f"{int(inst.group_demand.sum())} trips", file=out)
    else:
        out.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="write CSV (instance JSON for gen-city) here")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tol", type=float, help="relative gap target for the solvers")
    common.add_argument("--max-iter", type=int, help="Frank-Wolfe iteration cap")
    common.add_argument("-v", "--verbose", action="store_true")

    accounting = argparse.ArgumentParser(add_help=False)
    accounting.add_argument(
        "--accounting", choices=("transfer", "cost"), default="transfer",
        help="tolls as transfers (default) or as costs to their payers",
    )

    p = argparse.ArgumentParser(prog="invpoa", description="Invariant price of anarchy for multi-class traffic.")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("assign", parents=[common, accounting], help="solve an equilibrium or an optimum")
    a.add_argument("kind", choices=("ue", "so"))
    a.add_argument("instance")
    a.add_argument("--welfare", help="cuc0, cnc, maxmin or atkinson:<rho>")
    a.set_defaults(func=cmd_assign)

    q = sub.add_parser("poa", parents=[common, accounting], help="invariant PoA per welfare spec")
    q.add_argument("instance")
    q.add_argument("--welfare", default="cuc0,cnc,maxmin")
    q.add_argument("--standard", action="store_true", help="also report the raw cost ratio")
    q.set_defaults(func=cmd_poa)

    s = sub.add_parser("sweep", parents=[common, accounting], help="PoA over a grid of per-length toll rates")
    s.add_argument("instance")
    s.add_argument("--rate-min", type=float, required=True)
    s.add_argument("--rate-max", type=float, required=True)
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--welfare", default="cuc0,cnc,maxmin")
    s.add_argument("--edges", help="comma-separated edge ids to toll (default: all)")
    s.add_argument("--plot", help="write an SVG chart here")
    s.add_argument("--timing", action="store_true", help="add a wall_time column (makes the CSV run-dependent)")
    s.set_defaults(func=cmd_sweep)

    i = sub.add_parser("invariance", parents=[common], help="randomized invariance checks")
    i.add_argument("file", help="game or instance JSON")
    i.add_argument("--class", dest="cls", choices=("cnc", "cuc"), required=True)
    i.add_argument("--trials", type=int, default=100)
    i.add_argument("--rho", type=float, nargs="+", default=[0.0, 1.0, 50.0], help="Atkinson rhos for --class cuc")
    i.set_defaults(func=cmd_invariance)

    g = sub.add_parser("gen-city", parents=[common], help="write a synthetic city instance")
    g.add_argument("--nodes", type=int, required=True)
    g.add_argument("--edges", type=int, required=True)
    g.add_argument("--trips", type=int, required=True)
    g.set_defaults(func=cmd_gen_city)
    return p


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, out)
    except (CLIError, InstanceFormatError, NetworkError, WelfareDomainError, SolverError, ValueError) as err:
        print(f"invpoa: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
