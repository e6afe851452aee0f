"""Command-line front end.

Subcommands: simulate | sweep | chain | bounds | regen | verify.

Every data file starts with its configuration (a ``# config: {...}`` line in
CSV, a ``config`` key in JSON, an XML comment in SVG) so ``verify`` can
recompute any row from the file alone.  The worker count and output path are
left out of the echo: they must not change the bytes written.

Exit codes: 0 success, 2 usage error, 3 budget or validation failure.
"""

from __future__ import annotations

import argparse
import json
import math
import random
import sys
from dataclasses import asdict, dataclass, field

from .core import CookieRule
from .experiments import (
    SWEEP_FIELDS,
    BoundViolation,
    bounds_table,
    chain_certificates,
    chain_table,
    parse_grid,
    point_seed,
    regen_runs,
    significant_drop,
    simulate_campaign,
    sweep,
)
from .regeneration import DEFAULT_CENSOR, InsufficientData, regeneration_speed
from .svg import line_chart
from .truncated import DEFAULT_STATE_BUDGET, ClosedClassError, ConvergenceError, StateBudgetExceeded

EXIT_USAGE = 2
EXIT_FAILURE = 3

SIMULATE_FIELDS = ("trial", "horizon", "x", "y", "speed_x", "speed_y", "right_front", "left_front", "fresh_epochs")
CHAIN_FIELDS = ("p", "k", "m", "v_k", "solver", "residual")
BOUNDS_FIELDS = ("p", "E_rho", "E_inv_omega", "speed_closed_form", "bound_2p_minus_1", "bound_prop")
REGEN_FIELDS = ("trial", "i", "tau", "dX", "dtau")


class UsageError(ValueError):
    pass


def cell(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if hasattr(v, "item"):
        v = v.item()
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


@dataclass
class Report:
    command: str
    config: dict
    header: tuple
    rows: list
    extra: dict = field(default_factory=dict)
    series: list = field(default_factory=list)
    title: str = ""


def _plain(v):
    if hasattr(v, "item"):
        return v.item()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def render(report: Report, fmt: str) -> str:
    cfg = json.dumps(report.config, sort_keys=True, default=_plain)
    if fmt == "csv":
        lines = [f"# config: {cfg}", ",".join(report.header)]
        lines += [",".join(cell(v) for v in row) for row in report.rows]
        for key in sorted(report.extra):
            lines.append(f"# {key}: {json.dumps(report.extra[key], sort_keys=True, default=_plain)}")
        return "\n".join(lines) + "\n"
    if fmt == "json":
        doc = {
            "config": report.config,
            "rows": [dict(zip(report.header, row)) for row in report.rows],
            **report.extra,
        }
        return json.dumps(doc, sort_keys=True, indent=1, allow_nan=True, default=_plain) + "\n"
    if fmt == "svg":
        if not report.series:
            raise UsageError(f"{report.command} has no chart; use --format csv or json")
        svg = line_chart(report.series, title=report.title)
        return svg.replace("\n", f"\n<!-- config: {cfg.replace('--', '- -')} -->\n", 1)
    raise UsageError(f"unknown format {fmt!r}")


def _echo(args, *keys) -> dict:
    cfg = {"command": args.command, "seed": args.seed, "format": args.format}
    for k in keys:
        cfg[k] = getattr(args, k)
    return cfg


def _check_positive(name, value, minimum=1):
    if value < minimum:
        raise UsageError(f"--{name.replace('_', '-')} must be >= {minimum}, got {value}")


# --- commands -----------------------------------------------------------------


def cmd_simulate(args) -> Report:
    _check_positive("horizon", args.horizon)
    _check_positive("trials", args.trials)
    rule = CookieRule(args.m, args.p)
    camp = simulate_campaign(rule, args.horizon, args.trials, args.seed, args.workers)
    rows = [[getattr(s, f) for f in SIMULATE_FIELDS] for s in camp.summaries]
    return Report("simulate", _echo(args, "p", "m", "horizon", "trials"), SIMULATE_FIELDS, rows,
                  {"aggregate": camp.aggregate()})


def cmd_sweep(args) -> Report:
    _check_positive("horizon", args.horizon)
    _check_positive("trials", args.trials)
    grid = parse_grid(args.p_grid)
    ms = [int(v) for v in str(args.m).split(",")]
    estimators = tuple(e for e in args.estimators.split(",") if e)
    rows, drops, series = [], {}, []
    for m in ms:
        part = sweep(grid, m, args.horizon, args.trials, args.seed, args.workers, estimators, args.censor)
        rows += part
        for est in estimators:
            sel = [r for r in part if r.estimator == est]
            if len(sel) > 1:
                drops[f"m={m},{est}"] = significant_drop(sel, args.significance).as_dict()
            if est == "direct" or len(estimators) == 1:
                series.append((f"m={m} {est}", [r.p for r in sel], [r.estimate for r in sel],
                               [r.stderr for r in sel]))
    cfg = _echo(args, "p_grid", "m", "horizon", "trials", "censor", "estimators", "significance")
    extra = {"significance_rule": f"margin > {args.significance} * (se1 + se2)"}
    if drops:
        extra["largest_drop"] = drops
    return Report("sweep", cfg, SWEEP_FIELDS, [r.as_list() for r in rows], extra, series,
                  title="MERW speed")


def cmd_chain(args) -> Report:
    grid = parse_grid(args.p_grid)
    ks = [int(v) for v in str(args.k).split(",")]
    for k in ks:
        if k < 2 or k % 2:
            raise UsageError(
                f"--k must be even and >= 2, got {k}; evenness is the construction's convention, "
                "not a mathematical obstruction"
            )
    rows = chain_table(ks, args.m, grid, args.solver, args.tol, args.budget)
    certs = chain_certificates(rows)
    extra = {"certificate": {str(k): (asdict(c) | {"margin": c.margin}) if c else None for k, c in certs.items()}}
    if args.reference:
        trend = []
        for p in grid:
            camp = simulate_campaign(CookieRule(args.m, p), args.horizon, args.trials,
                                     point_seed(args.seed, p, args.m), args.workers)
            for r in (r for r in rows if r.p == p):
                trend.append({"p": p, "k": r.k, "v_k": r.v_k, "v_hat": camp.mean,
                              "v_hat_se": camp.stderr, "abs_gap": abs(r.v_k - camp.mean)})
        extra["trend"] = trend
    series = [(f"k={k}", [r.p for r in rows if r.k == k], [r.v_k for r in rows if r.k == k], None) for k in ks]
    keys = ["p_grid", "k", "m", "solver", "tol", "budget", "reference"]
    if args.reference:
        keys += ["horizon", "trials"]
    return Report("chain", _echo(args, *keys), CHAIN_FIELDS,
                  [[getattr(r, f) for f in CHAIN_FIELDS] for r in rows], extra, series,
                  title="truncated-chain speed")


def cmd_bounds(args) -> Report:
    grid = parse_grid(args.p_grid)
    rows = bounds_table(grid)
    series = [
        ("RWRE speed", grid, [r.speed_closed_form for r in rows], None),
        ("2p-1", grid, [r.bound_2p_minus_1 for r in rows], None),
        ("(2p-1)/(2p+1)", grid, [r.bound_prop for r in rows], None),
    ]
    return Report("bounds", _echo(args, "p_grid"), BOUNDS_FIELDS,
                  [[getattr(r, f) for f in BOUNDS_FIELDS] for r in rows], {}, series, title="bounds")


def cmd_regen(args) -> Report:
    _check_positive("horizon", args.horizon)
    _check_positive("trials", args.trials)
    _check_positive("censor", args.censor, 0)
    runs = regen_runs(CookieRule(args.m, args.p), args.horizon, args.trials, args.seed, args.censor)
    rows, per_trial = [], []
    for r in runs:
        rec = r.record
        for i, (t, a, b) in enumerate(zip(rec.times, rec.displacement, rec.duration), 1):
            rows.append([r.trial, i, int(t), int(a), int(b)])
        try:
            est, se = regeneration_speed(rec, args.burn_in)
        except InsufficientData:
            est = se = None
        per_trial.append({
            "trial": r.trial, "regenerations": int(len(rec.times)), "censored": rec.censored,
            "time_zero": rec.time_zero, "status": rec.status, "estimate": est, "stderr": se,
            "direct": r.summary.speed_x, "fresh_ratio": r.fresh_ratio,
        })
    return Report("regen", _echo(args, "p", "m", "horizon", "trials", "censor", "burn_in"), REGEN_FIELDS,
                  rows, {"summary": per_trial})


# --- verification -------------------------------------------------------------


def _read_config(text: str) -> tuple[dict, str]:
    if text.startswith("# config: "):
        return json.loads(text.splitlines()[0][len("# config: "):]), "csv"
    doc = json.loads(text)
    return doc["config"], "json"


def _namespace(cfg: dict) -> argparse.Namespace:
    ns = argparse.Namespace(**cfg)
    ns.workers = 1
    return ns


def cmd_verify(args) -> tuple[bool, str]:
    with open(args.path) as fh:
        text = fh.read()
    try:
        cfg, fmt = _read_config(text)
    except (ValueError, KeyError):
        raise UsageError(f"{args.path}: no config echo found (only csv/json outputs can be verified)")
    if fmt == "csv":
        lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
        rows = [ln.split(",") for ln in lines[1:]]
    else:
        header = HEADERS[cfg["command"]]
        rows = [[cell(row[h]) for h in header] for row in json.loads(text)["rows"]]
    if not rows:
        return True, "no rows to verify"
    idx = args.row if args.row is not None else random.Random(args.seed).randrange(len(rows))
    ns = _namespace(cfg)
    command = cfg["command"]
    if command == "sweep":
        # recompute only the chosen grid point
        p, m, est = float(rows[idx][0]), int(rows[idx][1]), rows[idx][2]
        part = sweep([p], m, ns.horizon, ns.trials, ns.seed, 1, (est,), ns.censor)
        fresh = [cell(v) for v in part[0].as_list()]
    elif command == "chain":
        p, k = float(rows[idx][0]), int(rows[idx][1])
        r = chain_table([k], ns.m, [p], ns.solver, ns.tol, ns.budget)[0]
        fresh = [cell(getattr(r, f)) for f in CHAIN_FIELDS]
    else:
        report = COMMANDS[command](ns)
        fresh = [cell(v) for v in report.rows[idx]]
    ok = fresh == rows[idx]
    return ok, f"row {idx}: {'match' if ok else 'MISMATCH'} ({','.join(rows[idx])} vs {','.join(fresh)})"


HEADERS = {
    "simulate": SIMULATE_FIELDS,
    "sweep": SWEEP_FIELDS,
    "chain": CHAIN_FIELDS,
    "bounds": BOUNDS_FIELDS,
    "regen": REGEN_FIELDS,
}

COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "chain": cmd_chain,
    "bounds": cmd_bounds,
    "regen": cmd_regen,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="merw", description="Mutually excited random walk experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, formats=("csv", "json")):
        sp.add_argument("--seed", type=int, default=0, help="master seed")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--out", help="output file (default: stdout)")
        sp.add_argument("--format", choices=formats, default="csv")

    s = sub.add_parser("simulate", help="independent MERW trials at one p")
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--m", type=int, default=2)
    s.add_argument("--horizon", type=int, default=10**6)
    s.add_argument("--trials", type=int, default=100)
    common(s)

    s = sub.add_parser("sweep", help="speed estimates over a p grid")
    s.add_argument("--p-grid", required=True, help="a:step:b or comma list")
    s.add_argument("--m", default="2", help="one value or a comma list")
    s.add_argument("--horizon", type=int, default=10**6)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--censor", type=int, default=DEFAULT_CENSOR)
    s.add_argument("--estimators", default="direct,regen")
    s.add_argument("--significance", type=float, default=2.0,
                   help="a drop is significant when margin > this * (se1 + se2)")
    common(s, ("csv", "json", "svg"))

    s = sub.add_parser("chain", help="exact truncated-chain speed v_k")
    s.add_argument("--k", default="2", help="even k, or a comma list")
    s.add_argument("--m", type=int, default=2)
    s.add_argument("--p-grid", "--p", dest="p_grid", required=True)
    s.add_argument("--solver", choices=("direct", "iterate"), default="direct")
    s.add_argument("--tol", type=float, default=1e-12)
    s.add_argument("--budget", type=int, default=DEFAULT_STATE_BUDGET, help="maximum reachable states")
    s.add_argument("--reference", action="store_true", help="also estimate the MERW speed by simulation")
    s.add_argument("--horizon", type=int, default=10**6)
    s.add_argument("--trials", type=int, default=100)
    common(s, ("csv", "json", "svg"))

    s = sub.add_parser("bounds", help="closed-form RWRE speed and the speed bounds")
    s.add_argument("--p-grid", required=True)
    common(s, ("csv", "json", "svg"))

    s = sub.add_parser("regen", help="regeneration gaps of recorded trajectories")
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--m", type=int, default=2)
    s.add_argument("--horizon", type=int, default=10**6)
    s.add_argument("--trials", type=int, default=1)
    s.add_argument("--censor", type=int, default=DEFAULT_CENSOR)
    s.add_argument("--burn-in", action="store_true", help="drop the first gap")
    common(s)

    s = sub.add_parser("verify", help="recompute one row of an output file")
    s.add_argument("path")
    s.add_argument("--row", type=int, help="row index (default: random)")
    s.add_argument("--seed", type=int, default=None, help="seed for the row choice")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "verify":
            ok, msg = cmd_verify(args)
            print(msg)
            return 0 if ok else EXIT_FAILURE
        report = COMMANDS[args.command](args)
        text = render(report, args.format)
    except (UsageError, ValueError) as exc:
        parser.error(str(exc))
    except (StateBudgetExceeded, ClosedClassError, ConvergenceError, BoundViolation, MemoryError) as exc:
        print(f"merw: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
