"""Command-line front end.

Subcommands: `run` (full batch from a JSON config), `simulate` (emit a
synthetic panel in the wire CSV formats plus a starter config),
`mspe-contest` (re-summarize an existing run report), and `validate`
(parse-only check of the three input files). Exit codes: 0 success,
1 unusable input, 2 estimation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import DataError, EstimationError
from .ingest import ACTIONS, load_fundamentals, load_membership, load_returns
from .pipeline import RunConfig, emit_mspe_contest, read_report, run_pipeline
from .simulate import DgpConfig, emit_csvs, event_dates, generate_panel


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; that code is reserved
    # for estimation failures here, so raise and let main() map it to 1.
    def error(self, message):
        raise _UsageError(message)


def _int_list(raw: str, name: str) -> list[int]:
    try:
        return [int(part) for part in raw.split(",") if part != ""]
    except ValueError:
        raise DataError(f"{name} must be a comma-separated list of integers") from None


def _cmd_run(args) -> int:
    overrides = {}
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.years is not None:
        overrides["years"] = _int_list(args.years, "--years")
    if args.estimators is not None:
        overrides["estimators"] = args.estimators.split(",")
    if args.directions is not None:
        overrides["directions"] = args.directions.split(",")
    if args.variants is not None:
        overrides["variants"] = args.variants.split(",")
    if args.r is not None:
        overrides["r"] = args.r
    if args.b1 is not None:
        overrides["b1"] = args.b1
    if args.b2 is not None:
        overrides["b2"] = args.b2
    if args.plots is not None:
        overrides["plots"] = args.plots

    config = RunConfig.from_file(args.config, **overrides)
    report = run_pipeline(config)

    failed = sum(1 for r in report.rows if not r.feasible)
    print(f"{len(report.rows)} cell(s) estimated, {failed} failed "
          f"-> {config.output_dir}")
    for r in report.rows:
        if not r.feasible:
            print(f"  failed: {r.year}/{r.industry}/{r.direction}: {r.note}")
    for notice in report.notices:
        print(f"  note: {notice}")
    return 0


def _cmd_simulate(args) -> int:
    config = DgpConfig.constant_att(
        level=args.att,
        n_control=args.n_control,
        n_treated=args.n_treated,
        t_control=args.t_control,
        t_treatment=args.t_treatment,
        r_true=args.r,
        factor_scale=args.factor_scale,
        loading_scale=args.loading_scale,
        noise_sd=args.noise_sd,
        seed=args.seed,
        year=args.year,
        industry=args.industry,
        action=args.action,
    )
    truth = generate_panel(config)
    out = Path(args.out)
    paths = emit_csvs(truth, out)
    ann, eff = event_dates(truth)

    starter = {
        "returns": "returns.csv",
        "fundamentals": "fundamentals.csv",
        "membership": "membership.csv",
        "output_dir": "results",
        "announcements": {
            str(config.year): {
                "announcement": ann.isoformat(),
                "effective": eff.isoformat(),
            }
        },
        "seed": config.seed,
    }
    config_path = out / "config.json"
    config_path.write_text(
        json.dumps(starter, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    paths["config"] = config_path

    for name in sorted(paths):
        print(f"{name}: {paths[name]}")
    return 0


def _cmd_contest(args) -> int:
    report = read_report(args.report)
    out = args.out if args.out is not None else Path(args.report).parent
    results = emit_mspe_contest(report, out)
    for c in results:
        if c.note.startswith("skipped"):
            print(f"{c.direction}: {c.note}")
            continue
        line = (f"{c.direction}: gsynth wins {c.gsynth_wins}/{c.n_cells} "
                f"(capm {c.capm_wins}, ties {c.ties}); "
                f"estimate {c.estimate:.6f}")
        if c.note:
            line += f" ({c.note})"
        else:
            line += f", t {c.t_stat:.3f}, p {c.p_value:.4f}{c.stars}"
        print(line)
    return 0


def _cmd_validate(args) -> int:
    if args.config is not None:
        config = RunConfig.from_file(args.config)
        returns_path = config.returns
        fundamentals_path = config.fundamentals
        membership_path = config.membership
    else:
        missing = [
            flag for flag, value in (
                ("--returns", args.returns),
                ("--fundamentals", args.fundamentals),
                ("--membership", args.membership),
            ) if value is None
        ]
        if missing:
            raise DataError(
                f"validate needs --config or all of --returns/--fundamentals/"
                f"--membership (missing {', '.join(missing)})"
            )
        returns_path = args.returns
        fundamentals_path = args.fundamentals
        membership_path = args.membership

    data = load_returns(returns_path)
    fundamentals = load_fundamentals(fundamentals_path)
    events = load_membership(membership_path)
    print(f"returns: {len(data.firms)} firms over {len(data.calendar)} trading days")
    print(f"fundamentals: {len(fundamentals)} firm-year records")
    print(f"membership: {len(events)} events")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="eventsynth", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the full estimation batch")
    run.add_argument("--config", required=True, help="JSON run config")
    run.add_argument("--output-dir", help="override the config output_dir")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--years", help="comma-separated years to run")
    run.add_argument("--estimators", help="comma-separated subset of capm,gsynth")
    run.add_argument("--directions", help="comma-separated subset of join,delist")
    run.add_argument("--variants", help="comma-separated subset of full,base")
    run.add_argument("--r", type=int, help="fix the factor count (skip selection)")
    run.add_argument("--b1", type=int, help="first-stage bootstrap replications")
    run.add_argument("--b2", type=int, help="second-stage bootstrap replications")
    run.add_argument("--plots", dest="plots", action="store_true", default=None,
                     help="emit SVG gap plots")
    run.add_argument("--no-plots", dest="plots", action="store_false",
                     help="suppress SVG gap plots")
    run.set_defaults(func=_cmd_run)

    sim = sub.add_parser("simulate", help="emit a synthetic panel as input CSVs")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--n-control", type=int, default=40)
    sim.add_argument("--n-treated", type=int, default=3)
    sim.add_argument("--t-control", type=int, default=100)
    sim.add_argument("--t-treatment", type=int, default=36)
    sim.add_argument("--r", type=int, default=2, help="true factor count")
    sim.add_argument("--factor-scale", type=float, default=1.0)
    sim.add_argument("--loading-scale", type=float, default=1.0)
    sim.add_argument("--noise-sd", type=float, default=1.0)
    sim.add_argument("--att", type=float, default=1.0,
                     help="constant effect added after the effective day")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--year", type=int, default=2013)
    sim.add_argument("--industry", default="33")
    sim.add_argument("--action", choices=ACTIONS, default="join")
    sim.set_defaults(func=_cmd_simulate)

    contest = sub.add_parser("mspe-contest",
                             help="re-summarize the fit contest from a run report")
    contest.add_argument("--report", required=True, help="path to run_report.csv")
    contest.add_argument("--out", help="output directory (default: report's)")
    contest.set_defaults(func=_cmd_contest)

    validate = sub.add_parser("validate", help="parse-only check of input files")
    validate.add_argument("--config", help="JSON run config naming the inputs")
    validate.add_argument("--returns")
    validate.add_argument("--fundamentals")
    validate.add_argument("--membership")
    validate.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except EstimationError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
