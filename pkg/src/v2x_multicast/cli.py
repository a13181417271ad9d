"""Command line: run a campaign, compare solvers, or self-validate."""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .mcs import McsTableError
from .simulator import (ConfigError, ScenarioConfig, load_config, mcs_table_for, run_campaign,
                        write_outputs)
from .solvers import SOLVERS, ExhaustiveRefused
from .validate import DEFAULT_MC_SIGMA, run_checks

DEFAULT_COMPARE = ("baseline", "heuristic", "hsca")


def parse_values(text: str, cast=float) -> list:
    """``"20..45..5"`` -> [20, 25, ..., 45]; ``"a..b"`` steps by 1; ``"1,2,3"`` lists."""
    if ".." in text:
        parts = text.split("..")
        if len(parts) not in (2, 3):
            raise argparse.ArgumentTypeError(f"bad range {text!r}; use start..stop[..step]")
        start, stop = cast(parts[0]), cast(parts[1])
        step = cast(parts[2]) if len(parts) == 3 else cast(1)
        if step <= 0 or stop < start:
            raise argparse.ArgumentTypeError(f"bad range {text!r}; need start <= stop and step > 0")
        out, x = [], start
        while x <= stop + 1e-9 * abs(step):
            out.append(cast(x))
            x = start + len(out) * step
        return out
    return [cast(v) for v in text.split(",") if v.strip()]


def _int_values(text):
    return parse_values(text, int)


def _float_values(text):
    return parse_values(text, float)


SWEEP_FLAGS = (("rb_budget", "rb_budget"), ("vehicles", "vehicles"), ("radius", "radius"),
               ("speed", "speed"), ("level", "data_rate_level"))


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML scenario config (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="root seed; replication r uses seed + r")
    p.add_argument("--rb-budget", type=_int_values, help="RBs per BS, e.g. 30 or 20..45..5")
    p.add_argument("--vehicles", type=_int_values, help="vehicle count or range")
    p.add_argument("--radius", type=_float_values, help="cell radius in metres or range")
    p.add_argument("--speed", type=_float_values, help="average speed in km/h (band is +/- 10)")
    p.add_argument("--level", type=_int_values, help="data-rate level 1..5 (0 = reference catalog)")
    p.add_argument("--deployment", choices=("fixed", "binomial"))
    p.add_argument("--mcs-table", help="MCS table CSV (default: the packaged copy)")
    p.add_argument("--replications", type=int)
    p.add_argument("--slots", type=int)
    p.add_argument("--out-dir", default="out", help="where CSV and manifest go")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--no-timing", action="store_true",
                   help="leave the runtime column empty so reruns are byte-identical")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="v2x-multicast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one solver over a campaign")
    _common(run)
    run.add_argument("--solver", choices=sorted(SOLVERS), default="heuristic")
    cmp_ = sub.add_parser("compare", help="run several solvers on paired seeds")
    _common(cmp_)
    cmp_.add_argument("--solver", dest="solvers", action="append", choices=sorted(SOLVERS),
                      help="repeat to pick solvers (default: baseline, heuristic, hsca)")
    val = sub.add_parser("validate", help="run the built-in oracle checks")
    val.add_argument("fixture_dir", nargs="?", help="directory with mcs_table.csv and fixtures/")
    val.add_argument("--mc-sigma", type=float, default=DEFAULT_MC_SIGMA,
                     help="Monte Carlo tolerance in standard errors")
    return parser


def resolve(args) -> tuple[ScenarioConfig, str | None, list | None]:
    """Config after CLI overrides, plus the sweep axis and values if any."""
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    changes = {}
    for name in ("seed", "deployment", "replications", "slots", "mcs_table"):
        if getattr(args, name) is not None:
            changes[name] = getattr(args, name)
    if changes:
        cfg = dataclasses.replace(cfg, **changes)
    axis, values = None, None
    for flag, name in SWEEP_FLAGS:
        vals = getattr(args, flag)
        if vals is None:
            continue
        if len(vals) == 1:
            cfg = cfg.with_axis(name, vals[0])
        elif axis is not None:
            raise ConfigError([f"--{flag.replace('_', '-')}: only one swept flag at a time"])
        else:
            axis, values = name, vals
    return cfg, axis, values


def print_summary(result, out=None):
    out = out or sys.stdout
    print(f"{'sweep':>10} {'solver':>11} {'mean utility':>16} {'ci95':>14} {'ms':>9}", file=out)
    for s in result.summaries:
        value = "-" if s.sweep_value is None else s.sweep_value
        print(f"{value!s:>10} {s.solver:>11} {s.mean_utility:16.1f} {s.ci95:14.1f} "
              f"{s.mean_runtime_ms:9.2f}", file=out)
    for f in result.failures:
        print(f"FAILED replication {f['replication']} ({f['solver']} @ {f['sweep_value']}): {f['error']}",
              file=out)


def _campaign(args, solvers, command):
    cfg, axis, values = resolve(args)
    mcs_table_for(cfg.mcs_table)
    result = run_campaign(cfg, solvers, axis, values, jobs=args.jobs)
    paths = write_outputs(result, args.out_dir, command, timing=not args.no_timing,
                          paired_reference=solvers[0] if command == "compare" else None)
    print_summary(result)
    for label, path in paths.items():
        print(f"wrote {label}: {path}")
    return 0 if result.ok else 1


def cmd_run(args):
    return _campaign(args, (args.solver,), "run")


def cmd_compare(args):
    solvers = tuple(dict.fromkeys(args.solvers)) if args.solvers else DEFAULT_COMPARE
    return _campaign(args, solvers, "compare")


def cmd_validate(args):
    results = run_checks(args.fixture_dir, args.mc_sigma)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name}: {r.detail}")
    failed = [r.name for r in results if not r.ok]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return 1
    print(f"all {len(results)} checks passed")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"run": cmd_run, "compare": cmd_compare, "validate": cmd_validate}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except ExhaustiveRefused as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return 3
    except (FileNotFoundError, McsTableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
