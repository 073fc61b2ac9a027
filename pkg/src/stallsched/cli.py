"""Command line entry point: ``stallsched {run,sweep,capacity,plot,gen-trace}``.

Exit codes: 0 success, 2 validation error, 3 runtime invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import config as cfg
from .capacity import intensity_scale
from .config import ValidationError
from .policies import InvariantViolation

EXIT_OK, EXIT_VALIDATION, EXIT_INVARIANT = 0, 2, 3


def _values(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _load(args) -> cfg.ExperimentSpec:
    spec = cfg.load(args.spec)
    changes = {}
    if getattr(args, "replications", None) is not None:
        changes["replications"] = args.replications
    if getattr(args, "events", None) is not None:
        changes["event_budget"] = args.events
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "check_invariants", False):
        changes["check_invariants"] = True
    if changes:
        spec = replace(spec, **changes)
        cfg.validate(spec)
    return spec


def _out_dir(args, spec) -> Path:
    return Path(args.out) if args.out else Path("out") / spec.name


def _print_summary(report) -> None:
    for (policy, axis), mean in report.means().items():
        where = f" at {axis}" if axis else ""
        print(f"{policy}{where}: mean queue {mean:.4g}")


def cmd_run(args) -> int:
    from .runner import run_experiment

    spec = _load(args)
    out = _out_dir(args, spec)
    report = run_experiment(spec, out, threads=args.threads)
    _print_summary(report)
    print(f"wrote {out / 'summary.csv'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .runner import sweep

    spec = _load(args)
    out = _out_dir(args, spec)
    report = sweep(spec, out, axis=args.axis, values=args.values, threads=args.threads)
    _print_summary(report)
    print(f"wrote {out / 'summary.csv'}")
    return EXIT_OK


def cmd_capacity(args) -> int:
    from .runner import arrival_rates, servers_of

    spec = _load(args)
    if spec.arrivals.law in ("trace", "batch"):
        raise ValidationError("capacity needs per-type rates or a traffic intensity, not a trace or batch law")
    servers = servers_of(spec)
    demands = list(spec.demands)
    means = [s.mean for s in spec.service]
    if args.zeta is not None:
        if not 0 < args.zeta < 1:
            raise ValidationError("--zeta must lie in (0, 1)")
        spec = replace(spec, arrivals=replace(spec.arrivals, zeta=args.zeta, rates=None,
                                              direction=spec.arrivals.direction or tuple(
                                                  r * m for r, m in zip(spec.arrivals.rates, means))))
    a = spec.arrivals
    direction = a.direction if a.direction is not None else tuple(r * m for r, m in zip(a.rates, means))
    try:
        t_star = intensity_scale(direction, servers, demands)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    rates = arrival_rates(spec)
    workload = [r * m for r, m in zip(rates, means)]
    zeta = a.zeta if a.zeta is not None else 1.0 / t_star
    print(f"direction  {', '.join(f'{x:.6g}' for x in direction)}")
    print(f"t_star     {t_star:.10g}")
    print(f"zeta       {zeta:.10g}")
    print(f"lambda     {', '.join(f'{x:.10g}' for x in rates)}")
    print(f"workload   {', '.join(f'{x:.10g}' for x in workload)}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plot import plot_summary

    try:
        path = plot_summary(args.summary, args.out, axis_name=args.axis_name)
    except (OSError, KeyError) as exc:
        raise ValidationError(f"cannot plot {args.summary}: {exc}") from None
    print(f"wrote {path}")
    return EXIT_OK


def cmd_gen_trace(args) -> int:
    from .trace import load_trace, offered_load, synthetic_trace

    if args.rows < 0 or args.rate <= 0 or args.duration_sigma < 0:
        raise ValidationError("rows must be nonnegative, rate positive and duration sigma nonnegative")
    synthetic_trace(args.out, args.rows, seed=args.seed, rate=args.rate, duration_sigma=args.duration_sigma)
    stream = load_trace(args.out)
    print(f"wrote {args.out}: {len(stream)} jobs, type counts {stream.type_counts()}, "
          f"offered load {offered_load(stream):.4g} unit servers")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stallsched", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("spec", help="experiment spec file (INI)")
        sp.add_argument("--out", help="output directory (default out/<name>)")
        sp.add_argument("--replications", type=int, help="override the replication count")
        sp.add_argument("--events", type=int, help="override the base event budget")
        sp.add_argument("--seed", type=int, help="override the base seed")
        sp.add_argument("--check-invariants", action="store_true", help="check runtime invariants after every event")
        sp.add_argument("--threads", type=int, help="worker processes (default $STALLSCHED_THREADS or CPU count)")

    r = sub.add_parser("run", help="run every policy and replication of a spec")
    common(r)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a spec over a sweep axis")
    common(s)
    s.add_argument("--axis", choices=cfg.AXES, help="sweep axis (default from the [sweep] section)")
    s.add_argument("--values", type=_values, help="comma-separated axis values (default from the [sweep] section)")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("capacity", help="print the capacity scale t* and arrival rates")
    c.add_argument("spec", help="experiment spec file (INI)")
    c.add_argument("--zeta", type=float, help="traffic intensity to convert into arrival rates")
    c.set_defaults(func=cmd_capacity)

    pl = sub.add_parser("plot", help="write an SVG chart of a summary.csv")
    pl.add_argument("summary", help="summary.csv written by run or sweep")
    pl.add_argument("--out", help="SVG path (default next to the CSV)")
    pl.add_argument("--axis-name", default="axis value", help="x-axis label for sweeps")
    pl.set_defaults(func=cmd_plot)

    g = sub.add_parser("gen-trace", help="write a synthetic task trace CSV")
    g.add_argument("out", help="output CSV path")
    g.add_argument("--rows", type=int, default=100_000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--rate", type=float, default=3000.0, help="arrivals per second")
    g.add_argument("--duration-sigma", type=float, default=0.0,
                   help="log-normal duration spread (0 means exponential durations)")
    g.set_defaults(func=cmd_gen_trace)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        if exc.state:
            print(json.dumps(exc.state, indent=1, default=str), file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
