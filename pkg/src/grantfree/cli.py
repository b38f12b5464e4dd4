"""Command-line entry point.

    grantfree run SPEC.yaml      Monte Carlo + analytic overlays
    grantfree analytic SPEC.yaml closed forms only
    grantfree se SPEC.yaml       state-evolution trajectory
    grantfree preset             print the reference scenario as YAML

Exit status: 0 on success, 2 on a configuration error, 3 when ``--strict``
is set and some sweep point is statistically inconsistent with theory.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .harness import (
    ConfigError,
    dump_spec,
    emit,
    format_records,
    load_spec,
    preset_desk,
    preset_section6,
    run_experiment,
)
from .state_evolution import SeParams, format_trajectory, se_fixed_point

EXIT_OK, EXIT_CONFIG, EXIT_INCONSISTENT = 0, 2, 3


def _parser():
    p = argparse.ArgumentParser(prog="grantfree", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, trials=True):
        sp.add_argument("spec", type=Path, help="experiment YAML file")
        sp.add_argument("--seed", type=int, help="override the spec seed")
        if trials:
            sp.add_argument("--trials", type=int, help="override trials per sweep point")
            sp.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")
            sp.add_argument("--strict", action="store_true",
                            help="exit 3 if any point is inconsistent with theory")
        sp.add_argument("--out", type=Path, help="output file (default: stdout)")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")

    common(sub.add_parser("run", help="run Monte Carlo trials and analytic overlays"))
    common(sub.add_parser("analytic", help="closed-form curves only"), trials=False)
    se = sub.add_parser("se", help="state-evolution trajectory at one sweep point")
    common(se, trials=False)
    se.add_argument("--point", type=int, default=0, help="sweep index (default 0)")
    se.add_argument("--variant", choices=("full", "asymptotic"), default="full")
    pr = sub.add_parser("preset", help="print the reference scenario as YAML")
    pr.add_argument("--desk", action="store_true", help="the down-scaled desk-top variant")
    pr.add_argument("--pilot-len", type=int, help="pilot length (default 90, desk 50)")
    pr.add_argument("--trials", type=int)
    pr.add_argument("--seed", type=int)
    pr.add_argument("--out", type=Path)
    return p


def _load(args):
    spec = load_spec(args.spec)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        over["trials"] = args.trials
    try:
        return dataclasses.replace(spec, **over) if over else spec
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _write_text(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _emit(records, args):
    if args.out is None:
        sys.stdout.write(format_records(records, args.format))
    else:
        emit(records, args.out, args.format)


def _cmd_run(args):
    spec = _load(args)
    if args.workers < 1:
        raise ConfigError("--workers must be at least 1")
    records = run_experiment(spec, workers=args.workers)
    _emit(records, args)
    if args.strict and any(r.consistent is False for r in records):
        bad = [r.sweep_value for r in records if r.consistent is False]
        print(f"inconsistent with theory at {spec.sweep_axis} = {bad}", file=sys.stderr)
        return EXIT_INCONSISTENT
    return EXIT_OK


def _cmd_analytic(args):
    spec = _load(args)
    outs = tuple(o for o in spec.outputs if o != "empirical") or (
        "analytic_exact", "analytic_asymptotic", "channel_stats")
    spec = dataclasses.replace(spec, outputs=outs)
    _emit(run_experiment(spec), args)
    return EXIT_OK


def _cmd_se(args):
    spec = _load(args)
    if not 0 <= args.point < len(spec.sweep_values):
        raise ConfigError(f"--point must lie in [0, {len(spec.sweep_values)})")
    cfg = spec.config_at(spec.sweep_values[args.point])
    fading = spec.build_fading()
    variant = args.variant if 0 < cfg.activity_prob < 1 else "asymptotic"
    traj = se_fixed_point(SeParams.from_config(cfg, fading), variant,
                          n_samples=spec.se_samples, seed=spec.seed)
    _write_text(format_trajectory(traj, args.format), args.out)
    return EXIT_OK


def _cmd_preset(args):
    make = preset_desk if args.desk else preset_section6
    kw = {}
    if args.pilot_len is not None:
        kw["pilot_len"] = args.pilot_len
    if args.trials is not None:
        kw["trials"] = args.trials
    spec = make(**kw)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    _write_text(dump_spec(spec), args.out)
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "analytic": _cmd_analytic, "se": _cmd_se, "preset": _cmd_preset}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
