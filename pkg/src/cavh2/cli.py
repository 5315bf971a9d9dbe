"""Command-line interface.

Verbs:

* ``list-scenarios``: the built-in scenarios and their key settings.
* ``validate``: static checks of a scenario/config; exit 2 on errors.
* ``run``: simulate one scenario, writing CSV + manifest (+ figure).
* ``sweep``: run a scenario across values of one config key.

Exit codes: 0 success, 2 validation failure, 3 invariant breach during
integration (partial CSV is flushed).
"""

from __future__ import annotations

import argparse
import sys

from .dynamics import InvariantBreachError
from .scenarios import (
    OUTPUT_DIR_ENV,
    ScenarioError,
    apply_config_items,
    builtin_scenarios,
    parse_config,
    parse_overrides,
    resolve_out_dir,
    run_scenario,
    scenario_to_config,
    sweep,
    validate,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INVARIANT = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cavh2",
        description=(
            "Open-system simulator of photon-assisted hydrogen association and "
            "dissociation in coupled cavities"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("list-scenarios", help="print the built-in scenarios")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scenario", nargs="?", help="built-in scenario name")
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config key (repeatable)",
    )
    common.add_argument("--shape", choices=("straight", "trig"), help="classical ramp shape")
    common.add_argument("--frame", choices=("rotating", "lab"), help="evolution frame")
    common.add_argument("--dt", help="integrator step (number or 'auto')")
    common.add_argument("--t-end", help="fixed end time (number or 'auto')")

    p_validate = sub.add_parser(
        "validate", parents=[common], help="check a scenario without running it"
    )
    p_validate.add_argument("--print-config", action="store_true", help="dump the resolved config")

    p_run = sub.add_parser("run", parents=[common], help="simulate and export")
    p_run.add_argument("--out", help=f"output directory (default ${OUTPUT_DIR_ENV} or ./runs)")
    p_run.add_argument("--label", help="output file stem (default: scenario name)")
    p_run.add_argument("--no-figure", action="store_true", help="skip the PNG figure")
    p_run.add_argument("--quiet", action="store_true", help="suppress the summary line")

    p_sweep = sub.add_parser(
        "sweep", parents=[common], help="run one scenario across values of a config key"
    )
    p_sweep.add_argument("--axis", required=True, metavar="SECTION.KEY", help="config key to vary")
    p_sweep.add_argument(
        "--values", required=True, help="comma-separated values for the axis key"
    )
    p_sweep.add_argument("--out", help="output directory")
    p_sweep.add_argument("--figures", action="store_true", help="render per-run figures")
    return parser


def _load_scenario(args) -> "Scenario":
    stock = builtin_scenarios()
    base = None
    if args.scenario:
        if args.scenario not in stock:
            raise ScenarioError(
                f"unknown scenario {args.scenario!r}; run 'cavh2 list-scenarios'"
            )
        base = stock[args.scenario]
    if args.config:
        with open(args.config) as fh:
            base = parse_config(fh.read(), base=base)
    if base is None:
        raise ScenarioError("give a built-in scenario name and/or --config FILE")
    overrides = parse_overrides(args.set)
    for flag, key in (
        ("shape", ("scenario", "shape")),
        ("frame", ("scenario", "frame")),
        ("dt", ("scenario", "dt")),
        ("t_end", ("scenario", "t_end")),
    ):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = str(value)
    if overrides:
        base = apply_config_items(base, overrides)
    return base


def _cmd_list(_args) -> int:
    for name, sc in builtin_scenarios().items():
        duration = f", ramp {sc.schedule_duration:g}" if sc.motion == "classical" else ""
        print(
            f"{name:18s} {sc.direction}, {sc.motion} motion, frame {sc.frame}{duration}"
        )
    return EXIT_OK


def _cmd_validate(args) -> int:
    scenario = _load_scenario(args)
    issues = validate(scenario)
    for issue in issues:
        print(f"{issue.level}: {issue.message}")
    if args.print_config:
        print(scenario_to_config(scenario))
    if any(i.level == "error" for i in issues):
        return EXIT_VALIDATION
    print(f"{scenario.name}: ok" + (" (with warnings)" if issues else ""))
    return EXIT_OK


def _cmd_run(args) -> int:
    scenario = _load_scenario(args)
    issues = validate(scenario)
    errors = [i for i in issues if i.level == "error"]
    for issue in issues:
        print(f"{issue.level}: {issue.message}", file=sys.stderr)
    if errors:
        return EXIT_VALIDATION
    result = run_scenario(
        scenario,
        out_dir=args.out,
        figure=not args.no_figure,
        label=args.label,
        verbose=not args.quiet,
    )
    if not args.quiet:
        finals = result.record["final_values"]
        summary = ", ".join(
            f"{k.removeprefix('pop_')}={finals[k]:.4f}"
            for k in ("pop_H2", "pop_HH", "pop_HmHp", "pop_other")
        )
        print(f"{scenario.name}: t_final={result.record['execution']['t_final']:g}, {summary}")
        print(f"wrote {result.csv_path}")
        if result.figure_path:
            print(f"wrote {result.figure_path}")
        print(f"wrote {result.manifest_path}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    scenario = _load_scenario(args)
    issues = validate(scenario)
    errors = [i for i in issues if i.level == "error"]
    for issue in issues:
        print(f"{issue.level}: {issue.message}", file=sys.stderr)
    if errors:
        return EXIT_VALIDATION
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        print("error: --values is empty", file=sys.stderr)
        return EXIT_VALIDATION
    results = sweep(
        scenario, args.axis, values, out_dir=args.out, figure=args.figures, verbose=False
    )
    out = resolve_out_dir(args.out)
    from .report import render_sweep_figure

    figure_path = f"{out}/{scenario.name}__{args.axis.replace('.', '_')}__sweep.png"
    render_sweep_figure(values, results, args.axis, figure_path)
    for value, res in zip(values, results):
        finals = res.record["final_values"]
        print(
            f"{args.axis}={value}: H2={finals['pop_H2']:.6f} HH={finals['pop_HH']:.6f} "
            f"HmHp={finals['pop_HmHp']:.6f}"
        )
    print(f"wrote sweep summary under {out}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "list-scenarios": _cmd_list,
        "validate": _cmd_validate,
        "run": _cmd_run,
        "sweep": _cmd_sweep,
    }
    try:
        return handlers[args.command](args)
    except InvariantBreachError as exc:
        print(f"invariant breach: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
