"""Command-line front end.

Three subcommands cover the pipeline: ``cohort`` samples and screens a
virtual population, ``run`` executes one named scenario end to end
(traces, results table, figure), and ``compare`` executes the three
canonical scenarios and prints the trend verdict. All randomness flows
from the config's master seed, so any command re-run with the same
config and seed writes byte-identical outputs.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime
failure.
"""

import argparse
import sys
from pathlib import Path

from .cohort import CohortError, generate_cohort, write_cohort_csv
from .config import ConfigError, RunConfig
from .figures import write_scenario_figure
from .scenario import (
    compare_scenarios,
    run_scenario,
    write_scenario_csv,
    write_summary_csv,
)
from .simulate import write_trace_csv

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage problems; the contract here says 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", default=None,
                   help="YAML config file (defaults apply when omitted)")
    p.add_argument("--seed", metavar="U64", type=int, default=None,
                   help="override the master seed")
    p.add_argument("--out", metavar="DIR", default=None,
                   help="override the output directory")
    p.add_argument("--parallel", metavar="N", type=int, default=None,
                   help="run patients in N worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="autobasal",
        description="Simulated closed-loop basal-insulin titration: "
                    "cohort generation, scenario runs, and scenario comparison.",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p_cohort = sub.add_parser("cohort", help="sample, screen, and export the virtual cohort")
    _add_common(p_cohort)
    p_run = sub.add_parser("run", help="run one scenario end to end")
    p_run.add_argument("scenario", help="scenario name from the config")
    _add_common(p_run)
    p_compare = sub.add_parser("compare", help="run the three canonical scenarios and report the trend")
    _add_common(p_compare)
    return parser


def _load_config(args) -> RunConfig:
    config = RunConfig.from_yaml(args.config) if args.config else RunConfig.default()
    if args.parallel is not None and args.parallel < 1:
        raise ConfigError("--parallel: must be >= 1")
    return config.with_overrides(seed=args.seed, output_dir=args.out)


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_cohort(config: RunConfig) -> int:
    cohort = generate_cohort(config.cohort_size, config.population)
    out = _out_dir(config)
    path = out / "cohort.csv"
    write_cohort_csv(path, cohort)
    print(
        f"cohort: {len(cohort)} patients accepted from {cohort.attempts} candidates "
        f"(acceptance rate {cohort.acceptance_rate:.1%})"
    )
    print(f"wrote {path}")
    return EXIT_OK


def _write_scenario_outputs(out: Path, result, cohort, config: RunConfig,
                            traces: bool, figure: bool) -> None:
    sdir = out / result.spec.name
    sdir.mkdir(parents=True, exist_ok=True)
    write_scenario_csv(sdir / "results.csv", result, cohort)
    if traces:
        for r in result.results:
            if r.ok:
                write_trace_csv(
                    sdir / f"patient_{r.patient_id:04d}.csv",
                    [r.closed_loop, r.injection],
                )
    if figure:
        write_scenario_figure(sdir / "figure.svg", result, config.pipeline.targets)


def cmd_run(config: RunConfig, name: str, parallel) -> int:
    spec = config.scenario(name)
    cohort = generate_cohort(config.cohort_size, config.population)
    result = run_scenario(spec, cohort, config.pipeline, parallel=parallel)
    out = _out_dir(config)
    _write_scenario_outputs(out, result, cohort, config, traces=True, figure=True)
    s = result.summary
    print(
        f"{s.scenario}: {s.n_patients} patients, {s.n_failed} failed, "
        f"hypo {s.hypo_count}, overestimated {s.overest_count} "
        f"({s.overest_fraction:.0%}), mean time in range {s.mean_time_in_range:.2f}"
    )
    print(f"wrote {out / spec.name}")
    if s.n_failed == s.n_patients:
        print(f"{s.scenario}: every patient failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _compare_specs(config: RunConfig):
    """The canonical trio when configured, else any exactly-three set."""
    roles = ((48.0, 1.0), (24.0, 3.0), (24.0, 1.0))
    by_role = {}
    for s in config.scenarios:
        by_role.setdefault((s.closed_loop_hours, s.gain_multiplier), s)
    if all(r in by_role for r in roles):
        return [by_role[r] for r in roles]
    if len(config.scenarios) == 3:
        return list(config.scenarios)
    need = ", ".join(
        f"{h:g} h at gain x{m:g}" for h, m in roles if (h, m) not in by_role
    )
    raise ConfigError(f"compare needs the three canonical scenarios; missing: {need}")


def cmd_compare(config: RunConfig, parallel) -> int:
    chosen = _compare_specs(config)
    cohort = generate_cohort(config.cohort_size, config.population)
    out = _out_dir(config)
    results = []
    for spec in chosen:
        result = run_scenario(spec, cohort, config.pipeline, parallel=parallel)
        _write_scenario_outputs(out, result, cohort, config, traces=False, figure=False)
        results.append(result)
    report = compare_scenarios(results)
    write_summary_csv(out / "summary.csv", [r for r in report.ordered])
    for line in report.lines():
        print(line)
    print(f"wrote {out / 'summary.csv'}")
    if any(r.summary.n_failed == r.summary.n_patients for r in results):
        print("compare: at least one scenario wholly failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_CONFIG
    try:
        config = _load_config(args)
        if args.command == "cohort":
            return cmd_cohort(config)
        if args.command == "run":
            return cmd_run(config, args.scenario, args.parallel)
        if args.command == "compare":
            return cmd_compare(config, args.parallel)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"autobasal: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CohortError as exc:
        print(f"autobasal: cohort generation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"autobasal: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
