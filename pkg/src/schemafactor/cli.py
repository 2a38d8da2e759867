from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

from rich.console import Console
from rich.table import Table

from .errors import ConfigError, TransferIncompatibleError
from .experiment import (
    ReproductionReport,
    default_jobs,
    default_output_root,
    parse_config_file,
    reproduce_fig4,
    reproduce_fig5,
    run_experiment,
)
from .logging_utils import ensure_rich_logging, format_rate
from .pamdp import TASK_FAMILIES
from .policy import SchemaPolicy, load_policy
from .schema import export_schema, read_schema_file

logger = logging.getLogger("schemafactor.cli")
ensure_rich_logging()

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_TRANSFER = 3


def _add_run_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--workers", type=int, help="Parallel environment workers per run")
    parser.add_argument("--budget", type=int, help="Episode budget per run")
    parser.add_argument(
        "--jobs",
        type=int,
        default=None,
        help="Seeds trained concurrently (default: $SCHEMAFACTOR_JOBS or 1)",
    )
    parser.add_argument(
        "--output",
        type=Path,
        default=None,
        help="Output root (default: $SCHEMAFACTOR_OUTPUT or ./runs)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="schemafactor",
        description="Train and compare schema-factored bimanual skill policies.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run an experiment config file")
    run.add_argument("config", type=Path)
    run.add_argument(
        "--seed",
        type=int,
        action="append",
        help="Seed to run (repeatable; replaces the config's seed list)",
    )
    _add_run_overrides(run)

    reproduce = commands.add_parser("reproduce", help="Re-run a comparison experiment")
    reproduce.add_argument("figure", choices=["fig4", "fig5"])
    reproduce.add_argument("--seed", type=int, action="append", help="Seeds (default 0-4)")
    reproduce.add_argument(
        "--family",
        action="append",
        choices=list(TASK_FAMILIES),
        help="Restrict to these task families (repeatable)",
    )
    _add_run_overrides(reproduce)

    export = commands.add_parser("export-schema", help="Write a checkpoint's schema logits")
    export.add_argument("checkpoint", type=Path)
    export.add_argument("out", type=Path)

    inspect = commands.add_parser("inspect-schema", help="Print a schema file's argmax sequence")
    inspect.add_argument("file", type=Path)
    return parser


def _cmd_run(args: argparse.Namespace, console: Console) -> int:
    config = parse_config_file(args.config).with_overrides(
        seeds=args.seed, workers=args.workers, budget=args.budget
    )
    experiment = run_experiment(
        config,
        output_root=args.output or default_output_root(),
        jobs=args.jobs or default_jobs(),
    )
    table = Table(title=f"{config.run_name} ({config.family}, {config.mode})")
    table.add_column("Seed", justify="right")
    table.add_column("Episodes", justify="right")
    table.add_column("Success", justify="right")
    table.add_column("Episodes to threshold", justify="right")
    table.add_column("Schema")
    for result in experiment.results:
        final = result.rounds[-1].trailing_success_rate if result.rounds else 0.0
        reached = result.episodes_to_threshold
        table.add_row(
            str(result.seed),
            str(result.episodes),
            format_rate(final, threshold=config.trainer.success_threshold),
            str(reached) if reached is not None else "-",
            result.rounds[-1].argmax_schema if result.rounds else "-",
        )
    console.print(table)
    console.print(f"Aggregate: {experiment.aggregate_path}")
    console.print(f"Chart: {experiment.chart_path}")
    return EXIT_OK


def _print_report(report: ReproductionReport, console: Console) -> None:
    table = Table(title=f"{report.figure} verdicts")
    for column in report.columns:
        table.add_column(column)
    for row in report.rows:
        verdict = "[bold green]PASS[/]" if row.passed else "[bold red]FAIL[/]"
        table.add_row(row.family, *row.cells, verdict)
    console.print(table)
    console.print(f"Verdicts: {report.verdict_path}")


def _cmd_reproduce(args: argparse.Namespace, console: Console) -> int:
    kwargs: dict[str, object] = {
        "output_root": args.output or default_output_root(),
        "jobs": args.jobs or default_jobs(),
    }
    if args.seed:
        kwargs["seeds"] = tuple(args.seed)
    if args.workers is not None:
        kwargs["workers"] = args.workers
    if args.budget is not None:
        kwargs["budget"] = args.budget
    if args.family:
        kwargs["families"] = tuple(args.family)
    runner = reproduce_fig4 if args.figure == "fig4" else reproduce_fig5
    report = runner(**kwargs)  # type: ignore[arg-type]
    _print_report(report, console)
    return EXIT_OK if report.passed else EXIT_FAILURE


def _cmd_export(args: argparse.Namespace, console: Console) -> int:
    policy = load_policy(args.checkpoint)
    if not isinstance(policy, SchemaPolicy):
        print(
            f"{args.checkpoint}: {policy.mode} checkpoints carry no schema logits",
            file=sys.stderr,
        )
        return EXIT_FAILURE
    path = export_schema(policy.logits, args.out)
    console.print(f"Wrote {path}")
    return EXIT_OK


def _cmd_inspect(args: argparse.Namespace, console: Console) -> int:
    schema = read_schema_file(args.file)
    table = Table(title=f"{schema.family} schema (T={schema.horizon})")
    table.add_column("Step", justify="right")
    table.add_column("Left")
    table.add_column("Right")
    table.add_column("Logit", justify="right")
    for t, label in enumerate(schema.argmax_labels()):
        left, _, right = label.partition(":")
        table.add_row(str(t + 1), left, right, f"{schema.values[t].max():.4f}")
    console.print(table)
    return EXIT_OK


COMMANDS = {
    "run": _cmd_run,
    "reproduce": _cmd_reproduce,
    "export-schema": _cmd_export,
    "inspect-schema": _cmd_inspect,
}


def main(argv: Optional[list[str]] = None, *, console: Optional[Console] = None) -> int:
    args = build_parser().parse_args(argv if argv is not None else sys.argv[1:])
    if args.verbose:
        logging.getLogger("schemafactor").setLevel(logging.DEBUG)
    console = console or Console()
    try:
        return COMMANDS[args.command](args, console)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except TransferIncompatibleError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_TRANSFER
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
