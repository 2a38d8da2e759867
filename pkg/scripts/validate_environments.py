#!/usr/bin/env python3
"""Check that reference schemas solve each task and that incomplete sequences cannot."""

from __future__ import annotations

import argparse
from pathlib import Path
from typing import Optional, Sequence

from dotenv import load_dotenv
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from schemafactor.pamdp import TASK_FAMILIES
from schemafactor.validation import ValidationResult, run_validations

load_dotenv()


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Validate the bimanual task environments.")
    parser.add_argument(
        "--family",
        action="append",
        choices=list(TASK_FAMILIES),
        help="Task family to check (repeatable; default: all).",
    )
    parser.add_argument(
        "--seeds",
        type=int,
        default=1000,
        help="Resets per family for the reference-schema check.",
    )
    parser.add_argument(
        "--skip-brute-force",
        action="store_true",
        help="Skip the exhaustive skill-sequence enumeration.",
    )
    parser.add_argument(
        "--trace-dir",
        type=Path,
        help="Write step traces of failing reference episodes here.",
    )
    parser.add_argument(
        "--fail-fast",
        action="store_true",
        help="Abort after the first failing check.",
    )
    return parser.parse_args(argv)


def render_results(results: Sequence[ValidationResult]) -> Table:
    table = Table(title="Environment validation")
    table.add_column("Check")
    table.add_column("Result")
    table.add_column("Time", justify="right")
    table.add_column("Details")
    for result in results:
        status = "[bold green]OK[/]" if result.success else "[bold red]FAIL[/]"
        table.add_row(
            escape(result.name),
            status,
            f"{result.duration:.1f}s",
            escape(result.details),
        )
    return table


def main(
    argv: Optional[Sequence[str]] = None, *, console: Optional[Console] = None
) -> int:
    args = parse_args(argv)
    results = run_validations(
        args.family or TASK_FAMILIES,
        seeds=args.seeds,
        brute_force=not args.skip_brute_force,
        fail_fast=args.fail_fast,
        trace_dir=args.trace_dir,
    )
    (console or Console()).print(render_results(results))
    return 0 if all(result.success for result in results) else 1


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
