from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from .envs import EpisodeTrace
from .logging_utils import ensure_rich_logging
from .pamdp import TASK_FAMILIES, build_task_spec
from .solver import omits_required_elements, run_schema

logger = logging.getLogger("schemafactor.validation")
ensure_rich_logging()


@dataclass
class ValidationResult:
    name: str
    description: str
    success: bool
    duration: float
    details: str


@dataclass
class Check:
    name: str
    description: str
    runner: Callable[[], ValidationResult]


def validate_reference_schema(
    family: str,
    *,
    seeds: int = 1000,
    required_rate: float = 0.99,
    trace_dir: Optional[Path] = None,
) -> ValidationResult:
    """Run the reference schema with solver arguments over ``seeds`` resets."""
    spec = build_task_spec(family)
    schema = spec.reference_schema()
    name = f"{family}: reference schema"
    description = (
        f"Solver-argument executions of the reference schema succeed on "
        f">= {required_rate:.0%} of {seeds} seeds."
    )
    start = time.time()
    successes = 0
    failed_seeds: list[int] = []
    for seed in range(seeds):
        trace = EpisodeTrace(family, seed) if trace_dir is not None else None
        reward, _ = run_schema(spec, schema, seed, trace=trace)
        if reward > 0:
            successes += 1
        else:
            failed_seeds.append(seed)
            if trace is not None and trace_dir is not None:
                trace.dump(trace_dir / f"{family}-seed{seed}.trace")
    rate = successes / seeds if seeds else 0.0
    details = f"success rate {rate:.4f} ({successes}/{seeds})"
    if failed_seeds:
        details += f"; first failures: {failed_seeds[:5]}"
    return ValidationResult(
        name=name,
        description=description,
        success=rate >= required_rate,
        duration=time.time() - start,
        details=details,
    )


def validate_omissions(
    family: str, *, seeds: Sequence[int] = (0, 1, 2)
) -> ValidationResult:
    """Brute-force every joint-skill sequence of horizon length.

    Sequences missing a required element must never be rewarded.
    """
    spec = build_task_spec(family)
    name = f"{family}: brute-force omissions"
    description = (
        f"All {spec.vocab_size ** spec.horizon} skill sequences lacking a required "
        "element fail under solver arguments."
    )
    start = time.time()
    offenders: list[str] = []
    solved = 0
    for sequence in itertools.product(spec.joint_vocab, repeat=spec.horizon):
        omitted = omits_required_elements(family, sequence)
        for seed in seeds:
            reward, _ = run_schema(spec, sequence, seed)
            if reward > 0:
                solved += 1
                if omitted:
                    offenders.append(
                        " | ".join(joint.label for joint in sequence) + f" @seed {seed}"
                    )
    details = f"{solved} rewarded (sequence, seed) pairs; {len(offenders)} offenders"
    if offenders:
        details += f"; e.g. {offenders[:3]}"
    return ValidationResult(
        name=name,
        description=description,
        success=not offenders,
        duration=time.time() - start,
        details=details,
    )


def build_checks(
    families: Iterable[str] = TASK_FAMILIES,
    *,
    seeds: int = 1000,
    brute_force: bool = True,
    trace_dir: Optional[Path] = None,
) -> list[Check]:
    checks: list[Check] = []
    for family in families:
        checks.append(
            Check(
                name=f"{family}: reference schema",
                description="reference schema with solver arguments",
                runner=lambda family=family: validate_reference_schema(
                    family, seeds=seeds, trace_dir=trace_dir
                ),
            )
        )
        if brute_force:
            checks.append(
                Check(
                    name=f"{family}: brute-force omissions",
                    description="exhaustive joint-vocabulary enumeration",
                    runner=lambda family=family: validate_omissions(family),
                )
            )
    return checks


def run_validations(
    families: Iterable[str] = TASK_FAMILIES,
    *,
    seeds: int = 1000,
    brute_force: bool = True,
    fail_fast: bool = False,
    trace_dir: Optional[Path] = None,
) -> list[ValidationResult]:
    results: list[ValidationResult] = []
    for check in build_checks(
        families, seeds=seeds, brute_force=brute_force, trace_dir=trace_dir
    ):
        logger.info("Running check %s", check.name)
        result = check.runner()
        results.append(result)
        if fail_fast and not result.success:
            break
    return results
