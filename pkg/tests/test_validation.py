from __future__ import annotations

import importlib.util
import io
import os
from pathlib import Path

import pytest
from rich.console import Console

from schemafactor.pamdp import TASK_FAMILIES, build_task_spec
from schemafactor.solver import omits_required_elements, run_schema
from schemafactor.validation import (
    run_validations,
    validate_omissions,
    validate_reference_schema,
)

RUN_SLOW = os.getenv("SCHEMAFACTOR_RUN_SLOW") == "1"


@pytest.mark.parametrize("family", TASK_FAMILIES)
def test_reference_schema_solves_sampled_tasks(family: str) -> None:
    result = validate_reference_schema(family, seeds=50)
    assert result.success, result.details


@pytest.mark.parametrize("family", TASK_FAMILIES)
def test_reference_schema_is_complete(family: str) -> None:
    spec = build_task_spec(family)
    assert not omits_required_elements(family, spec.reference_schema())


def test_all_noop_schema_never_succeeds() -> None:
    spec = build_task_spec("picking")
    noop = spec.joint_skill("no-op", "no-op")
    for seed in range(5):
        reward, world = run_schema(spec, [noop] * 3, seed)
        assert reward == 0.0
        assert world.timestep == 3


def test_lift_without_grasp_is_an_omission() -> None:
    spec = build_task_spec("lateral-lifting")
    sequence = [
        spec.joint_skill("top-grasp", "no-op"),
        spec.joint_skill("lift", "lift"),
        spec.joint_skill("no-op", "no-op"),
    ]
    assert omits_required_elements("lateral-lifting", sequence)
    assert run_schema(spec, sequence, 0)[0] == 0.0


def test_brute_force_lateral_lifting() -> None:
    result = validate_omissions("lateral-lifting")
    assert result.success, result.details


def test_brute_force_opening_single_seed() -> None:
    result = validate_omissions("opening", seeds=(0,))
    assert result.success, result.details


@pytest.mark.parametrize("family", ["picking", "rotating"])
def test_brute_force_multi_step_families(family: str) -> None:
    result = validate_omissions(family)
    assert result.success, result.details


def test_passing_reference_writes_no_traces(tmp_path) -> None:
    result = validate_reference_schema("opening", seeds=5, trace_dir=tmp_path)
    assert result.success
    assert list(tmp_path.iterdir()) == []


@pytest.mark.slow
@pytest.mark.skipif(not RUN_SLOW, reason="Set SCHEMAFACTOR_RUN_SLOW=1 to run the full sweep.")
def test_full_environment_validation() -> None:
    results = run_validations(TASK_FAMILIES, seeds=1000, brute_force=True)
    failures = [r for r in results if not r.success]
    assert not failures, [f"{r.name}: {r.details}" for r in failures]


def _load_script():
    path = Path(__file__).resolve().parents[1] / "scripts" / "validate_environments.py"
    spec = importlib.util.spec_from_file_location("validate_environments", path)
    assert spec is not None and spec.loader is not None
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def test_validation_script_prints_result_table() -> None:
    script = _load_script()
    buffer = io.StringIO()
    console = Console(file=buffer, width=200, color_system=None)
    code = script.main(
        ["--family", "opening", "--seeds", "5", "--skip-brute-force"], console=console
    )
    output = buffer.getvalue()
    assert code == 0
    assert "Environment validation" in output
    assert "opening: reference schema" in output
    assert "OK" in output
