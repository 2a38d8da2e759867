"""Full-length training runs. Each takes minutes to hours; opt in with SCHEMAFACTOR_RUN_SLOW=1."""

from __future__ import annotations

import os

import pytest

from schemafactor.experiment import reproduce_fig4, reproduce_fig5
from schemafactor.pamdp import TASK_FAMILIES, build_task_spec
from schemafactor.trainer import TrainerConfig, train

RUN_SLOW = os.getenv("SCHEMAFACTOR_RUN_SLOW") == "1"

pytestmark = [
    pytest.mark.slow,
    pytest.mark.skipif(not RUN_SLOW, reason="Set SCHEMAFACTOR_RUN_SLOW=1 to train to completion."),
]


@pytest.mark.parametrize("family", TASK_FAMILIES)
def test_schema_policy_recovers_reference_schema(family: str) -> None:
    spec = build_task_spec(family)
    result = train(spec, "schema", TrainerConfig(seed=0))
    assert result.reached_threshold
    assert result.final_schema == spec.reference_schema()


def test_schema_learns_faster_than_baseline(tmp_path) -> None:
    report = reproduce_fig4(output_root=tmp_path, jobs=os.cpu_count() or 1)
    failing = [row.family for row in report.rows if not row.passed]
    assert not failing, failing
    assert report.verdict_path.exists()


def test_transferred_schema_beats_raster_scratch(tmp_path) -> None:
    report = reproduce_fig5(output_root=tmp_path, jobs=os.cpu_count() or 1)
    failing = [row.family for row in report.rows if not row.passed]
    assert not failing, failing
