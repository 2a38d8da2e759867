from __future__ import annotations

import csv
import statistics
from pathlib import Path

import pytest

from schemafactor.charts import CurveSeries, render_learning_curves
from schemafactor.errors import ConfigError
from schemafactor.experiment import (
    AGGREGATE_COLUMNS,
    ExperimentConfig,
    default_jobs,
    median_episodes_to_threshold,
    parse_config_file,
    parse_config_text,
    run_experiment,
)
from schemafactor.trainer import TrainerConfig

TINY = TrainerConfig(
    workers=2,
    steps_per_worker=6,
    minibatches=2,
    epochs=1,
    episode_budget=10,
    hidden_sizes=(8,),
    stop_at_threshold=False,
)


def test_parse_minimal_config() -> None:
    config = parse_config_text("family = opening\nmode = schema\n")
    assert config.family == "opening"
    assert config.mode == "schema"
    assert config.encoding == "low-dim"
    assert config.seeds == (0,)
    assert config.trainer == TrainerConfig()
    assert config.run_name == "opening-schema-low-dim"


def test_parse_trainer_overrides_and_seed_ranges() -> None:
    text = "\n".join(
        [
            "# comment line",
            "family = picking   # trailing comment",
            "mode = baseline",
            "seeds = 0-2, 7",
            "workers = 4",
            "learning_rate = 3e-4",
            "hidden_sizes = 32,32",
            "stop_at_threshold = no",
            "episode_budget = 20_000",
        ]
    )
    config = parse_config_text(text)
    assert config.seeds == (0, 1, 2, 7)
    assert config.trainer.workers == 4
    assert config.trainer.learning_rate == 3e-4
    assert config.trainer.hidden_sizes == (32, 32)
    assert config.trainer.stop_at_threshold is False
    assert config.trainer.episode_budget == 20_000


def test_schema_path_is_relative_to_config_file(tmp_path) -> None:
    path = tmp_path / "configs" / "transfer.cfg"
    path.parent.mkdir()
    path.write_text("family = opening\nmode = transfer\nschema_path = ../s.schema\n")
    config = parse_config_file(path)
    assert config.schema_path == tmp_path / "configs" / ".." / "s.schema"
    assert config.transfer == "frozen"


def test_output_dir_is_relative_to_config_file(tmp_path) -> None:
    path = tmp_path / "configs" / "run.cfg"
    path.parent.mkdir()
    path.write_text("family = opening\nmode = schema\noutput_dir = ../out\n")
    assert parse_config_file(path).output_dir == tmp_path / "configs" / ".." / "out"

    absolute = tmp_path / "elsewhere"
    path.write_text(f"family = opening\nmode = schema\noutput_dir = {absolute}\n")
    assert parse_config_file(path).output_dir == absolute


@pytest.mark.parametrize(
    "text, line, fragment",
    [
        ("family = opening\nmode schema\n", 2, "key = value"),
        ("family = opening\nmode = schema\nmode = oracle\n", 3, "duplicate"),
        ("family = opening\nmode = schema\ncolour = red\n", 3, "unknown key"),
        ("family = opening\nmode = schema\nencoding =\n", 3, "empty value"),
        ("family = opening\nmode = schema\nworkers = many\n", 3, "workers"),
        ("family = opening\nmode = schema\nseeds = 4-1\n", 3, "seeds"),
        ("family = juggling\nmode = schema\n", 1, "family must be one of"),
        ("family = opening\n\nmode = teleport\n", 3, "mode must be one of"),
        ("family = opening\nmode = schema\nencoding = depth\n", 3, "encoding"),
        ("family = opening\nmode = schema\nseed = 3\n", 3, "unknown key"),
        ("family = opening\nmode = schema\nminibatches = 3\n", 3, "minibatches"),
    ],
)
def test_config_errors_name_the_line(text: str, line: int, fragment: str) -> None:
    with pytest.raises(ConfigError) as info:
        parse_config_text(text, "exp.cfg")
    assert info.value.line == line
    assert str(info.value).startswith(f"exp.cfg:{line}: ")
    assert fragment in str(info.value)


def test_missing_required_key() -> None:
    with pytest.raises(ConfigError) as info:
        parse_config_text("family = opening\n", "exp.cfg")
    assert info.value.line is None
    assert "mode" in str(info.value)


def test_transfer_without_schema_path_is_a_config_error() -> None:
    with pytest.raises(ConfigError):
        parse_config_text("family = opening\nmode = transfer\n")


def test_unreadable_config_file(tmp_path) -> None:
    with pytest.raises(ConfigError):
        parse_config_file(tmp_path / "missing.cfg")


def test_bundled_configs_parse() -> None:
    root = Path(__file__).resolve().parents[1] / "configs"
    paths = sorted(root.glob("*.cfg"))
    assert paths
    for path in paths:
        parse_config_file(path)


def test_default_jobs_reads_environment(monkeypatch) -> None:
    monkeypatch.setenv("SCHEMAFACTOR_JOBS", "3")
    assert default_jobs() == 3
    monkeypatch.setenv("SCHEMAFACTOR_JOBS", "lots")
    assert default_jobs() == 1


def _read_csv(path: Path) -> list[dict[str, str]]:
    with path.open(newline="") as handle:
        return list(csv.DictReader(handle))


def test_run_experiment_writes_recomputable_aggregate(tmp_path) -> None:
    config = ExperimentConfig(family="lateral-lifting", mode="schema", seeds=(0, 1), trainer=TINY)
    experiment = run_experiment(config, output_root=tmp_path, jobs=2)
    out = tmp_path / "lateral-lifting-schema-low-dim"
    assert experiment.output_dir == out
    for seed in (0, 1):
        assert (out / f"lateral-lifting-schema-low-dim-seed{seed}.csv").exists()
        assert (out / f"lateral-lifting-schema-low-dim-seed{seed}.schema").exists()
        assert (out / f"lateral-lifting-schema-low-dim-seed{seed}.ckpt").exists()

    aggregate = _read_csv(experiment.aggregate_path)
    assert tuple(aggregate[0]) == AGGREGATE_COLUMNS
    per_seed = [_read_csv(out / f"lateral-lifting-schema-low-dim-seed{s}.csv") for s in (0, 1)]
    for row in aggregate:
        index = int(row["round"])
        present = [log[index] for log in per_seed if len(log) > index]
        rates = [float(r["trailing_success_rate"]) for r in present]
        assert int(row["seeds"]) == len(present)
        assert float(row["success_median"]) == pytest.approx(statistics.median(rates), abs=1e-6)
        assert float(row["success_min"]) == pytest.approx(min(rates), abs=1e-6)

    svg = experiment.chart_path.read_text()
    assert svg.startswith("<svg")
    assert "<polyline" in svg


def test_parallel_seeds_match_serial(tmp_path) -> None:
    config = ExperimentConfig(family="opening", mode="oracle", seeds=(0, 1), trainer=TINY)
    serial = run_experiment(config, output_root=tmp_path / "serial", jobs=1)
    threaded = run_experiment(config, output_root=tmp_path / "threaded", jobs=2)
    assert serial.aggregate_path.read_bytes() == threaded.aggregate_path.read_bytes()


def test_median_counts_unreached_runs_as_budget(tmp_path) -> None:
    config = ExperimentConfig(family="opening", mode="schema", seeds=(0, 1, 2), trainer=TINY)
    experiment = run_experiment(config, output_root=tmp_path)
    for result in experiment.results:
        result.episodes_to_threshold = None
    experiment.results[0].episodes_to_threshold = 4
    assert median_episodes_to_threshold(experiment.results, 50) == 50.0


def test_with_overrides_replaces_seeds_and_budget() -> None:
    config = ExperimentConfig(family="opening", mode="schema")
    changed = config.with_overrides(seeds=[3, 4], workers=4, budget=100)
    assert changed.seeds == (3, 4)
    assert changed.trainer.workers == 4
    assert changed.trainer.episode_budget == 100
    assert config.seeds == (0,)


def test_chart_draws_band_threshold_and_legend() -> None:
    svg = render_learning_curves(
        [
            CurveSeries("schema", [10, 20, 30], [0.1, 0.5, 0.95], [0.0, 0.4, 0.9], [0.2, 0.6, 1.0]),
            CurveSeries("baseline <monolithic>", [10, 20], [0.0, 0.2]),
        ],
        title="opening",
    )
    assert svg.count("<polyline") == 2
    assert "<polygon" in svg
    assert "stroke-dasharray" in svg
    assert "baseline &lt;monolithic&gt;" in svg
