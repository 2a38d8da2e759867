from __future__ import annotations

import csv
import logging
import os
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from dotenv import load_dotenv
from joblib import Parallel, delayed

from .charts import CurveSeries, write_learning_curves
from .envs import ENCODINGS, Encoding
from .errors import ConfigError
from .logging_utils import ensure_rich_logging
from .pamdp import TASK_FAMILIES, build_task_spec
from .schema import TRANSFER_MODES, TransferMode
from .trainer import TRAINING_MODES, TrainerConfig, TrainingMode, TrainingResult, train

logger = logging.getLogger("schemafactor.experiment")
ensure_rich_logging()

DEFAULT_OUTPUT_ROOT = "runs"
FIG4_BUDGET = 50_000
FIG5_SCRATCH_BUDGET = 100_000
REPRODUCTION_SEEDS = (0, 1, 2, 3, 4)
_DOTENV_LOADED = False


def _ensure_dotenv_loaded() -> None:
    """Load environment variables from .env once per process."""
    global _DOTENV_LOADED
    if _DOTENV_LOADED:
        return
    load_dotenv()
    _DOTENV_LOADED = True


def default_output_root() -> Path:
    _ensure_dotenv_loaded()
    return Path(os.getenv("SCHEMAFACTOR_OUTPUT", DEFAULT_OUTPUT_ROOT))


def default_jobs() -> int:
    _ensure_dotenv_loaded()
    raw = os.getenv("SCHEMAFACTOR_JOBS", "1")
    try:
        return max(int(raw), 1)
    except ValueError:
        logger.warning("Ignoring non-integer SCHEMAFACTOR_JOBS=%r", raw)
        return 1


@dataclass(frozen=True)
class ExperimentConfig:
    family: str
    mode: TrainingMode
    encoding: Encoding = "low-dim"
    schema_path: Optional[Path] = None
    transfer: TransferMode = "frozen"
    seeds: tuple[int, ...] = (0,)
    name: Optional[str] = None
    output_dir: Optional[Path] = None
    trainer: TrainerConfig = field(default_factory=TrainerConfig)

    def __post_init__(self) -> None:
        if self.family not in TASK_FAMILIES:
            raise ValueError(f"unknown task family {self.family!r}")
        if self.mode not in TRAINING_MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.encoding not in ENCODINGS:
            raise ValueError(f"unknown encoding {self.encoding!r}")
        if self.transfer not in TRANSFER_MODES:
            raise ValueError(f"unknown transfer mode {self.transfer!r}")
        if self.mode == "transfer" and self.schema_path is None:
            raise ValueError("transfer mode requires schema_path")
        if self.mode != "transfer" and self.schema_path is not None:
            raise ValueError("schema_path is only used by transfer mode")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    @property
    def run_name(self) -> str:
        return self.name or f"{self.family}-{self.mode}-{self.encoding}"

    def with_overrides(
        self,
        *,
        seeds: Optional[Sequence[int]] = None,
        workers: Optional[int] = None,
        budget: Optional[int] = None,
        output_dir: Optional[Path] = None,
    ) -> ExperimentConfig:
        trainer = self.trainer
        if workers is not None:
            trainer = replace(trainer, workers=workers)
        if budget is not None:
            trainer = replace(trainer, episode_budget=budget)
        return replace(
            self,
            seeds=tuple(seeds) if seeds is not None else self.seeds,
            output_dir=output_dir if output_dir is not None else self.output_dir,
            trainer=trainer,
        )


# ----------------------------------------------------------------------
# Config files
#
# Flat "key = value" lines; "#" starts a comment. Required: family, mode.
# Optional: encoding, schema_path (relative to the config file), transfer,
# seeds ("0,1,2" or "0-4"), name, output_dir, and any TrainerConfig field
# (hidden_sizes as "64,64").

EXPERIMENT_KEYS = (
    "family",
    "mode",
    "encoding",
    "schema_path",
    "transfer",
    "seeds",
    "name",
    "output_dir",
)
_TRAINER_DEFAULTS = TrainerConfig()
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_seeds(value: str) -> tuple[int, ...]:
    seeds: list[int] = []
    for part in value.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            low, _, high = part.partition("-")
            start, stop = int(low), int(high)
            if stop < start:
                raise ValueError(f"empty seed range {part!r}")
            seeds.extend(range(start, stop + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("no seeds given")
    return tuple(seeds)


def _coerce_trainer_value(key: str, value: str) -> object:
    default = getattr(_TRAINER_DEFAULTS, key)
    if isinstance(default, bool):
        lowered = value.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if isinstance(default, int):
        return int(value.replace("_", ""))
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return tuple(int(part) for part in value.split(",") if part.strip())
    raise ValueError(f"unsupported setting {key}")  # pragma: no cover


def parse_config_text(text: str, path: str = "<config>") -> ExperimentConfig:
    values: dict[str, str] = {}
    lines: dict[str, int] = {}
    trainer_overrides: dict[str, object] = {}
    trainer_keys = set(TrainerConfig.field_names()) - {"seed"}
    base = Path(path).parent

    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", path=path, line=number)
        key, _, value = (part.strip() for part in line.partition("="))
        if key in lines:
            raise ConfigError(
                f"duplicate key {key!r} (first set on line {lines[key]})", path=path, line=number
            )
        if key not in EXPERIMENT_KEYS and key not in trainer_keys:
            raise ConfigError(f"unknown key {key!r}", path=path, line=number)
        if not value:
            raise ConfigError(f"empty value for {key!r}", path=path, line=number)
        lines[key] = number
        if key in trainer_keys:
            try:
                trainer_overrides[key] = _coerce_trainer_value(key, value)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}", path=path, line=number) from exc
        else:
            values[key] = value

    for required in ("family", "mode"):
        if required not in values:
            raise ConfigError(f"missing required key {required!r}", path=path)

    kwargs: dict[str, object] = {"family": values["family"], "mode": values["mode"]}
    try:
        if "seeds" in values:
            kwargs["seeds"] = _parse_seeds(values["seeds"])
    except ValueError as exc:
        raise ConfigError(f"seeds: {exc}", path=path, line=lines["seeds"]) from exc
    for key in ("encoding", "transfer", "name"):
        if key in values:
            kwargs[key] = values[key]
    if "schema_path" in values:
        kwargs["schema_path"] = base / values["schema_path"]
    if "output_dir" in values:
        kwargs["output_dir"] = base / values["output_dir"]
    try:
        kwargs["trainer"] = TrainerConfig(**trainer_overrides)  # type: ignore[arg-type]
    except ValueError as exc:
        first = min((lines[k] for k in trainer_overrides), default=None)
        raise ConfigError(str(exc), path=path, line=first) from exc
    choices = {
        "family": TASK_FAMILIES,
        "mode": TRAINING_MODES,
        "encoding": ENCODINGS,
        "transfer": TRANSFER_MODES,
    }
    for key, allowed in choices.items():
        if key in values and values[key] not in allowed:
            raise ConfigError(
                f"{key} must be one of {', '.join(allowed)}, got {values[key]!r}",
                path=path,
                line=lines[key],
            )
    try:
        return ExperimentConfig(**kwargs)  # type: ignore[arg-type]
    except ValueError as exc:
        raise ConfigError(str(exc), path=path, line=lines["mode"]) from exc


def parse_config_file(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path=str(path)) from exc
    return parse_config_text(text, str(path))


# ----------------------------------------------------------------------
# Running experiments


@dataclass(frozen=True)
class AggregateRow:
    round: int
    seeds: int
    episodes_median: float
    success_median: float
    success_min: float
    success_max: float

    def as_row(self) -> list[str]:
        return [
            str(self.round),
            str(self.seeds),
            f"{self.episodes_median:.1f}",
            f"{self.success_median:.6f}",
            f"{self.success_min:.6f}",
            f"{self.success_max:.6f}",
        ]


AGGREGATE_COLUMNS = (
    "round",
    "seeds",
    "episodes_median",
    "success_median",
    "success_min",
    "success_max",
)


def aggregate_rounds(results: Sequence[TrainingResult]) -> list[AggregateRow]:
    """Per-round statistics over the seeds that ran that round."""
    rows: list[AggregateRow] = []
    longest = max((len(r.rounds) for r in results), default=0)
    for index in range(longest):
        present = [r.rounds[index] for r in results if len(r.rounds) > index]
        rates = [record.trailing_success_rate for record in present]
        rows.append(
            AggregateRow(
                round=index,
                seeds=len(present),
                episodes_median=float(statistics.median(rec.episodes for rec in present)),
                success_median=float(statistics.median(rates)),
                success_min=min(rates),
                success_max=max(rates),
            )
        )
    return rows


def write_aggregate(rows: Sequence[AggregateRow], path: str | Path) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(AGGREGATE_COLUMNS)
        writer.writerows(row.as_row() for row in rows)
    return target


def curve_from_rows(label: str, rows: Sequence[AggregateRow]) -> CurveSeries:
    return CurveSeries(
        label=label,
        xs=[row.episodes_median for row in rows],
        ys=[row.success_median for row in rows],
        lower=[row.success_min for row in rows],
        upper=[row.success_max for row in rows],
    )


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    results: list[TrainingResult]
    output_dir: Path
    aggregate_path: Path
    chart_path: Path

    def median_episodes_to_threshold(self) -> float:
        return median_episodes_to_threshold(self.results, self.config.trainer.episode_budget)


def median_episodes_to_threshold(results: Sequence[TrainingResult], budget: int) -> float:
    """Median over seeds; runs that never reach the threshold count as ``budget``."""
    return float(
        statistics.median(
            r.episodes_to_threshold if r.episodes_to_threshold is not None else budget
            for r in results
        )
    )


def _train_seed(config: ExperimentConfig, seed: int, output_dir: Path) -> TrainingResult:
    return train(
        build_task_spec(config.family),
        config.mode,
        replace(config.trainer, seed=seed),
        encoding=config.encoding,
        schema_path=config.schema_path,
        transfer=config.transfer,
        output_dir=output_dir,
        run_name=f"{config.run_name}-seed{seed}",
    )


def run_experiment(
    config: ExperimentConfig,
    *,
    output_root: Optional[Path] = None,
    jobs: int = 1,
) -> ExperimentResult:
    """Train every seed, then write the aggregate CSV and learning-curve chart."""
    output_dir = config.output_dir or (output_root or default_output_root()) / config.run_name
    output_dir.mkdir(parents=True, exist_ok=True)
    logger.info(
        "Experiment %s: %d seed(s) into %s", config.run_name, len(config.seeds), output_dir
    )
    results = Parallel(n_jobs=jobs, backend="threading")(
        delayed(_train_seed)(config, seed, output_dir) for seed in config.seeds
    )
    rows = aggregate_rounds(results)
    aggregate_path = write_aggregate(rows, output_dir / f"{config.run_name}-aggregate.csv")
    chart_path = write_learning_curves(
        output_dir / f"{config.run_name}.svg",
        [curve_from_rows(config.mode, rows)],
        title=f"{config.family} ({config.mode}, {config.encoding})",
    )
    return ExperimentResult(config, list(results), output_dir, aggregate_path, chart_path)


# ----------------------------------------------------------------------
# Figure reproduction


@dataclass(frozen=True)
class VerdictRow:
    family: str
    cells: tuple[str, ...]
    passed: bool


@dataclass
class ReproductionReport:
    figure: str
    columns: tuple[str, ...]
    rows: list[VerdictRow]
    verdict_path: Path
    chart_paths: list[Path]

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows)


def _write_verdicts(
    path: Path, columns: Sequence[str], rows: Sequence[VerdictRow]
) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row.family, *row.cells, "PASS" if row.passed else "FAIL"])
    return path


FIG4_COLUMNS = (
    "family",
    "oracle_median",
    "schema_median",
    "baseline_median",
    "schema_recovered",
    "verdict",
)
FIG5_COLUMNS = (
    "family",
    "transfer_median",
    "scratch_median",
    "transfer_reached",
    "scratch_slow",
    "verdict",
)


def reproduce_fig4(
    *,
    output_root: Optional[Path] = None,
    seeds: Sequence[int] = REPRODUCTION_SEEDS,
    budget: int = FIG4_BUDGET,
    workers: int = 8,
    jobs: int = 1,
    families: Iterable[str] = TASK_FAMILIES,
) -> ReproductionReport:
    """Baseline vs schema vs oracle on low-dimensional observations."""
    root = (output_root or default_output_root()) / "fig4"
    trainer = TrainerConfig(workers=workers, episode_budget=budget)
    rows: list[VerdictRow] = []
    charts: list[Path] = []
    for family in families:
        medians: dict[str, float] = {}
        curves: list[CurveSeries] = []
        recovered = 0
        for mode in ("baseline", "schema", "oracle"):
            experiment = run_experiment(
                ExperimentConfig(
                    family=family,
                    mode=mode,  # type: ignore[arg-type]
                    seeds=tuple(seeds),
                    name=f"{family}-{mode}",
                    output_dir=root / family,
                    trainer=trainer,
                ),
                jobs=jobs,
            )
            medians[mode] = experiment.median_episodes_to_threshold()
            curves.append(curve_from_rows(mode, aggregate_rounds(experiment.results)))
            if mode == "schema":
                reference = build_task_spec(family).reference_schema()
                recovered = sum(r.final_schema == reference for r in experiment.results)
        charts.append(
            write_learning_curves(
                root / f"{family}.svg", curves, title=f"{family}: baseline vs schema vs oracle"
            )
        )
        passed = (
            medians["oracle"] <= medians["schema"]
            and medians["schema"] <= 0.5 * medians["baseline"]
        )
        rows.append(
            VerdictRow(
                family,
                (
                    f"{medians['oracle']:.1f}",
                    f"{medians['schema']:.1f}",
                    f"{medians['baseline']:.1f}",
                    f"{recovered}/{len(seeds)}",
                ),
                passed,
            )
        )
    verdict_path = _write_verdicts(root / "verdict.csv", FIG4_COLUMNS, rows)
    return ReproductionReport("fig4", FIG4_COLUMNS, rows, verdict_path, charts)


def reproduce_fig5(
    *,
    output_root: Optional[Path] = None,
    seeds: Sequence[int] = REPRODUCTION_SEEDS,
    budget: int = FIG4_BUDGET,
    scratch_budget: int = FIG5_SCRATCH_BUDGET,
    workers: int = 8,
    jobs: int = 1,
    families: Iterable[str] = TASK_FAMILIES,
) -> ReproductionReport:
    """Raster observations: frozen low-dim schema transfer vs learning from scratch."""
    root = (output_root or default_output_root()) / "fig5"
    rows: list[VerdictRow] = []
    charts: list[Path] = []
    for family in families:
        source = run_experiment(
            ExperimentConfig(
                family=family,
                mode="schema",
                seeds=tuple(seeds),
                name=f"{family}-source",
                output_dir=root / family,
                trainer=TrainerConfig(workers=workers, episode_budget=budget),
            ),
            jobs=jobs,
        )
        transfer_results: list[TrainingResult] = []
        for result in source.results:
            transfer = run_experiment(
                ExperimentConfig(
                    family=family,
                    mode="transfer",
                    encoding="raster",
                    schema_path=result.schema_path,
                    seeds=(result.seed,),
                    name=f"{family}-transfer-from{result.seed}",
                    output_dir=root / family,
                    trainer=TrainerConfig(workers=workers, episode_budget=budget),
                )
            )
            transfer_results.extend(transfer.results)
        scratch = run_experiment(
            ExperimentConfig(
                family=family,
                mode="schema",
                encoding="raster",
                seeds=tuple(seeds),
                name=f"{family}-scratch",
                output_dir=root / family,
                trainer=TrainerConfig(workers=workers, episode_budget=scratch_budget),
            ),
            jobs=jobs,
        )
        charts.append(
            write_learning_curves(
                root / f"{family}.svg",
                [
                    curve_from_rows("transfer", aggregate_rounds(transfer_results)),
                    curve_from_rows("scratch", aggregate_rounds(scratch.results)),
                ],
                title=f"{family}: raster transfer vs scratch",
            )
        )
        reached = sum(r.reached_threshold for r in transfer_results)
        slow = 0
        for transferred, fresh in zip(transfer_results, scratch.results):
            if fresh.episodes_to_threshold is None or (
                transferred.episodes_to_threshold is not None
                and fresh.episodes_to_threshold >= 3 * transferred.episodes_to_threshold
            ):
                slow += 1
        needed = -(-4 * len(seeds) // 5)
        rows.append(
            VerdictRow(
                family,
                (
                    f"{median_episodes_to_threshold(transfer_results, budget):.1f}",
                    f"{median_episodes_to_threshold(scratch.results, scratch_budget):.1f}",
                    f"{reached}/{len(seeds)}",
                    f"{slow}/{len(seeds)}",
                ),
                reached == len(seeds) and slow >= needed,
            )
        )
    verdict_path = _write_verdicts(root / "verdict.csv", FIG5_COLUMNS, rows)
    return ReproductionReport("fig5", FIG5_COLUMNS, rows, verdict_path, charts)
