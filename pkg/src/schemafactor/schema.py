"""State-independent skill-sequence logits and their file format."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Protocol, Sequence

import numpy as np

from .errors import (
    ContractViolation,
    SchemaFormatError,
    SchemaFrozenError,
    TransferIncompatibleError,
)
from .logging_utils import ensure_rich_logging
from .pamdp import JointSkill, TaskSpec

logger = logging.getLogger("schemafactor.schema")
ensure_rich_logging()

TransferMode = Literal["frozen", "warm-start"]
TRANSFER_MODES: tuple[TransferMode, ...] = ("frozen", "warm-start")

DEFAULT_ALPHA = 0.1
DEFAULT_BETA = 0.02


class ExecutedSkills(Protocol):
    """Anything exposing the joint-skill index taken at each executed step."""

    @property
    def skill_indices(self) -> Sequence[int]: ...

    @property
    def reward(self) -> float: ...


@dataclass(frozen=True)
class SchemaLogits:
    values: np.ndarray
    family: str
    fingerprint: tuple[str, ...]
    frozen: bool = False

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(self.fingerprint):
            raise ContractViolation(
                f"logits of shape {values.shape} do not fit a vocabulary of "
                f"{len(self.fingerprint)}"
            )
        if not np.all(np.isfinite(values)):
            raise ContractViolation("schema logits must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    def probabilities(self) -> np.ndarray:
        shifted = self.values - self.values.max(axis=1, keepdims=True)
        weights = np.exp(shifted)
        return weights / weights.sum(axis=1, keepdims=True)

    def row_probabilities(self, t: int) -> np.ndarray:
        row = self.values[t] - self.values[t].max()
        weights = np.exp(row)
        return weights / weights.sum()

    def argmax_indices(self) -> tuple[int, ...]:
        # np.argmax returns the first maximum, i.e. the lowest index on ties.
        return tuple(int(np.argmax(row)) for row in self.values)

    def with_values(self, values: np.ndarray) -> SchemaLogits:
        return SchemaLogits(values, self.family, self.fingerprint, self.frozen)

    def freeze(self) -> SchemaLogits:
        return SchemaLogits(self.values, self.family, self.fingerprint, True)


def init_schema(spec: TaskSpec) -> SchemaLogits:
    return SchemaLogits(
        np.zeros((spec.horizon, spec.vocab_size)), spec.family, spec.fingerprint
    )


def update_logits(
    logits: SchemaLogits,
    trajectory: ExecutedSkills,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
) -> SchemaLogits:
    """Reinforce the skills a trajectory took: +alpha on success, -beta on failure.

    Only the entries for timesteps the trajectory actually executed change.
    """
    if logits.frozen:
        raise SchemaFrozenError("frozen schema logits cannot be updated")
    if alpha <= 0 or beta <= 0:
        raise ContractViolation("alpha and beta must be positive")
    indices = list(trajectory.skill_indices)
    if len(indices) > logits.horizon:
        raise ContractViolation(
            f"trajectory of {len(indices)} steps exceeds horizon {logits.horizon}"
        )
    delta = alpha if trajectory.reward > 0 else -beta
    values = logits.values.copy()
    for t, index in enumerate(indices):
        if not 0 <= index < values.shape[1]:
            raise ContractViolation(
                f"skill index {index} outside vocabulary of {values.shape[1]}"
            )
        values[t, index] += delta
    return logits.with_values(values)


def format_schema(sequence: Sequence[JointSkill]) -> str:
    return ";".join(joint.label for joint in sequence)


# ----------------------------------------------------------------------
# Schema files
#
#   family=<task family>
#   T=<horizon>
#   vocab=<left>:<right>,<left>:<right>,...
#   # argmax <left>:<right>;...          (informational, ignored on read)
#   <T lines of vocab-size space-separated values>


def export_schema(logits: SchemaLogits, path: str | Path) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    argmax = ";".join(logits.fingerprint[i] for i in logits.argmax_indices())
    lines = [
        f"family={logits.family}",
        f"T={logits.horizon}",
        "vocab=" + ",".join(logits.fingerprint),
        f"# argmax {argmax}",
    ]
    lines += [" ".join(format(float(v), ".17g") for v in row) for row in logits.values]
    target.write_text("\n".join(lines) + "\n")
    return target


@dataclass(frozen=True)
class SchemaFile:
    family: str
    horizon: int
    fingerprint: tuple[str, ...]
    values: np.ndarray

    def argmax_labels(self) -> tuple[str, ...]:
        return tuple(self.fingerprint[int(np.argmax(row))] for row in self.values)


def read_schema_file(path: str | Path) -> SchemaFile:
    header: dict[str, str] = {}
    rows: list[list[float]] = []
    for number, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" in line:
            key, _, value = line.partition("=")
            header[key.strip()] = value.strip()
            continue
        try:
            rows.append([float(token) for token in line.split()])
        except ValueError as exc:
            raise SchemaFormatError(f"{path}:{number}: bad logit row") from exc
    missing = {"family", "T", "vocab"} - header.keys()
    if missing:
        raise SchemaFormatError(f"{path}: missing header keys {sorted(missing)}")
    try:
        horizon = int(header["T"])
    except ValueError as exc:
        raise SchemaFormatError(f"{path}: T must be an integer") from exc
    fingerprint = tuple(header["vocab"].split(","))
    if len(rows) != horizon or any(len(row) != len(fingerprint) for row in rows):
        raise SchemaFormatError(
            f"{path}: expected {horizon} rows of {len(fingerprint)} values"
        )
    return SchemaFile(header["family"], horizon, fingerprint, np.array(rows))


def import_schema(
    path: str | Path, spec: TaskSpec, mode: TransferMode = "frozen"
) -> SchemaLogits:
    """Load logits for ``spec``; horizon and vocabulary must match exactly."""
    if mode not in TRANSFER_MODES:
        raise ContractViolation(f"unknown transfer mode {mode!r}")
    loaded = read_schema_file(path)
    if loaded.horizon != spec.horizon:
        raise TransferIncompatibleError(
            f"schema horizon {loaded.horizon} does not match task horizon {spec.horizon}"
        )
    if loaded.fingerprint != spec.fingerprint:
        raise TransferIncompatibleError(
            f"schema vocabulary from {loaded.family} ({len(loaded.fingerprint)} joint "
            f"skills) does not match {spec.family} ({spec.vocab_size} joint skills)"
        )
    logger.info("Imported %s schema from %s (%s)", loaded.family, path, mode)
    return SchemaLogits(
        loaded.values, spec.family, spec.fingerprint, frozen=(mode == "frozen")
    )
