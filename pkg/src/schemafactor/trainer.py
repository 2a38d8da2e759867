"""Rollout collection, PPO optimisation and the interleaved schema updates."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Literal, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from . import nn
from .envs import (
    DEFAULT_TOLERANCES,
    ENCODINGS,
    Encoding,
    Tolerances,
    WorldState,
    observation_size,
    observe,
    reset,
    step,
)
from .errors import ContractViolation, NonFiniteLossError
from .logging_utils import ensure_rich_logging, format_rate
from .pamdp import JointSkill, TaskSpec
from .policy import (
    Policy,
    SchemaPolicy,
    build_policy,
    network_input,
    save_policy,
)
from .schema import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    TransferMode,
    export_schema,
    format_schema,
    import_schema,
    update_logits,
)

logger = logging.getLogger("schemafactor.trainer")
ensure_rich_logging()

TrainingMode = Literal["baseline", "schema", "oracle", "transfer"]
TRAINING_MODES: tuple[TrainingMode, ...] = ("baseline", "schema", "oracle", "transfer")

ADVANTAGE_EPS = 1e-8

# Stream tags keep network init, rollouts, environment resets and minibatch
# shuffles on independent seed sequences.
_INIT_STREAM = 0
_ROLLOUT_STREAM = 1
_RESET_STREAM = 2
_SHUFFLE_STREAM = 3


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 0.001
    clip: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    grad_clip: float = 0.5
    steps_per_worker: int = 10
    minibatches: int = 4
    epochs: int = 4
    workers: int = 8
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    gamma: float = 1.0
    seed: int = 0
    episode_budget: int = 50_000
    success_threshold: float = 0.9
    success_window: int = 100
    stop_at_threshold: bool = True
    hidden_sizes: tuple[int, ...] = nn.HIDDEN_SIZES
    log_spread_init: float = -1.0
    n_jobs: int = 1

    def __post_init__(self) -> None:
        positive = (
            "learning_rate",
            "clip",
            "grad_clip",
            "steps_per_worker",
            "minibatches",
            "epochs",
            "workers",
            "alpha",
            "beta",
            "gamma",
            "episode_budget",
            "success_threshold",
            "success_window",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.entropy_coef < 0 or self.value_coef < 0:
            raise ValueError("loss coefficients must be non-negative")
        if self.gamma > 1.0 or self.success_threshold > 1.0:
            raise ValueError("gamma and success_threshold must be <= 1")
        if (self.steps_per_worker * self.workers) % self.minibatches:
            raise ValueError("minibatches must divide workers * steps_per_worker")
        if not self.hidden_sizes or any(width <= 0 for width in self.hidden_sizes):
            raise ValueError("hidden_sizes must be non-empty positive widths")
        if self.n_jobs == 0:
            raise ValueError("n_jobs must be non-zero")

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


# ----------------------------------------------------------------------
# Trajectories


@dataclass(frozen=True)
class TrajectoryStep:
    observation: np.ndarray
    timestep: int
    skill_index: int
    raw: np.ndarray
    log_prob: float
    value: float


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[TrajectoryStep, ...]
    reward: float
    env_seed: int
    worker: int

    def __post_init__(self) -> None:
        if not self.steps:
            raise ContractViolation("trajectory has no steps")
        if not all(math.isfinite(s.log_prob) for s in self.steps):
            raise ContractViolation("trajectory log-probabilities must be finite")

    @property
    def skill_indices(self) -> tuple[int, ...]:
        return tuple(s.skill_index for s in self.steps)

    @property
    def success(self) -> bool:
        return self.reward > 0

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class WorkerState:
    """Per-worker environment progress carried between collection rounds."""

    worker: int
    episodes_started: int = 0
    world: Optional[WorldState] = None
    env_seed: int = 0
    partial: tuple[TrajectoryStep, ...] = ()


def _derive_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


def _run_worker(
    policy: Policy,
    state: WorkerState,
    *,
    encoding: Encoding,
    tolerances: Tolerances,
    steps: int,
    base_seed: int,
    round_seed: int,
) -> tuple[WorkerState, list[Trajectory]]:
    rng = np.random.default_rng([round_seed, state.worker])
    spec = policy.spec
    completed: list[Trajectory] = []
    world, env_seed = state.world, state.env_seed
    episodes_started = state.episodes_started
    partial = list(state.partial)
    for _ in range(steps):
        if world is None:
            env_seed = _derive_seed(base_seed, _RESET_STREAM, state.worker, episodes_started)
            episodes_started += 1
            world = reset(spec, env_seed)
            partial = []
        obs = observe(world, encoding)
        t = world.timestep
        sample = policy.sample_action(obs, t, rng)
        world, reward, done = step(world, sample.action, tolerances)
        partial.append(
            TrajectoryStep(
                observation=obs.data,
                timestep=t,
                skill_index=sample.skill_index,
                raw=sample.raw,
                log_prob=sample.log_prob,
                value=sample.value,
            )
        )
        if done:
            completed.append(Trajectory(tuple(partial), reward, env_seed, state.worker))
            world = None
            partial = []
    carried = WorkerState(
        worker=state.worker,
        episodes_started=episodes_started,
        world=world,
        env_seed=env_seed,
        partial=tuple(partial),
    )
    return carried, completed


class RolloutCollector:
    """Runs ``workers`` environment streams against a frozen policy snapshot.

    Episodes still running at the end of a round continue next round; only
    complete episodes are returned, concatenated in worker order.
    """

    def __init__(
        self,
        spec: TaskSpec,
        config: TrainerConfig,
        *,
        encoding: Encoding = "low-dim",
        tolerances: Tolerances = DEFAULT_TOLERANCES,
    ) -> None:
        self.spec = spec
        self.config = config
        self.encoding: Encoding = encoding
        self.tolerances = tolerances
        self.states = [WorkerState(worker=w) for w in range(config.workers)]

    def collect(self, policy: Policy, round_seed: int) -> list[Trajectory]:
        snapshot = policy.snapshot()
        jobs = (
            delayed(_run_worker)(
                snapshot,
                state,
                encoding=self.encoding,
                tolerances=self.tolerances,
                steps=self.config.steps_per_worker,
                base_seed=self.config.seed,
                round_seed=round_seed,
            )
            for state in self.states
        )
        results = Parallel(n_jobs=self.config.n_jobs, backend="threading")(jobs)
        self.states = [state for state, _ in results]
        return [trajectory for _, batch in results for trajectory in batch]


def collect_rollouts(
    policy: Policy,
    spec: TaskSpec,
    config: TrainerConfig,
    round_seed: int,
    *,
    encoding: Encoding = "low-dim",
) -> list[Trajectory]:
    """One collection round from fresh worker states."""
    return RolloutCollector(spec, config, encoding=encoding).collect(policy, round_seed)


# ----------------------------------------------------------------------
# Advantages and PPO


@dataclass(frozen=True)
class Advantages:
    returns: np.ndarray
    raw: np.ndarray
    normalized: np.ndarray


def compute_advantages(
    batch: Sequence[Trajectory], gamma: float = 1.0, *, eps: float = ADVANTAGE_EPS
) -> Advantages:
    """Monte-Carlo returns of the terminal reward minus the value baseline."""
    returns: list[float] = []
    values: list[float] = []
    for trajectory in batch:
        length = len(trajectory)
        for k, s in enumerate(trajectory.steps):
            returns.append(trajectory.reward * gamma ** (length - 1 - k))
            values.append(s.value)
    ret = np.asarray(returns, dtype=np.float64)
    raw = ret - np.asarray(values, dtype=np.float64)
    if raw.size == 0:
        return Advantages(ret, raw, raw.copy())
    normalized = (raw - raw.mean()) / (raw.std() + eps)
    return Advantages(ret, raw, normalized)


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    timesteps: np.ndarray
    skill_indices: np.ndarray
    raw: np.ndarray
    old_log_probs: np.ndarray
    returns: np.ndarray
    advantages: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, index: np.ndarray) -> Batch:
        return Batch(
            self.inputs[index],
            self.timesteps[index],
            self.skill_indices[index],
            self.raw[index],
            self.old_log_probs[index],
            self.returns[index],
            self.advantages[index],
        )


def build_batch(
    trajectories: Sequence[Trajectory], horizon: int, gamma: float = 1.0
) -> Batch:
    steps = [s for trajectory in trajectories for s in trajectory.steps]
    if not steps:
        raise ContractViolation("cannot build a batch without complete episodes")
    advantages = compute_advantages(trajectories, gamma)
    return Batch(
        inputs=np.stack([network_input(s.observation, s.timestep, horizon) for s in steps]),
        timesteps=np.array([s.timestep for s in steps], dtype=np.int64),
        skill_indices=np.array([s.skill_index for s in steps], dtype=np.int64),
        raw=np.stack([s.raw for s in steps]),
        old_log_probs=np.array([s.log_prob for s in steps]),
        returns=advantages.returns,
        advantages=advantages.normalized,
    )


@dataclass
class UpdateDiagnostics:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    approx_kl: float = 0.0
    clip_fraction: float = 0.0
    first_ratios: np.ndarray = field(default_factory=lambda: np.zeros(0))
    first_surrogate: float = 0.0
    epoch_value_losses: list[float] = field(default_factory=list)
    gradient_steps: int = 0


def _value_loss(policy: Policy, batch: Batch) -> float:
    heads, _ = nn.forward(policy.network, batch.inputs)
    return float(np.mean((heads["value"][:, 0] - batch.returns) ** 2))


def ppo_update(
    policy: Policy,
    batch: Batch,
    config: TrainerConfig,
    optimizer: nn.AdamState,
    rng: np.random.Generator,
) -> tuple[nn.AdamState, UpdateDiagnostics]:
    """Clipped-surrogate epochs over ``batch``; updates ``policy.network`` in place.

    Schema logits are constants here. On a non-finite loss the policy keeps
    the parameters it had on entry and NonFiniteLossError is raised.
    """
    if len(batch) == 0:
        raise ContractViolation("ppo_update needs a non-empty batch")
    start_network = policy.network
    diagnostics = UpdateDiagnostics()
    totals = {"policy": 0.0, "value": 0.0, "entropy": 0.0, "kl": 0.0, "clipped": 0.0}
    state = optimizer
    try:
        for epoch in range(config.epochs):
            order = rng.permutation(len(batch))
            for chunk in np.array_split(order, config.minibatches):
                if chunk.size == 0:
                    continue
                mb = batch.subset(chunk)
                m = len(mb)
                evaluation = policy.evaluate(mb.inputs, mb.timesteps, mb.skill_indices, mb.raw)
                log_ratio = evaluation.log_prob - mb.old_log_probs
                ratio = np.exp(log_ratio)
                clipped = np.clip(ratio, 1.0 - config.clip, 1.0 + config.clip)
                surrogate = ratio * mb.advantages
                surrogate_clipped = clipped * mb.advantages
                policy_loss = -float(np.mean(np.minimum(surrogate, surrogate_clipped)))
                value_error = evaluation.value - mb.returns
                value_loss = float(np.mean(value_error**2))
                entropy = float(np.mean(evaluation.entropy))
                loss = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy
                if not math.isfinite(loss):
                    raise NonFiniteLossError(
                        f"non-finite PPO loss at epoch {epoch} "
                        f"(policy={policy_loss}, value={value_loss}, entropy={entropy})"
                    )
                if diagnostics.gradient_steps == 0:
                    diagnostics.first_ratios = ratio.copy()
                    diagnostics.first_surrogate = policy_loss

                unclipped_active = surrogate <= surrogate_clipped
                d_log_prob = np.where(unclipped_active, -ratio * mb.advantages / m, 0.0)
                d_entropy = np.full(m, -config.entropy_coef / m)
                d_value = config.value_coef * 2.0 * value_error / m
                grads = evaluation.backward(d_log_prob, d_entropy, d_value)
                grads = nn.clip_global_norm(grads, config.grad_clip)
                network, state = nn.adam_step(policy.network, grads, state)
                policy.network = network
                diagnostics.gradient_steps += 1

                totals["policy"] += policy_loss
                totals["value"] += value_loss
                totals["entropy"] += entropy
                totals["kl"] += float(np.mean((ratio - 1.0) - log_ratio))
                totals["clipped"] += float(np.mean(np.abs(ratio - 1.0) > config.clip))
                logger.debug(
                    "epoch %d minibatch of %d: policy %.4f value %.4f entropy %.4f",
                    epoch,
                    m,
                    policy_loss,
                    value_loss,
                    entropy,
                )
            epoch_value = _value_loss(policy, batch)
            if not math.isfinite(epoch_value):
                raise NonFiniteLossError(f"non-finite value loss after epoch {epoch}")
            diagnostics.epoch_value_losses.append(epoch_value)
    except (NonFiniteLossError, FloatingPointError):
        policy.network = start_network
        raise
    steps = max(diagnostics.gradient_steps, 1)
    diagnostics.policy_loss = totals["policy"] / steps
    diagnostics.value_loss = totals["value"] / steps
    diagnostics.entropy = totals["entropy"] / steps
    diagnostics.approx_kl = totals["kl"] / steps
    diagnostics.clip_fraction = totals["clipped"] / steps
    return state, diagnostics


# ----------------------------------------------------------------------
# Success metrics


def trailing_success_rate(outcomes: Sequence[bool], window: int = 100) -> float:
    if not outcomes:
        return 0.0
    recent = outcomes[-window:]
    return sum(1 for outcome in recent if outcome) / len(recent)


def episodes_to_threshold(
    outcomes: Sequence[bool], threshold: float = 0.9, window: int = 100
) -> Optional[int]:
    """Episode count at which the trailing window first reaches ``threshold``."""
    running = 0
    for count, outcome in enumerate(outcomes, start=1):
        running += int(outcome)
        if count > window:
            running -= int(outcomes[count - 1 - window])
        if count >= window and running >= threshold * window - 1e-9:
            return count
    return None


# ----------------------------------------------------------------------
# Training loop

LOG_COLUMNS = (
    "round",
    "episodes",
    "trailing_success_rate",
    "mean_return",
    "policy_loss",
    "value_loss",
    "entropy",
    "argmax_schema",
)


@dataclass(frozen=True)
class RoundRecord:
    round: int
    episodes: int
    trailing_success_rate: float
    mean_return: float
    policy_loss: float
    value_loss: float
    entropy: float
    argmax_schema: str

    def as_row(self) -> list[str]:
        return [
            str(self.round),
            str(self.episodes),
            f"{self.trailing_success_rate:.6f}",
            f"{self.mean_return:.6f}",
            f"{self.policy_loss:.6f}",
            f"{self.value_loss:.6f}",
            f"{self.entropy:.6f}",
            self.argmax_schema,
        ]


@dataclass
class TrainingResult:
    family: str
    mode: TrainingMode
    encoding: Encoding
    seed: int
    rounds: list[RoundRecord]
    outcomes: list[bool]
    episodes_to_threshold: Optional[int]
    policy: Policy
    log_path: Optional[Path] = None
    checkpoint_path: Optional[Path] = None
    schema_path: Optional[Path] = None

    @property
    def episodes(self) -> int:
        return len(self.outcomes)

    @property
    def final_schema(self) -> Optional[tuple[JointSkill, ...]]:
        return self.policy.greedy_schema()

    @property
    def reached_threshold(self) -> bool:
        return self.episodes_to_threshold is not None


def _batch_schema(policy: Policy, batch: Sequence[Trajectory]) -> str:
    greedy = policy.greedy_schema()
    if greedy is not None:
        return format_schema(greedy)
    # State-conditioned skills: most frequent joint skill per timestep.
    labels = []
    for t in range(policy.spec.horizon):
        counts = Counter(
            trajectory.steps[t].skill_index
            for trajectory in batch
            if len(trajectory) > t
        )
        if not counts:
            labels.append("-")
            continue
        index = min(counts, key=lambda i: (-counts[i], i))
        labels.append(policy.spec.joint_vocab[index].label)
    return ";".join(labels)


def write_training_log(records: Sequence[RoundRecord], path: str | Path) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for record in records:
            writer.writerow(record.as_row())
    return target


def _make_policy(
    spec: TaskSpec,
    mode: TrainingMode,
    config: TrainerConfig,
    encoding: Encoding,
    schema_path: Optional[str | Path],
    transfer: TransferMode,
    oracle_schema: Optional[Sequence[JointSkill]],
) -> Policy:
    if mode not in TRAINING_MODES:
        raise ContractViolation(f"unknown training mode {mode!r}")
    if mode == "transfer" and schema_path is None:
        raise ContractViolation("transfer mode requires a schema file")
    if mode != "transfer" and schema_path is not None:
        raise ContractViolation(f"{mode} mode does not take a schema file")
    if oracle_schema is not None and mode != "oracle":
        raise ContractViolation("only oracle mode takes a fixed schema")
    logits = import_schema(schema_path, spec, transfer) if schema_path is not None else None
    return build_policy(
        spec,
        "schema" if mode == "transfer" else mode,
        observation_size(encoding),
        np.random.default_rng([config.seed, _INIT_STREAM]),
        hidden_sizes=config.hidden_sizes,
        log_spread_init=config.log_spread_init,
        logits=logits,
        schema=oracle_schema,
    )


def train(
    spec: TaskSpec,
    mode: TrainingMode,
    config: TrainerConfig = TrainerConfig(),
    *,
    encoding: Encoding = "low-dim",
    schema_path: Optional[str | Path] = None,
    transfer: TransferMode = "frozen",
    oracle_schema: Optional[Sequence[JointSkill]] = None,
    output_dir: Optional[str | Path] = None,
    run_name: Optional[str] = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> TrainingResult:
    """Collect, optimise and (schema modes) reinforce logits until budget or threshold.

    With ``output_dir`` set, writes ``<run_name>.csv``, ``<run_name>.ckpt`` and,
    for policies with logits, ``<run_name>.schema``.
    """
    if encoding not in ENCODINGS:
        raise ContractViolation(f"unknown observation encoding {encoding!r}")
    policy = _make_policy(spec, mode, config, encoding, schema_path, transfer, oracle_schema)
    collector = RolloutCollector(spec, config, encoding=encoding, tolerances=tolerances)
    optimizer = nn.init_adam(policy.network, config.learning_rate)
    outcomes: list[bool] = []
    records: list[RoundRecord] = []
    reached: Optional[int] = None
    round_index = 0
    name = run_name or f"{spec.family}-{mode}-seed{config.seed}"
    logger.info(
        "Training %s (%s, %s observations, seed %d)", spec.family, mode, encoding, config.seed
    )

    while len(outcomes) < config.episode_budget:
        round_seed = _derive_seed(config.seed, _ROLLOUT_STREAM, round_index)
        batch = collector.collect(policy, round_seed)
        diagnostics = UpdateDiagnostics()
        if batch:
            shuffle = np.random.default_rng([config.seed, _SHUFFLE_STREAM, round_index])
            try:
                optimizer, diagnostics = ppo_update(
                    policy, build_batch(batch, spec.horizon, config.gamma), config, optimizer, shuffle
                )
            except NonFiniteLossError as exc:
                logger.warning("Round %d rolled back: %s", round_index, exc)
            if isinstance(policy, SchemaPolicy) and not policy.frozen:
                logits = policy.logits
                for trajectory in batch:
                    logits = update_logits(logits, trajectory, config.alpha, config.beta)
                policy.logits = logits

        for trajectory in batch:
            outcomes.append(trajectory.success)
            if reached is None and len(outcomes) >= config.success_window:
                window = outcomes[-config.success_window :]
                if sum(window) >= config.success_threshold * config.success_window - 1e-9:
                    reached = len(outcomes)

        rate = trailing_success_rate(outcomes, config.success_window)
        record = RoundRecord(
            round=round_index,
            episodes=len(outcomes),
            trailing_success_rate=rate,
            mean_return=float(np.mean([t.reward for t in batch])) if batch else 0.0,
            policy_loss=diagnostics.policy_loss,
            value_loss=diagnostics.value_loss,
            entropy=diagnostics.entropy,
            argmax_schema=_batch_schema(policy, batch),
        )
        records.append(record)
        logger.info(
            "round %d episodes %d success %s schema %s",
            round_index,
            len(outcomes),
            format_rate(rate, threshold=config.success_threshold),
            record.argmax_schema,
        )
        round_index += 1
        if reached is not None and config.stop_at_threshold:
            break

    result = TrainingResult(
        family=spec.family,
        mode=mode,
        encoding=encoding,
        seed=config.seed,
        rounds=records,
        outcomes=outcomes,
        episodes_to_threshold=reached,
        policy=policy,
    )
    if output_dir is not None:
        out = Path(output_dir)
        result.log_path = write_training_log(records, out / f"{name}.csv")
        result.checkpoint_path = save_policy(
            policy,
            out / f"{name}.ckpt",
            {"encoding": encoding, "seed": str(config.seed), "training_mode": mode},
        )
        if isinstance(policy, SchemaPolicy):
            result.schema_path = export_schema(policy.logits, out / f"{name}.schema")
    return result
