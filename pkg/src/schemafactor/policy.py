"""Baseline, schema-factored and oracle policies over the hybrid action space.

All three share one network layout: a rectifier trunk over the observation
(plus a one-hot timestep) with an argument-mean head and a value head. The
baseline adds a state-conditioned joint-skill head; the schema policy draws
skills from its state-independent logits; the oracle replays a fixed schema.

Arguments are Gaussian in the normalized [-1, 1] space, one dimension per
parameter of every allowed skill for each arm (left block then right block).
Only the dimensions of the two selected skills contribute to densities and
entropies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal, Optional, Sequence

import numpy as np

from . import nn
from .envs import Observation
from .errors import CheckpointFormatError, ContractViolation
from .pamdp import (
    ARMS,
    SKILLS,
    JointAction,
    JointSkill,
    TaskSpec,
    build_task_spec,
    denormalize,
    param_slices,
)
from .schema import SchemaLogits, init_schema

PolicyMode = Literal["baseline", "schema", "oracle"]
POLICY_MODES: tuple[PolicyMode, ...] = ("baseline", "schema", "oracle")

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_GAUSSIAN_ENTROPY_CONST = 0.5 * math.log(2.0 * math.pi * math.e)


def network_input(obs: Observation | np.ndarray, t: int, horizon: int) -> np.ndarray:
    """Observation vector followed by a one-hot encoding of the timestep."""
    data = obs.data if isinstance(obs, Observation) else np.asarray(obs)
    onehot = np.zeros(horizon)
    onehot[min(int(t), horizon - 1)] = 1.0
    return np.concatenate([np.asarray(data, dtype=np.float64), onehot])


def _selection_masks(spec: TaskSpec) -> np.ndarray:
    """Boolean (|X_joint|, 2P) table of the argument dimensions each joint skill uses."""
    slices = param_slices(spec)
    width = spec.per_arm_param_dim
    masks = np.zeros((spec.vocab_size, 2 * width), dtype=bool)
    for joint in spec.joint_vocab:
        for block, arm in enumerate(ARMS):
            rng = slices[(arm, joint.skill(arm))]
            masks[joint.index, block * width + rng.start : block * width + rng.stop] = True
    return masks


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass(frozen=True)
class PolicyEvaluation:
    log_prob: np.ndarray
    entropy: np.ndarray
    value: np.ndarray
    backward: Callable[[np.ndarray, np.ndarray, np.ndarray], nn.Tensors]


@dataclass(frozen=True)
class ActionSample:
    action: JointAction
    log_prob: float
    value: float
    entropy: float
    skill_index: int
    raw: np.ndarray


class Policy:
    """Shared argument/value network; subclasses decide the discrete part."""

    mode: PolicyMode

    def __init__(
        self,
        spec: TaskSpec,
        network: nn.NetworkParams,
        observation_size: int,
    ) -> None:
        self.spec = spec
        self.network = network
        self.observation_size = observation_size
        self.masks = _selection_masks(spec)
        self._slices = param_slices(spec)
        expected = observation_size + spec.horizon
        if network.input_dim != expected:
            raise ContractViolation(
                f"network takes {network.input_dim} inputs, task needs {expected}"
            )
        if network.head_width("arg_means") != 2 * spec.per_arm_param_dim:
            raise ContractViolation("argument head does not match the task")

    @property
    def arg_dim(self) -> int:
        return 2 * self.spec.per_arm_param_dim

    # -- discrete part -------------------------------------------------

    def _discrete(
        self, heads: dict[str, np.ndarray], timesteps: np.ndarray, skills: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, Optional[Callable[..., np.ndarray]]]:
        """Return (log_prob, entropy, gradient-of-logits-head factory or None)."""
        raise NotImplementedError

    def skill_probabilities(self, heads: dict[str, np.ndarray], t: int) -> np.ndarray:
        raise NotImplementedError

    # -- evaluation ----------------------------------------------------

    def evaluate(
        self,
        inputs: np.ndarray,
        timesteps: np.ndarray,
        skill_indices: np.ndarray,
        raw: np.ndarray,
    ) -> PolicyEvaluation:
        """Log-probabilities, entropies and values for a batch of recorded actions.

        ``raw`` holds full normalized argument vectors (N, 2P); dimensions not
        used by the chosen joint skill are ignored.
        """
        inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        timesteps = np.asarray(timesteps, dtype=np.int64).reshape(-1)
        skills = np.asarray(skill_indices, dtype=np.int64).reshape(-1)
        raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
        n = inputs.shape[0]
        if n == 0:
            raise ContractViolation("cannot evaluate an empty batch")
        if timesteps.shape[0] != n or skills.shape[0] != n or raw.shape != (n, self.arg_dim):
            raise ContractViolation("batch arrays disagree on length or width")
        if np.any(skills < 0) or np.any(skills >= self.spec.vocab_size):
            raise ContractViolation("skill index outside the joint vocabulary")
        if np.any(timesteps < 0) or np.any(timesteps >= self.spec.horizon):
            raise ContractViolation("timestep outside the horizon")

        heads, cache = nn.forward(self.network, inputs)
        mask = self.masks[skills].astype(np.float64)
        pre_mean = heads["arg_means"]
        mean = np.tanh(pre_mean)
        log_spread = self.network.log_spread
        spread = np.exp(log_spread)
        z = (raw - mean) / spread
        log_prob_c = np.sum(mask * (-0.5 * z * z - log_spread - _HALF_LOG_2PI), axis=1)
        entropy_c = np.sum(mask * (log_spread + _GAUSSIAN_ENTROPY_CONST), axis=1)
        log_prob_d, entropy_d, discrete_grad = self._discrete(heads, timesteps, skills)
        value = heads["value"][:, 0]

        def backward(
            d_log_prob: np.ndarray, d_entropy: np.ndarray, d_value: np.ndarray
        ) -> nn.Tensors:
            d_log_prob = np.asarray(d_log_prob, dtype=np.float64).reshape(n, 1)
            d_entropy = np.asarray(d_entropy, dtype=np.float64).reshape(n, 1)
            head_grads = {
                "arg_means": d_log_prob * mask * (z / spread) * (1.0 - mean * mean),
                "value": np.asarray(d_value, dtype=np.float64).reshape(n, 1),
            }
            if discrete_grad is not None:
                head_grads["skill_logits"] = discrete_grad(d_log_prob, d_entropy)
            grads = nn.backward(self.network, cache, head_grads)
            grads["log_spread"] = np.sum(
                d_log_prob * mask * (z * z - 1.0) + d_entropy * mask, axis=0
            )
            return grads

        return PolicyEvaluation(
            log_prob=log_prob_d + log_prob_c,
            entropy=entropy_d + entropy_c,
            value=value,
            backward=backward,
        )

    def _raw_vector(self, action: JointAction) -> np.ndarray:
        width = self.spec.per_arm_param_dim
        vector = np.zeros(self.arg_dim)
        for block, arm in enumerate(ARMS):
            rng = self._slices[(arm, action.joint_skill.skill(arm))]
            values = action.raw(arm)
            if len(values) != len(rng):
                raise ContractViolation(f"{arm} arguments do not match the skill")
            vector[block * width + rng.start : block * width + rng.stop] = values
        return vector

    def log_prob_and_entropy(
        self, obs: Observation, t: int, action: JointAction
    ) -> tuple[float, float, float]:
        action.validate(self.spec)
        evaluation = self.evaluate(
            network_input(obs, t, self.spec.horizon)[None, :],
            np.array([t]),
            np.array([action.joint_skill.index]),
            self._raw_vector(action)[None, :],
        )
        return (
            float(evaluation.log_prob[0]),
            float(evaluation.entropy[0]),
            float(evaluation.value[0]),
        )

    # -- sampling ------------------------------------------------------

    def _choose_skill(
        self, heads: dict[str, np.ndarray], t: int, rng: np.random.Generator
    ) -> int:
        probs = self.skill_probabilities(heads, t)
        cumulative = np.cumsum(probs)
        index = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
        return min(index, len(probs) - 1)

    def sample_action(
        self, obs: Observation, t: int, rng: np.random.Generator
    ) -> ActionSample:
        if not 0 <= t < self.spec.horizon:
            raise ContractViolation(f"timestep {t} outside horizon {self.spec.horizon}")
        inputs = network_input(obs, t, self.spec.horizon)
        heads, _ = nn.forward(self.network, inputs)
        index = self._choose_skill(heads, t, rng)
        mean = np.tanh(heads["arg_means"])
        raw = mean + np.exp(self.network.log_spread) * rng.standard_normal(self.arg_dim)
        joint = self.spec.joint_vocab[index]

        width = self.spec.per_arm_param_dim
        physical: dict[str, tuple[float, ...]] = {}
        pre_clamp: dict[str, tuple[float, ...]] = {}
        for block, arm in enumerate(ARMS):
            skill = joint.skill(arm)
            rng_slice = self._slices[(arm, skill)]
            values = raw[block * width + rng_slice.start : block * width + rng_slice.stop]
            pre_clamp[arm] = tuple(float(v) for v in values)
            physical[arm] = tuple(
                denormalize(v, param) for v, param in zip(values, SKILLS[skill].params)
            )
        action = JointAction(
            joint,
            physical["left"],
            physical["right"],
            left_raw=pre_clamp["left"],
            right_raw=pre_clamp["right"],
        )
        evaluation = self.evaluate(
            inputs[None, :], np.array([t]), np.array([index]), raw[None, :]
        )
        return ActionSample(
            action=action,
            log_prob=float(evaluation.log_prob[0]),
            value=float(evaluation.value[0]),
            entropy=float(evaluation.entropy[0]),
            skill_index=index,
            raw=raw,
        )

    def greedy_schema(self) -> Optional[tuple[JointSkill, ...]]:
        """State-independent skill sequence, when the policy has one."""
        return None

    def snapshot(self) -> Policy:
        raise NotImplementedError


class BaselinePolicy(Policy):
    mode: PolicyMode = "baseline"

    def __init__(
        self, spec: TaskSpec, network: nn.NetworkParams, observation_size: int
    ) -> None:
        super().__init__(spec, network, observation_size)
        if network.head_width("skill_logits") != spec.vocab_size:
            raise ContractViolation("skill head does not match the joint vocabulary")

    def skill_probabilities(self, heads: dict[str, np.ndarray], t: int) -> np.ndarray:
        return np.exp(_log_softmax(heads["skill_logits"]))

    def _discrete(self, heads, timesteps, skills):
        log_probs = _log_softmax(heads["skill_logits"])
        probs = np.exp(log_probs)
        rows = np.arange(skills.shape[0])
        entropy = -np.sum(probs * log_probs, axis=1)
        onehot = np.zeros_like(probs)
        onehot[rows, skills] = 1.0

        def grad(d_log_prob: np.ndarray, d_entropy: np.ndarray) -> np.ndarray:
            return d_log_prob * (onehot - probs) - d_entropy * probs * (
                log_probs + entropy[:, None]
            )

        return log_probs[rows, skills], entropy, grad

    def snapshot(self) -> BaselinePolicy:
        return BaselinePolicy(self.spec, self.network, self.observation_size)


class SchemaPolicy(Policy):
    """Skills from T x |X_joint| logits, held constant under differentiation."""

    mode: PolicyMode = "schema"

    def __init__(
        self,
        spec: TaskSpec,
        network: nn.NetworkParams,
        observation_size: int,
        logits: Optional[SchemaLogits] = None,
    ) -> None:
        super().__init__(spec, network, observation_size)
        self.logits = logits if logits is not None else init_schema(spec)
        if self.logits.fingerprint != spec.fingerprint or (
            self.logits.horizon != spec.horizon
        ):
            raise ContractViolation("schema logits do not match the task vocabulary")

    @property
    def frozen(self) -> bool:
        return self.logits.frozen

    def skill_probabilities(self, heads: dict[str, np.ndarray], t: int) -> np.ndarray:
        return self.logits.row_probabilities(t)

    def _discrete(self, heads, timesteps, skills):
        log_probs = _log_softmax(self.logits.values[timesteps])
        probs = np.exp(log_probs)
        rows = np.arange(skills.shape[0])
        entropy = -np.sum(probs * log_probs, axis=1)
        return log_probs[rows, skills], entropy, None

    def greedy_schema(self) -> tuple[JointSkill, ...]:
        return tuple(self.spec.joint_vocab[i] for i in self.logits.argmax_indices())

    def snapshot(self) -> SchemaPolicy:
        return SchemaPolicy(self.spec, self.network, self.observation_size, self.logits)


class OraclePolicy(Policy):
    mode: PolicyMode = "oracle"

    def __init__(
        self,
        spec: TaskSpec,
        network: nn.NetworkParams,
        observation_size: int,
        schema: Optional[Sequence[JointSkill]] = None,
    ) -> None:
        super().__init__(spec, network, observation_size)
        self.schema = tuple(schema) if schema is not None else spec.reference_schema()
        if len(self.schema) != spec.horizon:
            raise ContractViolation(f"oracle schema must have {spec.horizon} steps")
        for joint in self.schema:
            if spec.joint_vocab[joint.index] != joint:
                raise ContractViolation(f"{joint.label} is not in the vocabulary")

    def skill_probabilities(self, heads: dict[str, np.ndarray], t: int) -> np.ndarray:
        probs = np.zeros(self.spec.vocab_size)
        probs[self.schema[t].index] = 1.0
        return probs

    def _choose_skill(self, heads, t, rng) -> int:
        return self.schema[t].index

    def _discrete(self, heads, timesteps, skills):
        expected = np.array([self.schema[t].index for t in timesteps])
        if np.any(expected != skills):
            raise ContractViolation("oracle policy cannot take off-schema skills")
        zeros = np.zeros(skills.shape[0])
        return zeros, zeros.copy(), None

    def greedy_schema(self) -> tuple[JointSkill, ...]:
        return self.schema

    def snapshot(self) -> OraclePolicy:
        return OraclePolicy(self.spec, self.network, self.observation_size, self.schema)


def head_widths(spec: TaskSpec, mode: PolicyMode) -> dict[str, int]:
    widths = {"arg_means": 2 * spec.per_arm_param_dim, "value": 1}
    if mode == "baseline":
        widths = {"skill_logits": spec.vocab_size, **widths}
    return widths


def build_policy(
    spec: TaskSpec,
    mode: PolicyMode,
    observation_size: int,
    rng: np.random.Generator,
    *,
    hidden_sizes: Sequence[int] = nn.HIDDEN_SIZES,
    log_spread_init: float = -1.0,
    logits: Optional[SchemaLogits] = None,
    schema: Optional[Sequence[JointSkill]] = None,
) -> Policy:
    if mode not in POLICY_MODES:
        raise ContractViolation(f"unknown policy mode {mode!r}")
    network = nn.init_network(
        observation_size + spec.horizon,
        head_widths(spec, mode),
        2 * spec.per_arm_param_dim,
        rng,
        hidden_sizes=hidden_sizes,
        log_spread_init=log_spread_init,
    )
    if mode == "baseline":
        return BaselinePolicy(spec, network, observation_size)
    if mode == "schema":
        return SchemaPolicy(spec, network, observation_size, logits)
    return OraclePolicy(spec, network, observation_size, schema)


def schema_argmax(logits: SchemaLogits, spec: Optional[TaskSpec] = None) -> tuple[JointSkill, ...]:
    """Per-row argmax of the logits, ties to the lowest joint-skill index."""
    spec = spec or build_task_spec(logits.family)
    return tuple(spec.joint_vocab[i] for i in logits.argmax_indices())


# ----------------------------------------------------------------------
# Persistence

SCHEMA_TENSOR = "schema.logits"


def save_policy(
    policy: Policy, path: str | Path, metadata: Optional[dict[str, str]] = None
) -> Path:
    tensors = dict(policy.network.named_tensors())
    meta = {
        "mode": policy.mode,
        "family": policy.spec.family,
        "observation_size": str(policy.observation_size),
        "vocab": ",".join(policy.spec.fingerprint),
    }
    if isinstance(policy, SchemaPolicy):
        tensors[SCHEMA_TENSOR] = np.array(policy.logits.values)
        meta["schema_frozen"] = str(int(policy.frozen))
    if isinstance(policy, OraclePolicy):
        meta["oracle_schema"] = ";".join(joint.label for joint in policy.schema)
    meta.update(metadata or {})
    return nn.save_checkpoint(path, tensors, meta)


def load_policy(path: str | Path) -> Policy:
    tensors, meta = nn.load_checkpoint(path)
    try:
        spec = build_task_spec(meta["family"])
        mode = meta["mode"]
        observation_size = int(meta["observation_size"])
    except (KeyError, ValueError) as exc:
        raise CheckpointFormatError(f"{path}: incomplete policy metadata") from exc
    if meta.get("vocab") != ",".join(spec.fingerprint):
        raise CheckpointFormatError(f"{path}: vocabulary does not match {spec.family}")
    logits_values = tensors.pop(SCHEMA_TENSOR, None)
    network = nn.NetworkParams.from_named_tensors(tensors)
    if mode == "baseline":
        return BaselinePolicy(spec, network, observation_size)
    if mode == "schema":
        if logits_values is None:
            raise CheckpointFormatError(f"{path}: schema checkpoint without logits")
        logits = SchemaLogits(
            logits_values,
            spec.family,
            spec.fingerprint,
            frozen=meta.get("schema_frozen") == "1",
        )
        return SchemaPolicy(spec, network, observation_size, logits)
    if mode == "oracle":
        labels = meta.get("oracle_schema", "").split(";")
        schema = [spec.joint_skill(*label.split(":")) for label in labels if label]
        return OraclePolicy(spec, network, observation_size, schema or None)
    raise CheckpointFormatError(f"{path}: unknown policy mode {mode!r}")
