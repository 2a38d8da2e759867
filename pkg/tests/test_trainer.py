from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from schemafactor import nn
from schemafactor.envs import observation_size
from schemafactor.errors import (
    ContractViolation,
    NonFiniteLossError,
    TransferIncompatibleError,
)
from schemafactor.pamdp import TASK_FAMILIES, build_task_spec
from schemafactor.policy import build_policy
from schemafactor.schema import export_schema, init_schema
from schemafactor.trainer import (
    LOG_COLUMNS,
    RolloutCollector,
    TrainerConfig,
    Trajectory,
    TrajectoryStep,
    build_batch,
    collect_rollouts,
    compute_advantages,
    episodes_to_threshold,
    ppo_update,
    train,
    trailing_success_rate,
)

TINY = TrainerConfig(
    workers=2,
    steps_per_worker=6,
    minibatches=2,
    epochs=1,
    episode_budget=12,
    hidden_sizes=(8,),
    stop_at_threshold=False,
)


def _policy(mode: str = "schema", family: str = "opening", seed: int = 0):
    spec = build_task_spec(family)
    return build_policy(
        spec, mode, observation_size("low-dim"), np.random.default_rng(seed),
        hidden_sizes=(8,),
    )


def _step(value: float, t: int = 0) -> TrajectoryStep:
    return TrajectoryStep(
        observation=np.zeros(3), timestep=t, skill_index=0, raw=np.zeros(2),
        log_prob=-1.0, value=value,
    )


def _collected_batch(policy, config: TrainerConfig = TrainerConfig(workers=4)):
    trajectories = collect_rollouts(policy, policy.spec, config, round_seed=7)
    return build_batch(trajectories, policy.spec.horizon, config.gamma)


# -- configuration --------------------------------------------------------


@pytest.mark.parametrize(
    "overrides",
    [
        {"minibatches": 3},
        {"n_jobs": 0},
        {"gamma": 1.5},
        {"learning_rate": 0.0},
        {"entropy_coef": -0.1},
        {"hidden_sizes": ()},
    ],
)
def test_invalid_trainer_config_rejected(overrides) -> None:
    with pytest.raises(ValueError):
        TrainerConfig(**overrides)


def test_default_trainer_config() -> None:
    config = TrainerConfig()
    assert (config.learning_rate, config.clip, config.epochs) == (0.001, 0.2, 4)
    assert config.workers * config.steps_per_worker == 80
    assert config.log_spread_init == -1.0
    assert "alpha" in TrainerConfig.field_names()


# -- rollouts ---------------------------------------------------------------


def _summary(trajectories):
    return [
        (t.worker, t.env_seed, t.reward, t.skill_indices, tuple(s.log_prob for s in t.steps))
        for t in trajectories
    ]


def test_collection_is_deterministic_across_job_counts() -> None:
    policy = _policy()
    spec = policy.spec
    serial = collect_rollouts(policy, spec, TrainerConfig(workers=4, n_jobs=1), 11)
    again = collect_rollouts(policy, spec, TrainerConfig(workers=4, n_jobs=1), 11)
    threaded = collect_rollouts(policy, spec, TrainerConfig(workers=4, n_jobs=2), 11)
    assert _summary(serial) == _summary(again) == _summary(threaded)
    assert [t.worker for t in serial] == sorted(t.worker for t in serial)


def test_every_environment_step_is_accounted_for() -> None:
    policy = _policy(family="picking")
    config = TrainerConfig(workers=3, steps_per_worker=7, minibatches=1)
    collector = RolloutCollector(policy.spec, config)
    completed = 0
    for round_seed in range(3):
        completed += sum(len(t) for t in collector.collect(policy, round_seed))
    carried = sum(len(state.partial) for state in collector.states)
    assert completed + carried == 3 * 7 * 3


def test_collection_does_not_change_policy() -> None:
    policy = _policy()
    before = policy.network
    collect_rollouts(policy, policy.spec, TrainerConfig(workers=2), 0)
    assert policy.network is before


def test_trajectory_requires_steps() -> None:
    with pytest.raises(ContractViolation):
        Trajectory((), 0.0, 0, 0)


# -- advantages -------------------------------------------------------------


def test_monte_carlo_returns_and_advantages() -> None:
    batch = [
        Trajectory((_step(0.2, 0), _step(0.5, 1)), 1.0, 0, 0),
        Trajectory((_step(0.1, 0),), 0.0, 1, 0),
    ]
    advantages = compute_advantages(batch)
    np.testing.assert_allclose(advantages.returns, [1.0, 1.0, 0.0])
    np.testing.assert_allclose(advantages.raw, [0.8, 0.5, -0.1])
    assert abs(advantages.normalized.mean()) < 1e-12
    assert advantages.normalized.std() == pytest.approx(1.0, abs=1e-6)


def test_discounted_returns() -> None:
    batch = [Trajectory((_step(0.0, 0), _step(0.0, 1)), 1.0, 0, 0)]
    np.testing.assert_allclose(compute_advantages(batch, gamma=0.5).returns, [0.5, 1.0])


def test_constant_advantages_normalize_to_zero() -> None:
    batch = [Trajectory((_step(0.0),), 1.0, s, 0) for s in range(4)]
    np.testing.assert_array_equal(compute_advantages(batch).normalized, 0.0)


# -- PPO --------------------------------------------------------------------


def test_first_minibatch_ratios_are_one() -> None:
    policy = _policy()
    batch = _collected_batch(policy)
    config = TrainerConfig(workers=4, epochs=1)
    order = np.random.default_rng(5).permutation(len(batch))
    first = np.array_split(order, config.minibatches)[0]
    _, diagnostics = ppo_update(
        policy, batch, config, nn.init_adam(policy.network), np.random.default_rng(5)
    )
    np.testing.assert_allclose(diagnostics.first_ratios, 1.0, atol=1e-9)
    assert diagnostics.first_surrogate == pytest.approx(
        -float(np.mean(batch.advantages[first])), abs=1e-9
    )
    assert diagnostics.gradient_steps == config.minibatches


def test_value_loss_falls_towards_constant_returns() -> None:
    policy = _policy("baseline")
    collected = _collected_batch(policy)
    batch = replace(
        collected,
        returns=np.ones(len(collected)),
        advantages=np.zeros(len(collected)),
    )
    config = TrainerConfig(workers=4, entropy_coef=0.0, epochs=4)
    heads, _ = nn.forward(policy.network, batch.inputs)
    initial = float(np.mean((heads["value"][:, 0] - 1.0) ** 2))
    _, diagnostics = ppo_update(
        policy, batch, config, nn.init_adam(policy.network), np.random.default_rng(0)
    )
    losses = [initial, *diagnostics.epoch_value_losses]
    assert all(later < earlier for earlier, later in zip(losses, losses[1:]))


def test_zero_advantages_leave_argument_head_untouched() -> None:
    policy = _policy("baseline")
    collected = _collected_batch(policy)
    batch = replace(collected, advantages=np.zeros(len(collected)))
    before = policy.network.named_tensors()
    ppo_update(
        policy, batch, TrainerConfig(workers=4, entropy_coef=0.0),
        nn.init_adam(policy.network), np.random.default_rng(1),
    )
    after = policy.network.named_tensors()
    for name in (
        "head.arg_means.weights",
        "head.arg_means.biases",
        "head.skill_logits.weights",
        "head.skill_logits.biases",
        "log_spread",
    ):
        np.testing.assert_array_equal(after[name], before[name])
    assert not np.array_equal(after["head.value.biases"], before["head.value.biases"])


def test_ppo_never_touches_schema_logits() -> None:
    policy = _policy()
    policy.logits = policy.logits.with_values(np.random.default_rng(0).normal(size=(3, 16)))
    logits = policy.logits
    ppo_update(
        policy, _collected_batch(policy), TrainerConfig(workers=4),
        nn.init_adam(policy.network), np.random.default_rng(2),
    )
    assert policy.logits is logits
    np.testing.assert_array_equal(policy.logits.values, logits.values)


def test_non_finite_loss_restores_parameters() -> None:
    policy = _policy()
    collected = _collected_batch(policy)
    old = collected.old_log_probs.copy()
    old[-1] = np.nan
    batch = replace(collected, old_log_probs=old)
    before = policy.network
    with pytest.raises(NonFiniteLossError):
        ppo_update(
            policy, batch, TrainerConfig(workers=4),
            nn.init_adam(policy.network), np.random.default_rng(3),
        )
    assert policy.network is before


# -- success metrics --------------------------------------------------------


def test_trailing_success_rate() -> None:
    outcomes = [True, False, True, True]
    assert trailing_success_rate(outcomes, window=2) == 1.0
    assert trailing_success_rate(outcomes, window=4) == 0.75
    assert trailing_success_rate([], window=4) == 0.0


def test_episodes_to_threshold_needs_full_window() -> None:
    assert episodes_to_threshold([True] * 50) is None
    assert episodes_to_threshold([True] * 100) == 100
    assert episodes_to_threshold([False] * 20 + [True] * 100) == 110
    assert episodes_to_threshold([True, False] * 100) is None


# -- training runs ----------------------------------------------------------


def test_training_writes_log_checkpoint_and_schema(tmp_path) -> None:
    result = train(build_task_spec("opening"), "schema", TINY, output_dir=tmp_path)
    assert result.log_path == tmp_path / "opening-schema-seed0.csv"
    assert result.checkpoint_path.exists()
    assert result.schema_path.exists()
    assert result.episodes >= TINY.episode_budget
    header = result.log_path.read_text().splitlines()[0]
    assert header == ",".join(LOG_COLUMNS)
    assert len(result.final_schema) == 3


def test_training_logs_are_reproducible(tmp_path) -> None:
    spec = build_task_spec("lateral-lifting")
    first = train(spec, "baseline", TINY, output_dir=tmp_path / "a")
    second = train(spec, "baseline", TINY, output_dir=tmp_path / "b")
    assert first.log_path.read_bytes() == second.log_path.read_bytes()
    assert first.outcomes == second.outcomes


def test_oracle_training_writes_no_schema(tmp_path) -> None:
    result = train(build_task_spec("picking"), "oracle", TINY, output_dir=tmp_path)
    assert result.schema_path is None
    assert result.final_schema == build_task_spec("picking").reference_schema()


def test_schema_logits_move_during_training() -> None:
    result = train(build_task_spec("opening"), "schema", TINY)
    assert np.any(result.policy.logits.values != 0.0)


def test_transfer_requires_schema_file() -> None:
    with pytest.raises(ContractViolation):
        train(build_task_spec("opening"), "transfer", TINY)


def test_frozen_transfer_keeps_imported_logits(tmp_path) -> None:
    spec = build_task_spec("opening")
    values = np.random.default_rng(4).normal(size=(3, 16))
    path = export_schema(init_schema(spec).with_values(values), tmp_path / "source.schema")
    result = train(spec, "transfer", TINY, encoding="raster", schema_path=path)
    np.testing.assert_array_equal(result.policy.logits.values, values)
    assert result.policy.frozen


def test_warm_start_transfer_keeps_learning(tmp_path) -> None:
    spec = build_task_spec("opening")
    path = export_schema(init_schema(spec), tmp_path / "source.schema")
    result = train(spec, "transfer", TINY, schema_path=path, transfer="warm-start")
    assert np.any(result.policy.logits.values != 0.0)


def test_transfer_between_families_rejected(tmp_path) -> None:
    path = export_schema(init_schema(build_task_spec("opening")), tmp_path / "o.schema")
    with pytest.raises(TransferIncompatibleError):
        train(build_task_spec("rotating"), "transfer", TINY, schema_path=path)


@pytest.mark.parametrize("family", TASK_FAMILIES)
def test_oracle_finds_successes_within_a_few_thousand_episodes(family: str) -> None:
    config = TrainerConfig(seed=0, episode_budget=3000, stop_at_threshold=False)
    result = train(build_task_spec(family), "oracle", config)
    assert result.episodes >= 3000
    assert sum(result.outcomes) > 0
