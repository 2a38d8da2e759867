from __future__ import annotations

import unittest

import numpy as np

from schemafactor import nn
from schemafactor.errors import CheckpointFormatError, ContractViolation


def _network(seed: int, hidden=(8, 8), input_dim: int = 6) -> nn.NetworkParams:
    rng = np.random.default_rng(seed)
    params = nn.init_network(
        input_dim, {"policy": 4, "value": 1}, 3, rng, hidden_sizes=hidden
    )
    # Larger head weights than the initial 0.01 gain so gradients are not tiny.
    tensors = {k: v.copy() for k, v in params.named_tensors().items()}
    for name in tensors:
        if name.startswith("head.") and name.endswith(".weights"):
            tensors[name] = rng.normal(size=tensors[name].shape)
    return nn.NetworkParams.from_named_tensors(tensors)


def _shift(params: nn.NetworkParams, direction: dict, scale: float) -> nn.NetworkParams:
    return nn.NetworkParams.from_named_tensors(
        {k: v + scale * direction[k] for k, v in params.named_tensors().items()}
    )


class GradientTests(unittest.TestCase):
    def test_backward_matches_central_differences(self) -> None:
        for seed in range(10):
            params = _network(seed)
            rng = np.random.default_rng(100 + seed)
            inputs = rng.normal(size=(3, 6))
            weights = {"policy": rng.normal(size=(3, 4)), "value": rng.normal(size=(3, 1))}

            def loss(p: nn.NetworkParams) -> float:
                heads, _ = nn.forward(p, inputs)
                return float(sum(np.sum(heads[k] * weights[k]) for k in weights))

            _, cache = nn.forward(params, inputs)
            grads = nn.backward(params, cache, weights)
            for _ in range(3):
                direction = {
                    k: rng.normal(size=v.shape) for k, v in params.named_tensors().items()
                }
                direction["log_spread"] = np.zeros(3)
                eps = 1e-6
                numeric = (
                    loss(_shift(params, direction, eps)) - loss(_shift(params, direction, -eps))
                ) / (2 * eps)
                analytic = sum(float(np.sum(grads[k] * direction[k])) for k in grads)
                scale = max(abs(analytic), abs(numeric), 1e-8)
                self.assertLessEqual(abs(analytic - numeric) / scale, 1e-4, f"seed {seed}")

    def test_missing_head_gradient_counts_as_zero(self) -> None:
        params = _network(0)
        inputs = np.ones((2, 6))
        _, cache = nn.forward(params, inputs)
        grads = nn.backward(params, cache, {"value": np.ones((2, 1))})
        np.testing.assert_array_equal(grads["head.policy.weights"], 0.0)
        np.testing.assert_array_equal(grads["log_spread"], 0.0)

    def test_stale_cache_rejected(self) -> None:
        params = _network(0)
        _, cache = nn.forward(params, np.ones(6))
        with self.assertRaises(ContractViolation):
            nn.backward(params.copy(), cache, {})

    def test_input_width_checked(self) -> None:
        with self.assertRaises(ContractViolation):
            nn.forward(_network(0), np.ones(5))

    def test_single_input_returns_vectors(self) -> None:
        heads, _ = nn.forward(_network(0), np.ones(6))
        self.assertEqual(heads["policy"].shape, (4,))
        self.assertEqual(heads["value"].shape, (1,))


class InitTests(unittest.TestCase):
    def test_initial_heads_are_small_and_biases_zero(self) -> None:
        params = nn.init_network(10, {"out": 5}, 2, np.random.default_rng(0))
        self.assertEqual(len(params.layers), 4)
        self.assertTrue(all(layer.weights.shape[1] == 64 for layer in params.layers))
        limit = 0.01 * np.sqrt(3.0 / 64)
        self.assertLessEqual(np.abs(params.heads["out"].weights).max(), limit)
        for layer in params.layers:
            np.testing.assert_array_equal(layer.biases, 0.0)

    def test_same_seed_same_weights(self) -> None:
        a = nn.init_network(4, {"out": 2}, 1, np.random.default_rng(7))
        b = nn.init_network(4, {"out": 2}, 1, np.random.default_rng(7))
        for name, value in a.named_tensors().items():
            np.testing.assert_array_equal(value, b.named_tensors()[name])


class AdamTests(unittest.TestCase):
    def test_first_step_moves_by_learning_rate(self) -> None:
        params = _network(1)
        grads = {k: np.full_like(v, 0.5) for k, v in params.named_tensors().items()}
        state = nn.init_adam(params, learning_rate=0.001)
        updated, state = nn.adam_step(params, grads, state)
        self.assertEqual(state.step, 1)
        for name, value in params.named_tensors().items():
            delta = value - updated.named_tensors()[name]
            np.testing.assert_allclose(delta, 0.001, rtol=1e-6)

    def test_zero_gradients_leave_parameters_unchanged(self) -> None:
        params = _network(2)
        state = nn.init_adam(params)
        zeros = {k: np.zeros_like(v) for k, v in params.named_tensors().items()}
        current = params
        for _ in range(5):
            current, state = nn.adam_step(current, zeros, state)
        for name, value in params.named_tensors().items():
            np.testing.assert_array_equal(value, current.named_tensors()[name])

    def test_identical_calls_are_deterministic(self) -> None:
        params = _network(3)
        rng = np.random.default_rng(0)
        grads = {k: rng.normal(size=v.shape) for k, v in params.named_tensors().items()}
        state = nn.init_adam(params)
        a, _ = nn.adam_step(params, grads, state)
        b, _ = nn.adam_step(params, grads, state)
        for name, value in a.named_tensors().items():
            np.testing.assert_array_equal(value, b.named_tensors()[name])

    def test_log_spread_is_clamped(self) -> None:
        params = nn.init_network(
            2, {"out": 1}, 2, np.random.default_rng(0), log_spread_init=0.9995
        )
        grads = {k: np.zeros_like(v) for k, v in params.named_tensors().items()}
        grads["log_spread"] = np.full(2, -1.0)
        updated, _ = nn.adam_step(params, grads, nn.init_adam(params, learning_rate=0.01))
        np.testing.assert_array_equal(updated.log_spread, 1.0)

    def test_mismatched_gradients_rejected(self) -> None:
        params = _network(0)
        with self.assertRaises(ContractViolation):
            nn.adam_step(params, {"log_spread": np.zeros(3)}, nn.init_adam(params))


class ClipTests(unittest.TestCase):
    def test_small_norm_unchanged(self) -> None:
        grads = {"a": np.array([0.15, 0.2])}
        clipped = nn.clip_global_norm(grads, 0.5)
        np.testing.assert_array_equal(clipped["a"], grads["a"])

    def test_large_norm_rescaled(self) -> None:
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        clipped = nn.clip_global_norm(grads, 0.5)
        self.assertAlmostEqual(nn.global_norm(clipped), 0.5)
        self.assertAlmostEqual(float(clipped["a"][0]), 0.3)

    def test_zero_gradients_stay_zero(self) -> None:
        clipped = nn.clip_global_norm({"a": np.zeros(4)}, 0.5)
        np.testing.assert_array_equal(clipped["a"], 0.0)


class CheckpointTests(unittest.TestCase):
    def test_round_trip_preserves_tensors_and_metadata(self) -> None:
        import tempfile
        from pathlib import Path

        params = _network(4)
        with tempfile.TemporaryDirectory() as tmp:
            path = nn.save_checkpoint(
                Path(tmp) / "net.ckpt", params.named_tensors(), {"mode": "schema"}
            )
            tensors, meta = nn.load_checkpoint(path)
        self.assertEqual(meta, {"mode": "schema"})
        self.assertEqual(list(tensors), list(params.named_tensors()))
        for name, value in params.named_tensors().items():
            np.testing.assert_array_equal(tensors[name], value)

    def test_bad_header_rejected(self) -> None:
        import tempfile
        from pathlib import Path

        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.ckpt"
            path.write_bytes(b"not a checkpoint\n")
            with self.assertRaises(CheckpointFormatError):
                nn.load_checkpoint(path)

    def test_truncated_file_rejected(self) -> None:
        import tempfile
        from pathlib import Path

        params = _network(5)
        with tempfile.TemporaryDirectory() as tmp:
            path = nn.save_checkpoint(Path(tmp) / "net.ckpt", params.named_tensors())
            data = path.read_bytes()
            path.write_bytes(data[: len(data) // 2])
            with self.assertRaises(CheckpointFormatError):
                nn.load_checkpoint(path)


if __name__ == "__main__":
    unittest.main()
