"""Fixed-architecture dense network with hand-written reverse mode.

A shared rectifier trunk feeds any number of linear heads. Parameters are
exposed as an ordered mapping of named float64 tensors, which is what the
optimizer, gradient clipping and checkpoint files operate on.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import BinaryIO, Iterable, Mapping, Optional

import numpy as np

from .errors import CheckpointFormatError, ContractViolation

Tensors = dict[str, np.ndarray]

HIDDEN_SIZES = (64, 64, 64, 64)
HIDDEN_GAIN = math.sqrt(2.0)
HEAD_GAIN = 0.01
LOG_SPREAD_BOUNDS = (-5.0, 1.0)

_tokens = itertools.count()


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray  # (fan_in, fan_out)
    biases: np.ndarray


@dataclass(frozen=True)
class NetworkParams:
    layers: tuple[Layer, ...]
    heads: Mapping[str, Layer]
    log_spread: np.ndarray
    token: int = field(default_factory=lambda: next(_tokens), compare=False)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[0]

    def head_width(self, name: str) -> int:
        if name not in self.heads:
            raise ContractViolation(f"network has no {name!r} head")
        return self.heads[name].weights.shape[1]

    def named_tensors(self) -> Tensors:
        tensors: Tensors = {}
        for i, layer in enumerate(self.layers):
            tensors[f"trunk.{i}.weights"] = layer.weights
            tensors[f"trunk.{i}.biases"] = layer.biases
        for name, head in self.heads.items():
            tensors[f"head.{name}.weights"] = head.weights
            tensors[f"head.{name}.biases"] = head.biases
        tensors["log_spread"] = self.log_spread
        return tensors

    @classmethod
    def from_named_tensors(cls, tensors: Mapping[str, np.ndarray]) -> NetworkParams:
        try:
            return cls._from_named_tensors(tensors)
        except KeyError as exc:
            raise CheckpointFormatError(f"missing tensor {exc.args[0]}") from exc

    @classmethod
    def _from_named_tensors(cls, tensors: Mapping[str, np.ndarray]) -> NetworkParams:
        layers: list[Layer] = []
        i = 0
        while f"trunk.{i}.weights" in tensors:
            layers.append(
                Layer(
                    np.array(tensors[f"trunk.{i}.weights"], dtype=np.float64),
                    np.array(tensors[f"trunk.{i}.biases"], dtype=np.float64),
                )
            )
            i += 1
        heads: dict[str, Layer] = {}
        for key in tensors:
            if key.startswith("head.") and key.endswith(".weights"):
                name = key[len("head.") : -len(".weights")]
                heads[name] = Layer(
                    np.array(tensors[key], dtype=np.float64),
                    np.array(tensors[f"head.{name}.biases"], dtype=np.float64),
                )
        if not layers or "log_spread" not in tensors:
            raise CheckpointFormatError("tensors do not describe a network")
        return cls(
            tuple(layers),
            heads,
            np.array(tensors["log_spread"], dtype=np.float64),
        )

    def copy(self) -> NetworkParams:
        return NetworkParams.from_named_tensors(
            {k: v.copy() for k, v in self.named_tensors().items()}
        )


def _uniform(
    rng: np.random.Generator, fan_in: int, fan_out: int, gain: float
) -> np.ndarray:
    limit = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_network(
    input_dim: int,
    head_widths: Mapping[str, int],
    spread_dim: int,
    rng: np.random.Generator,
    *,
    hidden_sizes: Iterable[int] = HIDDEN_SIZES,
    log_spread_init: float = 0.0,
) -> NetworkParams:
    """Fan-in scaled uniform weights (gain sqrt(2) hidden, 0.01 heads), zero biases."""
    layers: list[Layer] = []
    fan_in = input_dim
    for width in hidden_sizes:
        layers.append(
            Layer(_uniform(rng, fan_in, width, HIDDEN_GAIN), np.zeros(width))
        )
        fan_in = width
    heads = {
        name: Layer(_uniform(rng, fan_in, width, HEAD_GAIN), np.zeros(width))
        for name, width in head_widths.items()
    }
    log_spread = np.clip(np.full(spread_dim, float(log_spread_init)), *LOG_SPREAD_BOUNDS)
    return NetworkParams(tuple(layers), heads, log_spread)


@dataclass(frozen=True)
class ForwardCache:
    token: int
    single: bool
    activations: tuple[np.ndarray, ...]  # inputs followed by each hidden output
    pre_activations: tuple[np.ndarray, ...]


def forward(
    params: NetworkParams, inputs: np.ndarray
) -> tuple[dict[str, np.ndarray], ForwardCache]:
    """Evaluate the trunk and every head for one input vector or a batch."""
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != params.input_dim:
        raise ContractViolation(
            f"input has {x.shape[1]} features, network expects {params.input_dim}"
        )
    activations = [x]
    pre_activations = []
    for layer in params.layers:
        z = activations[-1] @ layer.weights + layer.biases
        pre_activations.append(z)
        activations.append(np.maximum(z, 0.0))
    features = activations[-1]
    heads = {
        name: features @ head.weights + head.biases
        for name, head in params.heads.items()
    }
    if single:
        heads = {name: out[0] for name, out in heads.items()}
    cache = ForwardCache(params.token, single, tuple(activations), tuple(pre_activations))
    return heads, cache


def backward(
    params: NetworkParams,
    cache: ForwardCache,
    head_gradients: Mapping[str, np.ndarray],
) -> Tensors:
    """Gradients of a scalar loss given its partials with respect to each head.

    Heads without an entry contribute nothing. ``log_spread`` is not part of
    the trunk graph; its gradient is returned as zeros for the caller to fill.
    """
    if cache.token != params.token:
        raise ContractViolation("forward cache does not belong to these parameters")
    features = cache.activations[-1]
    batch = features.shape[0]
    grads: Tensors = {}
    d_features = np.zeros_like(features)
    head_grads: Tensors = {}
    for name, head in params.heads.items():
        g = head_gradients.get(name)
        if g is None:
            g = np.zeros((batch, head.weights.shape[1]))
        g = np.asarray(g, dtype=np.float64).reshape(batch, head.weights.shape[1])
        head_grads[f"head.{name}.weights"] = features.T @ g
        head_grads[f"head.{name}.biases"] = g.sum(axis=0)
        d_features += g @ head.weights.T

    trunk_grads: Tensors = {}
    delta = d_features
    for i in reversed(range(len(params.layers))):
        dz = delta * (cache.pre_activations[i] > 0.0)
        trunk_grads[f"trunk.{i}.weights"] = cache.activations[i].T @ dz
        trunk_grads[f"trunk.{i}.biases"] = dz.sum(axis=0)
        delta = dz @ params.layers[i].weights.T

    for key in params.named_tensors():
        if key == "log_spread":
            grads[key] = np.zeros_like(params.log_spread)
        elif key in trunk_grads:
            grads[key] = trunk_grads[key]
        else:
            grads[key] = head_grads[key]
    return grads


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_global_norm(
    grads: Mapping[str, np.ndarray], threshold: float = 0.5
) -> Tensors:
    norm = global_norm(grads)
    if norm <= threshold:
        return dict(grads)
    scale = threshold / norm
    return {name: g * scale for name, g in grads.items()}


@dataclass(frozen=True)
class AdamState:
    first_moment: Mapping[str, np.ndarray]
    second_moment: Mapping[str, np.ndarray]
    step: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: NetworkParams, learning_rate: float = 0.001) -> AdamState:
    tensors = params.named_tensors()
    return AdamState(
        first_moment={k: np.zeros_like(v) for k, v in tensors.items()},
        second_moment={k: np.zeros_like(v) for k, v in tensors.items()},
        learning_rate=learning_rate,
    )


def adam_step(
    params: NetworkParams,
    grads: Mapping[str, np.ndarray],
    state: AdamState,
) -> tuple[NetworkParams, AdamState]:
    """One bias-corrected Adam descent step; inputs are left untouched."""
    tensors = params.named_tensors()
    if set(grads) != set(tensors):
        raise ContractViolation("gradient names do not match parameter names")
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    first: Tensors = {}
    second: Tensors = {}
    updated: Tensors = {}
    for name, value in tensors.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != value.shape:
            raise ContractViolation(f"gradient {name} has shape {g.shape}")
        m = b1 * state.first_moment[name] + (1.0 - b1) * g
        v = b2 * state.second_moment[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**step)
        v_hat = v / (1.0 - b2**step)
        updated[name] = value - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
        first[name] = m
        second[name] = v
    updated["log_spread"] = np.clip(updated["log_spread"], *LOG_SPREAD_BOUNDS)
    return (
        NetworkParams.from_named_tensors(updated),
        replace(state, first_moment=first, second_moment=second, step=step),
    )


# ----------------------------------------------------------------------
# Checkpoint files
#
#   SCHEMAFACTOR-CHECKPOINT 1
#   meta <key>=<value>            (zero or more)
#   tensor <name> <ndim> <d0> ... (then prod(d) little-endian float64 values)
#   end
#
# Header lines are UTF-8 text terminated by "\n"; tensor payloads follow
# their header line immediately.

CHECKPOINT_MAGIC = "SCHEMAFACTOR-CHECKPOINT 1"


def save_checkpoint(
    path: str | Path,
    tensors: Mapping[str, np.ndarray],
    metadata: Optional[Mapping[str, str]] = None,
) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("wb") as handle:
        handle.write(f"{CHECKPOINT_MAGIC}\n".encode("utf-8"))
        for key, value in (metadata or {}).items():
            if "\n" in key or "\n" in str(value) or "=" in key:
                raise ContractViolation(f"metadata {key!r} cannot be serialized")
            handle.write(f"meta {key}={value}\n".encode("utf-8"))
        for name, tensor in tensors.items():
            array = np.asarray(tensor, dtype="<f8")
            dims = " ".join(str(d) for d in array.shape)
            handle.write(f"tensor {name} {array.ndim} {dims}".rstrip().encode("utf-8"))
            handle.write(b"\n")
            handle.write(np.ascontiguousarray(array).tobytes())
        handle.write(b"end\n")
    return target


def _read_line(handle: BinaryIO, path: str | Path) -> str:
    try:
        return handle.readline().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointFormatError(f"{path}: corrupt header line") from exc


def load_checkpoint(path: str | Path) -> tuple[Tensors, dict[str, str]]:
    tensors: Tensors = {}
    metadata: dict[str, str] = {}
    with Path(path).open("rb") as handle:
        if _read_line(handle, path).strip() != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(f"{path}: not a schemafactor checkpoint")
        while True:
            line = _read_line(handle, path)
            if not line:
                raise CheckpointFormatError(f"{path}: truncated (missing 'end')")
            line = line.rstrip("\n")
            if line == "end":
                break
            kind, _, rest = line.partition(" ")
            if kind == "meta":
                key, _, value = rest.partition("=")
                metadata[key] = value
            elif kind == "tensor":
                parts = rest.split(" ")
                try:
                    name, ndim = parts[0], int(parts[1])
                    shape = tuple(int(d) for d in parts[2 : 2 + ndim])
                except (IndexError, ValueError) as exc:
                    raise CheckpointFormatError(f"{path}: bad tensor header {line!r}") from exc
                count = int(np.prod(shape)) if shape else 1
                payload = handle.read(8 * count)
                if len(payload) != 8 * count:
                    raise CheckpointFormatError(f"{path}: truncated tensor {name}")
                tensors[name] = (
                    np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
                )
            else:
                raise CheckpointFormatError(f"{path}: unexpected header {line!r}")
    return tensors, metadata
