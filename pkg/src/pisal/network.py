"""Fully connected tanh networks with a linear output layer."""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import GraphNode, Tape
from .errors import ConfigurationError, UsageError

__all__ = [
    "Mlp",
    "init_xavier",
    "forward_on_tape",
    "flatten",
    "unflatten",
    "param_count",
    "save_checkpoint",
    "load_checkpoint",
    "substream",
]


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for the named stream of a run seed."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,)))


def param_count(layer_sizes: Sequence[int]) -> int:
    return sum((a + 1) * b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))


@dataclass(frozen=True, eq=False)
class Mlp:
    """Weights are stored ``(fan_out, fan_in)`` so a layer maps ``W @ h + b``."""

    layer_sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    seed: int | None = None

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise UsageError("number of layers does not match layer_sizes")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (sizes[l + 1], sizes[l]) or b.shape != (sizes[l + 1],):
                raise UsageError(f"layer {l} has shapes {W.shape}, {b.shape}")
            W.setflags(write=False)
            b.setflags(write=False)

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        return param_count(self.layer_sizes)

    def __call__(self, inputs) -> np.ndarray:
        """Plain batched forward pass; ``inputs`` has shape ``(N, n_in)``."""
        h = np.asarray(inputs, dtype=float)
        if h.ndim == 1:
            h = h[:, None] if self.n_in == 1 else h[None, :]
        if h.shape[-1] != self.n_in:
            raise UsageError(f"expected {self.n_in} inputs, got {h.shape[-1]}")
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ W.T + b)
        return h @ self.weights[-1].T + self.biases[-1]


def _check_sizes(layer_sizes):
    if layer_sizes is None or len(layer_sizes) < 2:
        raise ConfigurationError("layer_sizes needs at least an input and an output size")
    if any(int(s) < 1 for s in layer_sizes):
        raise ConfigurationError(f"layer sizes must be positive: {list(layer_sizes)}")


def init_xavier(layer_sizes: Sequence[int], seed: int | np.random.Generator) -> Mlp:
    """Xavier-uniform weights on +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    _check_sizes(layer_sizes)
    sizes = [int(s) for s in layer_sizes]
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(tuple(sizes), tuple(weights), tuple(biases),
               seed if isinstance(seed, (int, np.integer)) else None)


def flatten(net: Mlp) -> np.ndarray:
    """Layer-major; within a layer the row-major weights, then the biases."""
    parts = []
    for W, b in zip(net.weights, net.biases):
        parts.append(W.ravel())
        parts.append(b)
    return np.concatenate(parts) if parts else np.zeros(0)


def unflatten(layer_sizes: Sequence[int], vector, seed: int | None = None) -> Mlp:
    _check_sizes(layer_sizes)
    sizes = [int(s) for s in layer_sizes]
    vector = np.asarray(vector, dtype=float)
    if vector.ndim != 1 or vector.size != param_count(sizes):
        raise UsageError(
            f"parameter vector has length {vector.size}, expected {param_count(sizes)}"
        )
    weights, biases = [], []
    pos = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        n = fan_in * fan_out
        weights.append(vector[pos: pos + n].reshape(fan_out, fan_in).copy())
        pos += n
        biases.append(vector[pos: pos + fan_out].copy())
        pos += fan_out
    return Mlp(tuple(sizes), tuple(weights), tuple(biases), seed)


def param_leaves(net: Mlp, tape: Tape, prefix: str) -> list[GraphNode]:
    """Register (or fetch) one tape leaf per parameter, in flatten order."""
    flat = flatten(net)
    return [tape.leaf(f"{prefix}[{i}]", v) for i, v in enumerate(flat)]


def forward_on_tape(
    net: Mlp,
    tape: Tape,
    inputs: Sequence[GraphNode],
    prefix: str = "net",
    params: Sequence[GraphNode] | None = None,
) -> list[GraphNode]:
    """Build the network graph over ``inputs``; returns the ``n_out`` output nodes.

    Parameters become leaves named ``f"{prefix}[i]"`` (flatten order) unless
    explicit ``params`` nodes are supplied, so repeated calls on one tape share
    the same parameter leaves.
    """
    inputs = list(inputs)
    if len(inputs) != net.n_in:
        raise UsageError(f"network takes {net.n_in} inputs, got {len(inputs)}")
    if params is None:
        params = param_leaves(net, tape, prefix)
    elif len(params) != net.n_params:
        raise UsageError("params has the wrong length for this network")
    h = inputs
    pos = 0
    n_layers = len(net.layer_sizes) - 1
    for l, (fan_in, fan_out) in enumerate(zip(net.layer_sizes[:-1], net.layer_sizes[1:])):
        W = params[pos: pos + fan_in * fan_out]
        pos += fan_in * fan_out
        b = params[pos: pos + fan_out]
        pos += fan_out
        out = []
        for r in range(fan_out):
            acc = b[r]
            for c in range(fan_in):
                acc = acc + W[r * fan_in + c] * h[c]
            out.append(tape.tanh(acc) if l < n_layers - 1 else acc)
        h = out
    return h


def to_json(net: Mlp) -> dict:
    return {
        "layer_sizes": list(net.layer_sizes),
        "params": flatten(net).tolist(),
        "seed": net.seed,
    }


def from_json(doc: dict) -> Mlp:
    return unflatten(doc["layer_sizes"], np.array(doc["params"], dtype=float), doc.get("seed"))


def save_checkpoint(net: Mlp, path) -> None:
    Path(path).write_text(json.dumps(to_json(net)))


def load_checkpoint(path) -> Mlp:
    return from_json(json.loads(Path(path).read_text()))
