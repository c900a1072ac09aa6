"""Named float32 parameter collections."""

from __future__ import annotations

from collections.abc import Mapping

import numpy as np

from .config import ModelConfig, declare_layers, expected_shapes
from .nn_core import F32, ShapeError


class WeightStore(Mapping):
    """Immutable mapping from canonical tensor name to a float32 array."""

    def __init__(self, tensors: Mapping):
        self._tensors = {}
        for name, arr in tensors.items():
            a = np.ascontiguousarray(arr, dtype=F32)
            a.setflags(write=False)
            self._tensors[name] = a

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def get(self, name, default=None):
        return self._tensors.get(name, default)

    def identical(self, other: "WeightStore") -> bool:
        if set(self) != set(other):
            return False
        return all(np.array_equal(self[n], other[n]) for n in self)

    def num_params(self) -> int:
        return sum(a.size for a in self._tensors.values())

    def audit(self, config: ModelConfig) -> None:
        """Raise :class:`ShapeError` unless names and shapes match ``config`` exactly."""
        expected = expected_shapes(config)
        missing = sorted(set(expected) - set(self))
        orphans = sorted(set(self) - set(expected))
        if missing:
            raise ShapeError(f"missing weights: {missing[:5]}{' ...' if len(missing) > 5 else ''}")
        if orphans:
            raise ShapeError(f"orphan weights not declared by the config: {orphans[:5]}")
        for name, shape in expected.items():
            if tuple(self[name].shape) != tuple(shape):
                raise ShapeError(f"{name}: expected shape {tuple(shape)}, got {self[name].shape}")


def _fan_in(name: str, shapes: dict) -> int:
    layer = name.rsplit(".", 1)[0]
    if f"{layer}.weight_hh" in shapes:  # LSTM: PyTorch-style 1/sqrt(hidden)
        return shapes[f"{layer}.weight_hh"][1]
    w = shapes[f"{layer}.weight"]
    return int(np.prod(w[1:]))


def init_weights(config: ModelConfig, seed: int = 0) -> WeightStore:
    """Draw every declared tensor uniformly from ``[-k, k]``, ``k = 1/sqrt(fan_in)``."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for decl in declare_layers(config):
        shapes = decl.spec.weight_shapes()
        for short, shape in shapes.items():
            k = 1.0 / np.sqrt(_fan_in(f"{decl.path}.{short}", {f"{decl.path}.{n}": s for n, s in shapes.items()}))
            tensors[f"{decl.path}.{short}"] = rng.uniform(-k, k, size=shape).astype(F32)
    return WeightStore(tensors)
