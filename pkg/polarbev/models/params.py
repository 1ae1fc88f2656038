"""Parameter containers: dataclasses of Tensors, walked by name"""
from __future__ import annotations

import dataclasses
import math
from typing import Dict, Iterator, List, Tuple

import numpy as np

from polarbev.core.errors import CheckpointError
from polarbev.core.numcore import Tensor


def dense(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    """Uniform ±1/√fan_in weight matrix"""
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)))


def zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape))


def ones(*shape: int) -> Tensor:
    return Tensor(np.ones(shape))


def full(value: float, *shape: int) -> Tensor:
    return Tensor(np.full(shape, value, dtype=np.float64))


@dataclasses.dataclass
class Linear:
    W: Tensor
    b: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, fan_in: int, fan_out: int) -> "Linear":
        return cls(dense(rng, fan_in, fan_out), zeros(fan_out))

    @classmethod
    def zero(cls, fan_in: int, fan_out: int) -> "Linear":
        return cls(zeros(fan_in, fan_out), zeros(fan_out))


@dataclasses.dataclass
class LayerNorm:
    gamma: Tensor
    beta: Tensor

    @classmethod
    def init(cls, channels: int) -> "LayerNorm":
        return cls(ones(channels), zeros(channels))


def named_tensors(obj, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
    """Depth-first (name, tensor) pairs in field order"""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from named_tensors(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_tensors(item, f"{prefix}.{i}" if prefix else str(i))
    elif isinstance(obj, dict):
        for key, item in obj.items():
            yield from named_tensors(item, f"{prefix}.{key}" if prefix else str(key))


def parameter_list(obj) -> List[Tensor]:
    return [t for _, t in named_tensors(obj)]


def state_dict(obj) -> Dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in named_tensors(obj)}


def load_state(obj, state: Dict[str, np.ndarray]) -> None:
    """Copy arrays into the matching tensors; names and shapes must agree exactly"""
    own = dict(named_tensors(obj))
    if set(own) != set(state):
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        raise CheckpointError("parameter names disagree", missing=missing[:5], unexpected=extra[:5])
    for name, tensor in own.items():
        value = np.asarray(state[name], dtype=np.float64)
        if value.shape != tensor.shape:
            raise CheckpointError("parameter shape disagrees", name=name,
                                  expected=tensor.shape, found=value.shape)
        tensor.data = value.copy()
        tensor.zero_grad()
