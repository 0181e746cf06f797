"""Parameter containers shared by the network layers.

Layer parameters are plain dataclasses holding :class:`Tensor` leaves (and
nested dataclasses, lists or dicts of them). :func:`named_tensors` flattens
any such tree into dotted hierarchical names, which is what the optimizer and
the checkpoint format work with.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .ops import linear
from .tensor import Tensor, get_default_dtype, parameter


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    shape = shape or (fan_in, fan_out)
    return parameter(rng.uniform(-limit, limit, size=shape).astype(get_default_dtype()))


def zeros(*shape: int) -> Tensor:
    return parameter(np.zeros(shape))


def ones(*shape: int) -> Tensor:
    return parameter(np.ones(shape))


@dataclass
class Linear:
    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_out: int) -> "Linear":
        return cls(glorot(rng, d_in, d_out), zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


def named_tensors(tree, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Yield ``(name, tensor)`` for every tensor leaf, in a stable order."""
    if isinstance(tree, Tensor):
        yield prefix, tree
    elif dataclasses.is_dataclass(tree):
        for f in dataclasses.fields(tree):
            yield from named_tensors(getattr(tree, f.name), _join(prefix, f.name))
    elif isinstance(tree, dict):
        for k in tree:
            yield from named_tensors(tree[k], _join(prefix, str(k)))
    elif isinstance(tree, (list, tuple)):
        for i, v in enumerate(tree):
            yield from named_tensors(v, _join(prefix, str(i)))


def _join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


def count_parameters(tree) -> int:
    return sum(t.data.size for _, t in named_tensors(tree))
