"""Parameter containers and the small layers the networks are built from."""

from __future__ import annotations

from typing import Dict, Iterator, List, Tuple

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Walks attributes (Tensors, Modules, lists of Modules) to find parameters.

    Parameter names are dotted attribute paths in definition order, which is
    what the checkpoint format records.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                if val.requires_grad:
                    yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: p.data for k, p in self.named_parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def param(arr: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32,
                 bias: bool = True, zero: bool = False):
        std = 0.0 if zero else 1.0 / np.sqrt(n_in)
        self.weight = param(rng.normal(0.0, 1.0, (n_in, n_out)) * std, dtype)
        self.bias = param(np.zeros(n_out), dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, k: int = 3,
                 dtype=np.float32):
        fan_in = c_in * k * k
        self.weight = param(rng.normal(0.0, np.sqrt(2.0 / fan_in), (c_out, c_in, k, k)), dtype)
        self.bias = param(np.zeros(c_out), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias)


class Norm(Module):
    """Affine parameters shared by instance and layer normalisation."""

    def __init__(self, n: int, dtype=np.float32):
        self.gamma = param(np.ones(n), dtype)
        self.beta = param(np.zeros(n), dtype)


class InstanceNorm(Norm):
    def forward(self, x: Tensor) -> Tensor:
        return T.instance_norm(x, self.gamma, self.beta)


class LayerNorm(Norm):
    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


class ConvBlock(Module):
    """[conv3x3 -> instance norm -> leaky relu(0.2)] x 2."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, dtype=np.float32):
        self.conv1 = Conv2d(c_in, c_out, rng, dtype=dtype)
        self.norm1 = InstanceNorm(c_out, dtype)
        self.conv2 = Conv2d(c_out, c_out, rng, dtype=dtype)
        self.norm2 = InstanceNorm(c_out, dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = T.leaky_relu(self.norm1(self.conv1(x)), 0.2)
        return T.leaky_relu(self.norm2(self.conv2(x)), 0.2)
