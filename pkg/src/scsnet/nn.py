"""Parameter containers and the two learned layer types.

A ``Module`` is a plain object whose Tensor attributes (and nested Modules,
including lists of them) form its parameter tree. Names follow attribute
paths, so the flat parameter map is stable across runs as long as attribute
creation order is stable.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor, conv2d, linear

# leaky-rectifier slope used across the whole network
LEAKY_SLOPE = 0.2


def kaiming_uniform(rng, shape, fan_in, dtype=np.float32):
    """Fan-in scaled uniform init, gain matched to the leaky slope."""
    gain = math.sqrt(2.0 / (1.0 + LEAKY_SLOPE**2))
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Base for anything holding trainable tensors."""

    def named_parameters(self, prefix=""):
        for name, val in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(val, Tensor):
                if val.requires_grad:
                    yield key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(prefix=f"{key}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{key}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{key}.{i}", item

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def param_count(self):
        return sum(p.data.size for p in self.parameters())


def parameter_map(module: Module) -> dict[str, Tensor]:
    """Flat name -> tensor map; rejects duplicate names or shared tensors."""
    out: dict[str, Tensor] = {}
    seen: dict[int, str] = {}
    for name, p in module.named_parameters():
        if name in out:
            raise ValueError(f"duplicate parameter name: {name}")
        if id(p) in seen:
            raise ValueError(f"tensor shared between {seen[id(p)]} and {name}")
        out[name] = p
        seen[id(p)] = name
    return out


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, padding=None, dtype=np.float32):
        if padding is None:
            padding = kernel // 2
        self.weight = Tensor(
            kaiming_uniform(rng, (out_ch, in_ch, kernel, kernel), in_ch * kernel * kernel, dtype),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, dtype=np.float32):
        self.weight = Tensor(
            kaiming_uniform(rng, (out_dim, in_dim), in_dim, dtype), requires_grad=True
        )
        self.bias = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return linear(x, self.weight, self.bias)
