"""Dense kernels and a minimal parameter container."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A leaf tensor with a same-shape gradient accumulator."""

    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(np.array(data), requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)


class Module:
    """Walks attributes in definition order to collect parameters and buffers."""

    training = True

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Module):
                yield from val.named_buffers(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{name}.{i}.")
        for key in getattr(self, "_buffers", ()):
            yield f"{prefix}{key}", getattr(self, key)

    def modules(self):
        yield self
        for val in vars(self).values():
            items = val if isinstance(val, (list, tuple)) else [val]
            for item in items:
                if isinstance(item, Module):
                    yield from item.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self):
        out = {n: p.data.copy() for n, p in self.named_parameters()}
        out.update({n: b.copy() for n, b in self.named_buffers()})
        return out

    def load_state_dict(self, state):
        expected = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(expected) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"missing tensors in state: {sorted(missing)}")
        for name, arr in state.items():
            if name in expected:
                target = expected[name].data
            elif name in buffers:
                target = buffers[name]
            else:
                raise KeyError(f"unexpected tensor {name!r}")
            if target.shape != np.shape(arr):
                raise ValueError(f"shape mismatch for {name!r}: "
                                 f"expected {target.shape}, got {np.shape(arr)}")
            target[...] = arr


def xavier_uniform(rng, fan_in, fan_out, dtype, shape=None):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    shape = shape or (fan_in, fan_out)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, dtype=np.float32, bias=True):
        self.weight = Parameter(xavier_uniform(rng, d_in, d_out, dtype))
        self.bias = Parameter(np.zeros(d_out, dtype=dtype)) if bias else None

    def __call__(self, x):
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Embedding(Module):
    def __init__(self, n, dim, rng, dtype=np.float32):
        self.weight = Parameter(xavier_uniform(rng, n, dim, dtype))

    def __call__(self, ids):
        return T.gather(self.weight, ids)


def matmul(a, b):
    return T.matmul(a, b)


def leaky_relu(x, slope=0.2):
    return T.leaky_relu(x, slope)


def gelu(x):
    return T.gelu(x)


def layer_norm(x, gamma=None, beta=None, eps=1e-5):
    """Normalize over the last axis; optional affine."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    y = centered / T.sqrt(var + eps)
    if gamma is not None:
        y = y * gamma
    if beta is not None:
        y = y + beta
    return y


class LayerNorm(Module):
    def __init__(self, dim, dtype=np.float32, eps=1e-5):
        self.gamma = Parameter(np.ones(dim, dtype=dtype))
        self.beta = Parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def __call__(self, x):
        return layer_norm(x, self.gamma, self.beta, self.eps)


class BatchNorm(Module):
    """Batch norm over rows (nodes); running stats blend with ``momentum``.

    ``running = momentum * running + (1 - momentum) * batch``.
    """

    _buffers = ("running_mean", "running_var")

    def __init__(self, dim, dtype=np.float32, momentum=0.9, eps=1e-5):
        self.gamma = Parameter(np.ones(dim, dtype=dtype))
        self.beta = Parameter(np.zeros(dim, dtype=dtype))
        self.running_mean = np.zeros(dim, dtype=dtype)
        self.running_var = np.ones(dim, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x):
        if x.shape[-1] != self.gamma.shape[0]:
            raise ValueError(f"batch_norm width mismatch: {x.shape[-1]} vs {self.gamma.shape[0]}")
        if self.training:
            mu = x.mean(axis=0, keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axis=0, keepdims=True)
            m = self.momentum
            self.running_mean[...] = m * self.running_mean + (1 - m) * mu.data[0]
            self.running_var[...] = m * self.running_var + (1 - m) * var.data[0]
            y = centered / T.sqrt(var + self.eps)
        else:
            y = (x - self.running_mean) / np.sqrt(self.running_var + self.eps).astype(x.dtype)
        return y * self.gamma + self.beta


def dropout(x, rate, rng, training=True):
    """Inverted dropout; identity when ``rate == 0`` or not training."""
    if not training or rate <= 0:
        return x
    if rate >= 1:
        raise ValueError("dropout rate must be < 1")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep
