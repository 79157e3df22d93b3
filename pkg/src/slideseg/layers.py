"""Module tree, standard layers, and deterministic initialization.

Modules register child modules and parameters in attribute order, so
``named_parameters`` yields a stable, unique dotted path per parameter. That
ordering is what makes seeded initialization and checkpoints reproducible.
"""

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter


class Module:
    """Base class: tracks parameters, buffers, and children in insertion order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array):
        """Track a non-trainable numpy array (e.g. running statistics)."""
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield (f"{prefix}.{name}" if prefix else name), p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}.{cname}" if prefix else cname)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield (f"{prefix}.{name}" if prefix else name), b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}.{cname}" if prefix else cname)

    def train(self):
        self.training = True
        for child in self._children.values():
            child.train()
        return self

    def eval(self):
        self.training = False
        for child in self._children.values():
            child.eval()
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class ModuleList(Module):
    """Indexable list of child modules, named ``{item_prefix}{i}``."""

    def __init__(self, modules=(), item_prefix=""):
        super().__init__()
        self._item_prefix = item_prefix
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module):
        self._children[f"{self._item_prefix}{len(self._items)}"] = module
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel, stride=1, pad=0, bias=True):
        super().__init__()
        self.stride = stride
        self.pad = pad
        self.weight = Parameter(
            np.zeros((out_channels, in_channels, kernel, kernel), dtype=np.float32),
            init_kind="kaiming",
        )
        self.bias = Parameter(np.zeros(out_channels, dtype=np.float32), init_kind="zeros") if bias else None

    def forward(self, x):
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class Linear(Module):
    def __init__(self, in_features, out_features, bias=True):
        super().__init__()
        self.weight = Parameter(np.zeros((out_features, in_features), dtype=np.float32), init_kind="kaiming")
        self.bias = Parameter(np.zeros(out_features, dtype=np.float32), init_kind="zeros") if bias else None

    def forward(self, x):
        return ad.linear(x, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.weight = Parameter(np.ones(channels, dtype=np.float32), init_kind="ones")
        self.bias = Parameter(np.zeros(channels, dtype=np.float32), init_kind="zeros")
        self.register_buffer("running_mean", np.zeros(channels, dtype=np.float32))
        self.register_buffer("running_var", np.ones(channels, dtype=np.float32))

    def forward(self, x):
        return ad.batch_norm(
            x,
            self.weight,
            self.bias,
            self.running_mean,
            self.running_var,
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )

    def to_dtype(self, dtype):
        self.register_buffer("running_mean", self.running_mean.astype(dtype))
        self.register_buffer("running_var", self.running_var.astype(dtype))


def initialize(module, seed):
    """Fill parameters in ``named_parameters`` order from one seeded stream.

    Kaiming-style fan-in scaling for conv and FC weights, zeros for biases,
    ones for scale-like parameters. Also stamps each parameter's dotted name.
    """
    rng = np.random.default_rng(seed)
    for name, p in module.named_parameters():
        p.name = name
        if p.init_kind == "kaiming":
            fan_in = math.prod(p.data.shape[1:])
            std = math.sqrt(2.0 / fan_in)
            p.data[...] = rng.normal(0.0, std, size=p.data.shape).astype(p.data.dtype)
        elif p.init_kind == "ones":
            p.data[...] = 1.0
        elif p.init_kind == "zeros":
            p.data[...] = 0.0
        else:
            raise ValueError(f"unknown init kind {p.init_kind!r} on {name}")
    return module


def set_dtype(module, dtype):
    """Cast every parameter and buffer in place (used by float64 grad checks)."""
    for _, p in module.named_parameters():
        p.data = p.data.astype(dtype)
    for child in _walk(module):
        if isinstance(child, BatchNorm2d):
            child.to_dtype(dtype)
    return module


def _walk(module):
    yield module
    for child in module._children.values():
        yield from _walk(child)
