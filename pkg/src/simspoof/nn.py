"""Parameter containers, standard layers and the Adam optimizer."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Module:
    """Attribute-based container; parameters are ``Tensor`` attributes with ``requires_grad``."""

    training = True

    def __init__(self):
        self._buffers: dict = {}

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple]:
        for name, arr in self._buffers.items():
            yield f"{prefix}{name}", arr
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{name}.{i}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        state = {f"param/{k}": v.data for k, v in self.named_parameters()}
        state.update({f"buffer/{k}": v for k, v in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_parameters())
        expected = set(f"param/{k}" for k in own) | set(f"buffer/{k}" for k, _ in self.named_buffers())
        missing = expected - set(state)
        unexpected = set(state) - expected
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            arr = np.asarray(state[f"param/{name}"])
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: checkpoint {arr.shape} vs model {p.shape}")
            p.data = arr.astype(p.dtype).copy()
        for prefix, module in self._named_modules():
            for bname in module._buffers:
                key = f"buffer/{prefix}{bname}"
                arr = np.asarray(state[key])
                if arr.shape != module._buffers[bname].shape:
                    raise ValueError(f"shape mismatch for buffer {prefix}{bname}")
                module._buffers[bname] = arr.astype(module._buffers[bname].dtype).copy()

    def _named_modules(self, prefix: str = "") -> Iterator[tuple]:
        yield prefix, self
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, Module):
                yield from value._named_modules(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._named_modules(f"{prefix}{name}.{i}.")

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def param(arr, dtype) -> Tensor:
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return param(rng.uniform(-bound, bound, size=shape), dtype)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True, dtype=np.float64):
        super().__init__()
        self.weight = uniform_init(rng, (d_in, d_out), d_in, dtype)
        self.bias = uniform_init(rng, (d_out,), d_in, dtype) if bias else None

    def forward(self, x):
        return ag.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, rng, padding=0, bias=True, dtype=np.float64):
        super().__init__()
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        fan_in = c_in * kh * kw
        self.weight = uniform_init(rng, (c_out, c_in, kh, kw), fan_in, dtype)
        self.bias = uniform_init(rng, (c_out,), fan_in, dtype) if bias else None
        self.padding = padding

    def forward(self, x):
        return ag.conv2d(x, self.weight, self.bias, padding=self.padding)


class BatchNorm2d(Module):
    """Per-channel normalization over batch and both spatial axes.

    Training mode normalizes with the biased batch variance and updates the
    running estimates with the unbiased one; inference uses running estimates.
    """

    def __init__(self, channels: int, dtype=np.float64, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = param(np.ones(channels), dtype)
        self.beta = param(np.zeros(channels), dtype)
        self.momentum = momentum
        self.eps = eps
        self._buffers = {
            "running_mean": np.zeros(channels, dtype=dtype),
            "running_var": np.ones(channels, dtype=dtype),
        }

    def forward(self, x):
        axes = (0, 2, 3)
        C = x.shape[1]
        if self.training:
            mu = ag.mean(x, axis=axes, keepdims=True)
            centered = x - mu
            var = ag.mean(ag.square(centered), axis=axes, keepdims=True)
            n = x.size // C
            with ag.no_grad():
                m = self.momentum
                unbiased = var.data.reshape(C) * (n / max(n - 1, 1))
                rm, rv = self._buffers["running_mean"], self._buffers["running_var"]
                self._buffers["running_mean"] = ((1 - m) * rm + m * mu.data.reshape(C)).astype(rm.dtype)
                self._buffers["running_var"] = ((1 - m) * rv + m * unbiased).astype(rv.dtype)
            normed = centered / ag.sqrt(var + self.eps)
        else:
            rm = self._buffers["running_mean"].reshape(1, C, 1, 1)
            rv = self._buffers["running_var"].reshape(1, C, 1, 1)
            normed = (x - Tensor(rm)) / Tensor(np.sqrt(rv + self.eps))
        return normed * ag.reshape(self.gamma, (1, C, 1, 1)) + ag.reshape(self.beta, (1, C, 1, 1))


class GRU(Module):
    """Single-layer unidirectional GRU, zero initial state."""

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.hidden = hidden
        self.w_ih = uniform_init(rng, (d_in, 3 * hidden), hidden, dtype)
        self.w_hh = uniform_init(rng, (hidden, 3 * hidden), hidden, dtype)
        self.b_ih = uniform_init(rng, (3 * hidden,), hidden, dtype)
        self.b_hh = uniform_init(rng, (3 * hidden,), hidden, dtype)

    def forward(self, x):
        return ag.gru(x, self.w_ih, self.w_hh, self.b_ih, self.b_hh)


class Adam:
    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad.astype(p.dtype, copy=False)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.dtype, copy=False)


def cosine_lr(epoch: int, epochs: int, base_lr: float, floor: float = 0.0) -> float:
    """Cosine annealing from ``base_lr`` at epoch 0 to ``floor`` at the last epoch."""
    if epochs <= 1:
        return base_lr
    epoch = min(max(epoch, 0), epochs - 1)
    # the end points are returned exactly rather than through rounding-prone arithmetic
    if epoch == 0:
        return base_lr
    if epoch == epochs - 1:
        return floor
    return floor + 0.5 * (base_lr - floor) * (1.0 + math.cos(math.pi * epoch / (epochs - 1)))
