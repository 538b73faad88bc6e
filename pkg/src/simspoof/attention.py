"""Feature-map refinement: SimAM (parameter-free), squeeze-excite over frequency, and CBAM.

All refiners take ``C x F x T`` or ``B x C x F x T`` maps and return a map of
the same shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor
from .nn import Module, uniform_init


@dataclass(frozen=True)
class SimAmConfig:
    lambda_reg: float = 1e-4
    # "channel": mean/variance over all M neurons of the channel.
    # "leave_one_out": statistics of the other M-1 neurons, the exact minimizer.
    statistics: str = "channel"

    def __post_init__(self):
        if not self.lambda_reg > 0:
            raise ValueError(f"lambda_reg must be positive, got {self.lambda_reg}")
        if self.statistics not in ("channel", "leave_one_out"):
            raise ValueError(f"unknown statistics mode {self.statistics!r}")


@dataclass(frozen=True)
class SeConfig:
    reduction: int = 4

    def __post_init__(self):
        if self.reduction < 1:
            raise ValueError("reduction must be >= 1")


@dataclass(frozen=True)
class CbamConfig:
    reduction: int = 4
    kernel: int = 7

    def __post_init__(self):
        if self.reduction < 1:
            raise ValueError("reduction must be >= 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("CBAM kernel must be a positive odd integer")


def _check_map(x: Tensor) -> None:
    if x.ndim not in (3, 4):
        raise ShapeError(f"expected a C x F x T or B x C x F x T map, got shape {x.shape}")


def minimal_energy(t, mean, var, lambda_reg: float):
    """Closed-form minimum of the per-neuron energy, ``4(var+lam) / ((t-mean)^2 + 2 var + 2 lam)``.

    Works on floats, arrays or tensors.
    """
    if isinstance(t, Tensor) or isinstance(mean, Tensor) or isinstance(var, Tensor):
        num = (var + lambda_reg) * 4.0
        den = ag.square(t - mean) + var * 2.0 + 2.0 * lambda_reg
        return num / den
    return 4.0 * (var + lambda_reg) / ((t - mean) ** 2 + 2.0 * var + 2.0 * lambda_reg)


def channel_statistics(x: Tensor, leave_one_out: bool = False):
    """Per-channel mean and population variance over the last two axes.

    With ``leave_one_out`` the statistics for each neuron exclude that neuron.
    """
    M = x.shape[-1] * x.shape[-2]
    if M < 2:
        raise ShapeError("SimAM needs at least two neurons per channel (F x T >= 2)")
    mu = ag.mean(x, axis=(-2, -1), keepdims=True)
    if not leave_one_out:
        var = ag.mean(ag.square(x - mu), axis=(-2, -1), keepdims=True)
        return mu, var
    total = ag.sum(x, axis=(-2, -1), keepdims=True)
    mu_o = (total - x) * (1.0 / (M - 1))
    # centre on the full mean before squaring to limit cancellation
    d = x - mu
    ss = ag.sum(ag.square(d), axis=(-2, -1), keepdims=True)
    d_o = mu_o - mu
    var_o = (ss - ag.square(d)) * (1.0 / (M - 1)) - ag.square(d_o)
    return mu_o, var_o


def simam_energy(x, cfg: SimAmConfig = SimAmConfig()) -> Tensor:
    """Minimal energy of every neuron; lower energy marks a more distinctive neuron."""
    x = ag.as_tensor(x)
    _check_map(x)
    mu, var = channel_statistics(x, leave_one_out=cfg.statistics == "leave_one_out")
    return minimal_energy(x, mu, var, cfg.lambda_reg)


def simam_refine(x, cfg: SimAmConfig = SimAmConfig()) -> Tensor:
    x = ag.as_tensor(x)
    energy = simam_energy(x, cfg)
    return ag.sigmoid(1.0 / energy) * x


class SimAM(Module):
    def __init__(self, cfg: SimAmConfig = SimAmConfig()):
        super().__init__()
        self.cfg = cfg

    def forward(self, x):
        return simam_refine(x, self.cfg)


class SeParams(Module):
    """Frequency squeeze-excite bottleneck ``F -> F/r -> F``."""

    def __init__(self, freq_bins: int, cfg: SeConfig, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        if freq_bins % cfg.reduction:
            raise ValueError(f"frequency bins {freq_bins} not divisible by reduction {cfg.reduction}")
        hidden = freq_bins // cfg.reduction
        self.w1 = uniform_init(rng, (freq_bins, hidden), freq_bins, dtype)
        self.b1 = uniform_init(rng, (hidden,), freq_bins, dtype)
        self.w2 = uniform_init(rng, (hidden, freq_bins), hidden, dtype)
        self.b2 = uniform_init(rng, (freq_bins,), hidden, dtype)


def se_refine(x, params: SeParams, cfg: SeConfig) -> Tensor:
    x = ag.as_tensor(x)
    _check_map(x)
    F = x.shape[-2]
    if F % cfg.reduction:
        raise ValueError(f"frequency bins {F} not divisible by reduction {cfg.reduction}")
    if params.w1.shape[0] != F:
        raise ShapeError(f"SE parameters built for {params.w1.shape[0]} bins, input has {F}")
    squeeze = ag.mean(x, axis=(-3, -1))  # [B x] F
    hidden = ag.relu(ag.linear(squeeze, params.w1, params.b1))
    gate = ag.sigmoid(ag.linear(hidden, params.w2, params.b2))
    gate = ag.reshape(gate, gate.shape[:-1] + (1, F, 1))
    return x * gate


class SqueezeExcite(Module):
    def __init__(self, freq_bins: int, cfg: SeConfig, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.cfg = cfg
        self.params = SeParams(freq_bins, cfg, rng, dtype)

    def forward(self, x):
        return se_refine(x, self.params, self.cfg)


class CbamParams(Module):
    def __init__(self, channels: int, cfg: CbamConfig, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        if channels % cfg.reduction:
            raise ValueError(f"channels {channels} not divisible by reduction {cfg.reduction}")
        hidden = channels // cfg.reduction
        self.w1 = uniform_init(rng, (channels, hidden), channels, dtype)
        self.b1 = uniform_init(rng, (hidden,), channels, dtype)
        self.w2 = uniform_init(rng, (hidden, channels), hidden, dtype)
        self.b2 = uniform_init(rng, (channels,), hidden, dtype)
        k = cfg.kernel
        self.conv = uniform_init(rng, (1, 2, k, k), 2 * k * k, dtype)
        self.conv_bias = uniform_init(rng, (1,), 2 * k * k, dtype)


def cbam_refine(x, params: CbamParams, cfg: CbamConfig) -> Tensor:
    x = ag.as_tensor(x)
    _check_map(x)
    C = x.shape[-3]
    if C % cfg.reduction:
        raise ValueError(f"channels {C} not divisible by reduction {cfg.reduction}")
    if params.w1.shape[0] != C:
        raise ShapeError(f"CBAM parameters built for {params.w1.shape[0]} channels, input has {C}")
    unbatched = x.ndim == 3
    xb = ag.reshape(x, (1,) + x.shape) if unbatched else x
    B, _, F, T = xb.shape

    def bottleneck(v):
        return ag.linear(ag.relu(ag.linear(v, params.w1, params.b1)), params.w2, params.b2)

    avg = ag.mean(xb, axis=(2, 3))
    mx = ag.amax(ag.reshape(xb, (B, C, F * T)), axis=2)
    channel_gate = ag.sigmoid(bottleneck(avg) + bottleneck(mx))
    x1 = xb * ag.reshape(channel_gate, (B, C, 1, 1))

    pooled = ag.concat([ag.mean(x1, axis=1, keepdims=True), ag.amax(x1, axis=1, keepdims=True)], axis=1)
    pad = cfg.kernel // 2
    ft_gate = ag.sigmoid(ag.conv2d(pooled, params.conv, params.conv_bias, padding=pad))
    out = x1 * ft_gate
    return ag.reshape(out, x.shape) if unbatched else out


class CBAM(Module):
    def __init__(self, channels: int, cfg: CbamConfig, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.cfg = cfg
        self.params = CbamParams(channels, cfg, rng, dtype)

    def forward(self, x):
        return cbam_refine(x, self.params, self.cfg)
