"""RawNet2-style encoder: sinc band-pass front-end, residual 2-D blocks, GRU embedding.

The sinc layer output (``num_filters x T0``) is treated as a single-channel
2-D map, so every residual block sees ``C x F x T`` with F the filter axis.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import autograd as ag
from .attention import CBAM, SimAM, SimAmConfig, SqueezeExcite, CbamConfig, SeConfig
from .autograd import ShapeError, Tensor
from .nn import GRU, BatchNorm2d, Conv2d, Linear, Module, param

ATTENTION_KINDS = ("none", "se", "cbam", "simam")


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


class ConfigError(ValueError):
    pass


@dataclass
class EncoderConfig:
    segment_len: int = 64600
    sample_rate: int = 16000
    sinc_filters: int = 70
    sinc_kernel: int = 129
    sinc_stride: int = 1
    # optional rectification and time-axis max-pool of the sinc output
    sinc_abs: bool = False
    sinc_pool: int = 1
    # first-order high-frequency boost y[t] = x[t] - a * x[t-1]; 0 disables
    pre_emphasis: float = 0.0
    min_low_hz: float = 30.0
    min_band_hz: float = 10.0
    num_blocks: int = 6
    filters_per_block: list = field(default_factory=lambda: [32, 32, 64, 64, 64, 64])
    gru_hidden: int = 128
    embed_dim: int = 128
    attention_kind: str = "none"
    simam_lambda: float = 1e-4
    se_reduction: int = 4
    cbam_reduction: int = 4
    cbam_kernel: int = 7

    def __post_init__(self):
        self.filters_per_block = [int(f) for f in self.filters_per_block]
        if len(self.filters_per_block) != self.num_blocks:
            raise ConfigError(
                f"filters_per_block has {len(self.filters_per_block)} entries, num_blocks is {self.num_blocks}"
            )
        if self.embed_dim <= 0 or self.gru_hidden <= 0:
            raise ConfigError("embed_dim and gru_hidden must be positive")
        if self.sinc_kernel < 1 or self.sinc_kernel % 2 == 0:
            raise ConfigError("sinc_kernel must be a positive odd integer")
        if self.sinc_stride < 1 or self.sinc_pool < 1:
            raise ConfigError("sinc_stride and sinc_pool must be >= 1")
        if not 0.0 <= self.pre_emphasis < 1.0:
            raise ConfigError("pre_emphasis must lie in [0, 1)")
        if self.attention_kind not in ATTENTION_KINDS:
            raise ConfigError(f"attention_kind must be one of {ATTENTION_KINDS}")
        if not 0 < self.min_low_hz < self.sample_rate / 2:
            raise ConfigError("min_low_hz must lie in (0, sample_rate/2)")
        if self.min_band_hz <= 0:
            raise ConfigError("min_band_hz must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    def feature_shapes(self) -> list:
        """``(C, F, T)`` entering each block, followed by the encoder output shape."""
        F = self.sinc_filters
        if self.segment_len < self.sinc_kernel:
            raise ConfigError(f"segment_len {self.segment_len} shorter than sinc kernel {self.sinc_kernel}")
        T = ((self.segment_len - self.sinc_kernel) // self.sinc_stride + 1) // self.sinc_pool
        if T < 1:
            raise ConfigError(f"sinc_pool {self.sinc_pool} exceeds the sinc output length")
        shapes = [(1, F, T)]
        for i, c in enumerate(self.filters_per_block):
            if F < 2 or T < 2:
                raise ConfigError(f"feature map {F}x{T} too small for 2x2 pooling in block {i}")
            F, T = F // 2, T // 2
            shapes.append((c, F, T))
        return shapes


class SincFilterbank(Module):
    """Learnable band-pass filters parameterized by low cutoff and bandwidth (Hz)."""

    def __init__(self, num_filters: int, kernel_len: int, sample_rate: int, min_low_hz: float = 30.0,
                 min_band_hz: float = 10.0, stride: int = 1, dtype=np.float64):
        super().__init__()
        self.stride = stride
        if kernel_len % 2 == 0:
            raise ConfigError("sinc kernel length must be odd")
        self.num_filters = num_filters
        self.kernel_len = kernel_len
        self.sample_rate = sample_rate
        self.min_low_hz = float(min_low_hz)
        self.min_band_hz = float(min_band_hz)
        # edges sit strictly inside (min_low_hz, sr/2) so no parameter starts on a kink of |.| or clip
        bottom, top = min_low_hz + min_band_hz, sample_rate / 2 - min_band_hz
        edges = mel_to_hz(np.linspace(hz_to_mel(bottom), hz_to_mel(top), num_filters + 1))
        if np.any(np.diff(edges) < min_band_hz):
            raise ConfigError("too many filters for min_band_hz at this sample rate")
        self.low_hz = param(edges[:-1] - min_low_hz, dtype)
        self.band_hz = param(np.diff(edges) - min_band_hz, dtype)
        half = (kernel_len - 1) // 2
        n = np.arange(kernel_len)
        hamming = 0.54 - 0.46 * np.cos(2 * np.pi * n / max(kernel_len - 1, 1))
        self._window = hamming[:half].astype(dtype)
        self._n = (2 * np.pi * np.arange(-half, 0) / sample_rate).astype(dtype)

    def cutoffs(self):
        """Effective (low, high) cutoffs in Hz as tensors."""
        low = ag.absolute(self.low_hz) + self.min_low_hz
        high = ag.clip(low + self.min_band_hz + ag.absolute(self.band_hz), self.min_low_hz, self.sample_rate / 2)
        return low, high

    def center_frequencies(self) -> np.ndarray:
        """Mel-scale midpoints of each pass band, in Hz."""
        low, high = (t.data.astype(np.float64) for t in self.cutoffs())
        return mel_to_hz((hz_to_mel(low) + hz_to_mel(high)) / 2)

    def kernels(self) -> Tensor:
        low, high = self.cutoffs()
        low_c = ag.reshape(low, (-1, 1))
        high_c = ag.reshape(high, (-1, 1))
        band = high_c - low_c
        if self.kernel_len == 1:
            return band / band
        n = Tensor(self._n.reshape(1, -1))
        left = (ag.sin(high_c * n) - ag.sin(low_c * n)) / (n * 0.5) * Tensor(self._window.reshape(1, -1))
        right = ag.getitem(left, (slice(None), slice(None, None, -1)))
        full = ag.concat([left, band * 2.0, right], axis=1)
        return full / (band * 2.0)

    def forward(self, wave):
        return sinc_forward(wave, self)


def sinc_forward(wave, fb: SincFilterbank) -> Tensor:
    """Filter ``[B x] L`` waveforms into ``[B x] 1 x num_filters x T0`` maps.

    ``T0 = (L - kernel_len) // stride + 1``.
    """
    wave = ag.as_tensor(wave)
    unbatched = wave.ndim == 1
    if unbatched:
        wave = ag.reshape(wave, (1, -1))
    B, L = wave.shape
    if L < fb.kernel_len:
        raise ShapeError(f"waveform length {L} shorter than sinc kernel {fb.kernel_len}")
    k = ag.reshape(fb.kernels(), (fb.num_filters, 1, 1, fb.kernel_len))
    out = ag.conv2d(ag.reshape(wave, (B, 1, 1, L)), k, stride=(1, fb.stride))  # B x F x 1 x T0
    out = ag.reshape(out, (B, 1, fb.num_filters, out.shape[-1]))
    return ag.reshape(out, out.shape[1:]) if unbatched else out


def pre_emphasize(wave, coeff: float) -> Tensor:
    """``y[t] = x[t] - coeff * x[t-1]`` along the last axis; the first sample passes through."""
    wave = ag.as_tensor(wave)
    if coeff == 0.0:
        return wave
    head = ag.getitem(wave, (..., slice(0, 1)))
    tail = ag.sub(ag.getitem(wave, (..., slice(1, None))), ag.scale(ag.getitem(wave, (..., slice(None, -1))), coeff))
    return ag.concat([head, tail], axis=-1)


def _largest_divisor_at_most(n: int, cap: int) -> int:
    for r in range(min(cap, n), 0, -1):
        if n % r == 0:
            return r
    return 1


def make_attention(kind: str, channels: int, freq_bins: int, cfg: EncoderConfig, rng, dtype) -> Optional[Module]:
    if kind == "none":
        return None
    if kind == "simam":
        return SimAM(SimAmConfig(cfg.simam_lambda))
    if kind == "se":
        return SqueezeExcite(freq_bins, SeConfig(_largest_divisor_at_most(freq_bins, cfg.se_reduction)), rng, dtype)
    if kind == "cbam":
        r = _largest_divisor_at_most(channels, cfg.cbam_reduction)
        return CBAM(channels, CbamConfig(r, cfg.cbam_kernel), rng, dtype)
    raise ConfigError(f"unknown attention kind {kind!r}")


class ResidualBlock(Module):
    """BN-SeLU-conv twice, optional attention, residual add, 2x2 max-pool."""

    def __init__(self, c_in: int, c_out: int, freq_bins: int, cfg: EncoderConfig, rng, dtype=np.float64):
        super().__init__()
        self.bn1 = BatchNorm2d(c_in, dtype)
        self.conv1 = Conv2d(c_in, c_out, 3, rng, padding=1, dtype=dtype)
        self.bn2 = BatchNorm2d(c_out, dtype)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, padding=1, dtype=dtype)
        self.attention = make_attention(cfg.attention_kind, c_out, freq_bins, cfg, rng, dtype)
        self.shortcut = Conv2d(c_in, c_out, 1, rng, bias=False, dtype=dtype) if c_in != c_out else None

    def forward(self, x):
        h = self.conv1(ag.selu(self.bn1(x)))
        h = self.conv2(ag.selu(self.bn2(h)))
        if self.attention is not None:
            h = self.attention(h)
        skip = self.shortcut(x) if self.shortcut is not None else x
        return ag.max_pool2d(h + skip, 2)


class RawNetEncoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.cfg = cfg
        shapes = cfg.feature_shapes()
        self.sinc = SincFilterbank(cfg.sinc_filters, cfg.sinc_kernel, cfg.sample_rate, cfg.min_low_hz,
                                   cfg.min_band_hz, cfg.sinc_stride, dtype)
        blocks = []
        c_in = 1
        for i, c_out in enumerate(cfg.filters_per_block):
            _, F, T = shapes[i]
            if cfg.attention_kind == "simam" and F * T < 2:
                raise ConfigError(f"block {i}: SimAM needs at least two neurons per channel")
            blocks.append(ResidualBlock(c_in, c_out, F, cfg, rng, dtype))
            c_in = c_out
        self.blocks = blocks
        self.gru = GRU(c_in, cfg.gru_hidden, rng, dtype)
        self.fc = Linear(cfg.gru_hidden, cfg.embed_dim, rng, dtype=dtype)

    def encode(self, wave) -> Tensor:
        wave = ag.as_tensor(wave)
        if wave.shape[-1] != self.cfg.segment_len:
            raise ShapeError(f"expected segments of {self.cfg.segment_len} samples, got {wave.shape[-1]}")
        x = sinc_forward(pre_emphasize(wave, self.cfg.pre_emphasis), self.sinc)
        if self.cfg.sinc_abs:
            x = ag.absolute(x)
        if self.cfg.sinc_pool > 1:
            x = ag.max_pool2d(x, (1, self.cfg.sinc_pool))
        unbatched = x.ndim == 3
        if unbatched:
            x = ag.reshape(x, (1,) + x.shape)
        for block in self.blocks:
            x = block(x)
        return ag.reshape(x, x.shape[1:]) if unbatched else x

    def embed(self, fmap) -> Tensor:
        fmap = ag.as_tensor(fmap)
        unbatched = fmap.ndim == 3
        if unbatched:
            fmap = ag.reshape(fmap, (1,) + fmap.shape)
        B, C, F, T = fmap.shape
        pooled = ag.adaptive_avg_pool(fmap, 1, axis=2)  # B x C x 1 x T
        seq = ag.transpose(ag.reshape(pooled, (B, C, T)), (0, 2, 1))
        states = self.gru(seq)
        last = ag.getitem(states, (slice(None), T - 1))
        out = self.fc(last)
        return ag.reshape(out, out.shape[1:]) if unbatched else out

    def forward(self, wave) -> Tensor:
        return self.embed(self.encode(wave))


def encode(wave, cfg: EncoderConfig, params: RawNetEncoder) -> Tensor:
    if params.cfg != cfg:
        raise ConfigError("encoder parameters were built for a different configuration")
    return params.encode(wave)


def embed(fmap, params: RawNetEncoder) -> Tensor:
    return params.embed(fmap)
