"""1D U-net for lead reconstruction.

Encoder: ``depth`` conv-blocks each followed by 2x max-pooling, widths
f, 2f, ..., f*2^(depth-1). Bottleneck conv-block at f*2^depth. Decoder mirrors
the encoder: a stride-2 transposed convolution halves the channels, the skip
tensor is concatenated, and a conv-block brings the width back down. A 1x1
convolution projects to the output leads with no activation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from ecgrecon.errors import ConfigError, ShapeError


@dataclass(frozen=True)
class UNetConfig:
    ch_in: int
    ch_out: int
    base_width: int = 64
    depth: int = 4
    kernel_size: int = 3
    padding: int = 1
    stride: int = 1
    pool_size: int = 2
    up_kernel: int = 2
    up_stride: int = 2
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        for name in ("ch_in", "ch_out", "base_width", "depth", "kernel_size", "pool_size"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.stride != 1 or self.kernel_size % 2 == 0 or self.padding != self.kernel_size // 2:
            raise ConfigError("conv-blocks must preserve length: odd kernel, stride 1, 'same' padding")
        if self.pool_size < 2 or self.up_kernel != self.pool_size or self.up_stride != self.pool_size:
            raise ConfigError("upsampling kernel/stride must equal the pooling factor (>= 2)")

    @property
    def encoder_widths(self) -> list[int]:
        return [self.base_width * 2**k for k in range(self.depth)]

    @property
    def bottleneck_width(self) -> int:
        return self.base_width * 2**self.depth

    @property
    def length_multiple(self) -> int:
        return self.pool_size**self.depth

    def to_dict(self) -> dict:
        return asdict(self)


class ConvBlock(nn.Sequential):
    """Two (conv -> batch norm -> ReLU) layers; the first changes the width."""

    def __init__(self, in_channels: int, out_channels: int, cfg: UNetConfig):
        layers = []
        for c_in in (in_channels, out_channels):
            layers += [
                nn.Conv1d(c_in, out_channels, cfg.kernel_size, stride=cfg.stride,
                          padding=cfg.padding, bias=True),
                nn.BatchNorm1d(out_channels, eps=cfg.bn_eps, momentum=cfg.bn_momentum),
                nn.ReLU(inplace=True),
            ]
        super().__init__(*layers)
        self.in_channels = in_channels
        self.out_channels = out_channels


class UNet1D(nn.Module):
    def __init__(self, config: UNetConfig):
        super().__init__()
        self.config = config
        widths = config.encoder_widths
        self.encoders = nn.ModuleList()
        prev = config.ch_in
        for w in widths:
            self.encoders.append(ConvBlock(prev, w, config))
            prev = w
        self.pool = nn.MaxPool1d(config.pool_size, stride=config.pool_size)
        self.bottleneck = ConvBlock(prev, config.bottleneck_width, config)
        prev = config.bottleneck_width
        self.upsamplers = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for w in reversed(widths):
            self.upsamplers.append(
                nn.ConvTranspose1d(prev, w, config.up_kernel, stride=config.up_stride)
            )
            self.decoders.append(ConvBlock(2 * w, w, config))
            prev = w
        self.head = nn.Conv1d(prev, config.ch_out, kernel_size=1)

    def check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 3:
            raise ShapeError(f"expected (batch, channels, length), got {tuple(x.shape)}")
        if x.shape[0] < 1:
            raise ShapeError("empty batch")
        if x.shape[1] != self.config.ch_in:
            raise ShapeError(f"expected {self.config.ch_in} input channels, got {x.shape[1]}")
        m = self.config.length_multiple
        if x.shape[2] == 0 or x.shape[2] % m:
            raise ShapeError(f"length {x.shape[2]} is not a positive multiple of {m}")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        skips = []
        for enc in self.encoders:
            x = enc(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for up, dec, skip in zip(self.upsamplers, self.decoders, reversed(skips)):
            x = up(x)
            x = dec(torch.cat([x, skip], dim=1))
        return self.head(x)


class Standardized(nn.Module):
    """Wraps a model with fixed per-lead input/output affine standardization.

    The wrapped model sees (x - in_mean) / in_std and its output is mapped back
    to millivolts, so callers always work in mV.
    """

    def __init__(self, inner: UNet1D):
        super().__init__()
        self.inner = inner
        self.config = inner.config
        self.register_buffer("in_mean", torch.zeros(1, inner.config.ch_in, 1))
        self.register_buffer("in_std", torch.ones(1, inner.config.ch_in, 1))
        self.register_buffer("out_mean", torch.zeros(1, inner.config.ch_out, 1))
        self.register_buffer("out_std", torch.ones(1, inner.config.ch_out, 1))

    def set_stats(self, x: np.ndarray, y: np.ndarray) -> None:
        """Fit per-channel mean/std from arrays shaped (n, ch, L)."""
        for name, arr in (("in", x), ("out", y)):
            mean = arr.mean(axis=(0, 2), dtype=np.float64)
            std = arr.std(axis=(0, 2), dtype=np.float64)
            std = np.where(std < 1e-6, 1.0, std)
            getattr(self, f"{name}_mean").copy_(torch.as_tensor(mean).view(1, -1, 1))
            getattr(self, f"{name}_std").copy_(torch.as_tensor(std).view(1, -1, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = self.inner((x - self.in_mean) / self.in_std)
        return z * self.out_std + self.out_mean


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, (nn.Conv1d, nn.ConvTranspose1d)):
        nn.init.kaiming_normal_(module.weight, mode="fan_in", nonlinearity="relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.BatchNorm1d):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


def build_model(config: UNetConfig, seed: int | None = None, standardize: bool = False) -> nn.Module:
    """Construct the U-net; with ``seed`` the initial weights are reproducible."""
    if not isinstance(config, UNetConfig):
        raise ConfigError(f"expected UNetConfig, got {type(config).__name__}")
    with torch.random.fork_rng(devices=[]):
        if seed is not None:
            torch.manual_seed(seed)
        model = UNet1D(config)
        model.apply(_init_weights)
    return Standardized(model) if standardize else model


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


@torch.no_grad()
def reconstruct(model: nn.Module, x, batch_size: int = 64) -> np.ndarray:
    """Inference-mode forward pass over an array (n, ch_in, L) -> (n, ch_out, L)."""
    was_training = model.training
    model.eval()
    try:
        x = np.asarray(x)
        if x.ndim == 2:
            x = x[None]
        dtype = next(model.parameters()).dtype
        outs = []
        for start in range(0, x.shape[0], batch_size):
            xb = torch.as_tensor(np.ascontiguousarray(x[start:start + batch_size]), dtype=dtype)
            outs.append(model(xb).double().numpy())
        if not outs:
            return np.empty((0, model.config.ch_out, x.shape[-1]))
        return np.concatenate(outs)
    finally:
        model.train(was_training)


def forward(model: nn.Module, x) -> np.ndarray:
    return reconstruct(model, x)
