from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 15
    base_width: int = 24
    num_scales: int = 4
    multiplier: int = 2

    def __post_init__(self):
        if self.num_scales < 2:
            raise ValueError("num_scales must be >= 2")
        if self.in_channels < 1 or self.base_width < 1 or self.multiplier < 1:
            raise ValueError("channel settings must be positive")

    @property
    def widths(self) -> list[int]:
        return [self.base_width * self.multiplier ** i for i in range(self.num_scales)]

    @property
    def divisor(self) -> int:
        return 2 ** (self.num_scales - 1)


def conv3x3(cin: int, cout: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1)


def conv3x3_params(cin: int, cout: int) -> int:
    return 9 * cin * cout + cout


class ConvBlock(nn.Sequential):
    def __init__(self, cin: int, cout: int):
        super().__init__(conv3x3(cin, cout), nn.GELU(), conv3x3(cout, cout), nn.GELU())


class Up(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv = conv3x3(cin, cout)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class UNet(nn.Module):
    """Encoder-decoder with concatenation skips mapping spike voxels to one image in [0, 1]."""

    def __init__(self, config: UNetConfig = UNetConfig()):
        super().__init__()
        self.config = config
        w = config.widths
        self.enc = nn.ModuleList([ConvBlock(config.in_channels, w[0])])
        self.down = nn.ModuleList()
        for i in range(1, config.num_scales):
            self.down.append(nn.Sequential(conv3x3(w[i - 1], w[i], stride=2), nn.GELU()))
            self.enc.append(ConvBlock(w[i], w[i]))
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for i in reversed(range(config.num_scales - 1)):
            self.up.append(Up(w[i + 1], w[i]))
            self.dec.append(ConvBlock(2 * w[i], w[i]))
        self.head = nn.Conv2d(w[0], 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ValueError(f"expected (N, {cfg.in_channels}, H, W) input, got {tuple(x.shape)}")
        if x.shape[-2] % cfg.divisor or x.shape[-1] % cfg.divisor:
            raise ValueError(f"spatial size {tuple(x.shape[-2:])} not divisible by {cfg.divisor}")
        skips = []
        h = self.enc[0](x)
        for down, enc in zip(self.down, self.enc[1:]):
            skips.append(h)
            h = enc(down(h))
        for up, dec in zip(self.up, self.dec):
            h = dec(torch.cat([up(h), skips.pop()], dim=1))
        return torch.sigmoid(self.head(h))


def unet_param_count(config: UNetConfig) -> int:
    w = config.widths
    n = conv3x3_params(config.in_channels, w[0]) + conv3x3_params(w[0], w[0])
    for i in range(1, config.num_scales):
        n += conv3x3_params(w[i - 1], w[i])
        n += 2 * conv3x3_params(w[i], w[i])
        # decoder at scale i-1: upsample conv + block over the concatenated skip
        n += conv3x3_params(w[i], w[i - 1])
        n += conv3x3_params(2 * w[i - 1], w[i - 1]) + conv3x3_params(w[i - 1], w[i - 1])
    return n + w[0] + 1
