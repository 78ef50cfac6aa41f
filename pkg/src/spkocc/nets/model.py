"""Full SpkOccNet, the ablation variants, exact parameter counting and checkpoints."""
from __future__ import annotations

import hashlib
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import torch
import torch.nn as nn
import torch.nn.functional as F

from .msca import MSCA, FusionHead, ShallowFeatures
from .mvmw import MVMW, BranchOutputs
from .unet import UNet, UNetConfig, conv3x3_params, unet_param_count

MODEL_KINDS = ("single_sc", "single_all", "mvmw", "spkoccnet")

ABLATION_ROWS = {
    "single_sc": ("Single U-Net", "S_c"),
    "single_all": ("Single U-Net", "S_c, S_-, S_+"),
    "mvmw": ("+ MVMW", "S_c, S_-, S_+"),
    "spkoccnet": ("+ MVMW + MSCA", "S_c, S_-, S_+"),
}


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "spkoccnet"
    bins: int = 15
    base_width: int = 24
    num_scales: int = 4
    multiplier: int = 2
    channels: int = 48
    num_heads: int = 6
    window_size: int = 8
    mstb_depth: int = 2
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if self.kind == "spkoccnet":
            if self.channels % self.num_heads or (4 * self.channels) % self.num_heads:
                raise ValueError(f"{self.num_heads} heads must divide channels ({self.channels}) and 4*channels")

    def unet_config(self, in_channels: int | None = None) -> UNetConfig:
        return UNetConfig(in_channels=self.bins if in_channels is None else in_channels,
                          base_width=self.base_width, num_scales=self.num_scales, multiplier=self.multiplier)

    @property
    def divisor(self) -> int:
        d = 2 ** (self.num_scales - 1)
        if self.kind == "spkoccnet":
            d = d * self.window_size // math.gcd(d, self.window_size)
        return d

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        return cls(**d)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _pad_inputs(divisor: int, *xs: torch.Tensor):
    h, w = xs[0].shape[-2:]
    ph, pw = (-h) % divisor, (-w) % divisor
    if not (ph or pw):
        return xs, (h, w)
    mode = "reflect" if ph < h and pw < w else "replicate"
    return tuple(F.pad(x, (0, pw, 0, ph), mode=mode) for x in xs), (h, w)


def _crop(out: dict[str, torch.Tensor], size) -> dict[str, torch.Tensor]:
    h, w = size
    return {k: v[..., :h, :w] for k, v in out.items()}


class SingleUNet(nn.Module):
    """Ablation rows (a)/(b): one U-Net over the center window or over all three windows."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.all_windows = config.kind == "single_all"
        self.unet = UNet(config.unet_config(3 * config.bins if self.all_windows else config.bins))

    def forward(self, v_minus, v_center, v_plus) -> dict[str, torch.Tensor]:
        (v_minus, v_center, v_plus), size = _pad_inputs(self.config.divisor, v_minus, v_center, v_plus)
        x = torch.cat([v_center, v_minus, v_plus], dim=1) if self.all_windows else v_center
        return _crop({"i_hat": self.unet(x)}, size)


class MVMWOnly(nn.Module):
    """Ablation row (c): three branches, prediction is the mean of the branch images."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.mvmw = MVMW(config.unet_config())

    def forward(self, v_minus, v_center, v_plus) -> dict[str, torch.Tensor]:
        (v_minus, v_center, v_plus), size = _pad_inputs(self.config.divisor, v_minus, v_center, v_plus)
        b = self.mvmw(v_minus, v_center, v_plus)
        i_hat = (b.i_center + b.i_minus + b.i_plus) / 3.0
        return _crop({"i_hat": i_hat, "i_center": b.i_center, "i_minus": b.i_minus, "i_plus": b.i_plus}, size)


class SpkOccNet(nn.Module):
    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = config
        self.mvmw = MVMW(config.unet_config())
        self.shallow = ShallowFeatures(config.channels, config.bins)
        self.msca = MSCA(config.channels, config.num_heads, config.window_size, config.mstb_depth, config.mlp_ratio)
        self.head = FusionHead(config.channels)

    def forward(self, v_minus, v_center, v_plus) -> dict[str, torch.Tensor]:
        (v_minus, v_center, v_plus), size = _pad_inputs(self.config.divisor, v_minus, v_center, v_plus)
        b: BranchOutputs = self.mvmw(v_minus, v_center, v_plus)
        bundle = self.shallow(b, v_center)
        i_hat = self.head(self.msca(bundle))
        return _crop({"i_hat": i_hat, "i_center": b.i_center, "i_minus": b.i_minus, "i_plus": b.i_plus}, size)


def build_model(config: ModelConfig) -> nn.Module:
    if config.kind in ("single_sc", "single_all"):
        return SingleUNet(config)
    if config.kind == "mvmw":
        return MVMWOnly(config)
    return SpkOccNet(config)


# -- parameter counting ---------------------------------------------------------------

def residual_block_params(cin: int, cout: int) -> int:
    n = conv3x3_params(cin, cout) + conv3x3_params(cout, cout)
    if cin != cout:
        n += cin * cout + cout
    return n


def mstb_params(dim: int, num_heads: int, window_size: int, depth: int, mlp_ratio: float) -> int:
    hidden = int(dim * mlp_ratio)
    per_stream = (
        2 * 2 * dim  # two LayerNorms
        + dim * 3 * dim + 3 * dim  # qkv
        + dim * dim + dim  # output projection
        + dim * hidden + hidden + hidden * dim + dim  # MLP
    )
    per_block = 2 * per_stream + (2 * window_size - 1) ** 2 * num_heads
    return depth * per_block


def mdta_params(dim: int, num_heads: int) -> int:
    return num_heads + dim * 3 * dim + 3 * dim * 9 + dim * dim


def count_parameters(config: ModelConfig) -> int:
    """Closed-form parameter count of ``build_model(config)``."""
    if config.kind == "single_sc":
        return unet_param_count(config.unet_config())
    if config.kind == "single_all":
        return unet_param_count(config.unet_config(3 * config.bins))
    n = 3 * unet_param_count(config.unet_config())
    if config.kind == "mvmw":
        return n
    c = config.channels
    n += 3 * conv3x3_params(1, c) + residual_block_params(config.bins, c)
    n += 2 * mstb_params(c, config.num_heads, config.window_size, config.mstb_depth, config.mlp_ratio)
    n += mdta_params(4 * c, config.num_heads)
    n += conv3x3_params(8 * c, c) + residual_block_params(c, c) + conv3x3_params(c, 1)
    return n


def module_param_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


# -- checkpoints ------------------------------------------------------------------------

CHECKPOINT_FORMAT = "spkocc-checkpoint"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(model: nn.Module, path: str | os.PathLike, extra: dict[str, Any] | None = None) -> None:
    config: ModelConfig = model.config
    params = {k: v.detach().cpu().clone() for k, v in model.state_dict().items()}
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": config.to_dict(),
        "fingerprint": config.fingerprint(),
        "shapes": {k: list(v.shape) for k, v in params.items()},
        "params": params,
        "extra": extra or {},
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike, expected: ModelConfig | None = None) -> tuple[nn.Module, dict[str, Any]]:
    """Rebuild the model stored at ``path``; refuses configs whose fingerprint does not match."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises a zoo of unpickling errors
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    try:
        config = ModelConfig.from_dict(payload["config"])
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid model config in {path}: {exc}") from exc
    if config.fingerprint() != payload.get("fingerprint"):
        raise CheckpointError(f"config fingerprint mismatch in {path}")
    if expected is not None and expected.fingerprint() != config.fingerprint():
        raise CheckpointError(
            f"checkpoint fingerprint {config.fingerprint()} does not match expected {expected.fingerprint()}"
        )
    model = build_model(config)
    params = payload["params"]
    own = model.state_dict()
    if set(params) != set(own):
        raise CheckpointError(f"parameter names in {path} do not match the {config.kind} architecture")
    for name, tensor in params.items():
        if list(tensor.shape) != list(own[name].shape) or payload["shapes"].get(name) != list(tensor.shape):
            raise CheckpointError(f"shape mismatch for {name}")
    model.load_state_dict(params)
    return model, payload.get("extra", {})
