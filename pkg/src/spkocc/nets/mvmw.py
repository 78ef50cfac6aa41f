from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn as nn

from .unet import UNet, UNetConfig


class BranchOutputs(NamedTuple):
    i_center: torch.Tensor
    i_minus: torch.Tensor
    i_plus: torch.Tensor


class MVMW(nn.Module):
    """Three structurally identical, independently parameterized U-Nets, one per spike window."""

    def __init__(self, config: UNetConfig = UNetConfig()):
        super().__init__()
        self.config = config
        self.branch_c = UNet(config)
        self.branch_minus = UNet(config)
        self.branch_plus = UNet(config)

    def forward(self, v_minus: torch.Tensor, v_center: torch.Tensor, v_plus: torch.Tensor) -> BranchOutputs:
        return BranchOutputs(
            i_center=self.branch_c(v_center),
            i_minus=self.branch_minus(v_minus),
            i_plus=self.branch_plus(v_plus),
        )
