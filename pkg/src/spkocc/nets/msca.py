"""Stage two: shallow features, mutual window attention (MSTB), transposed channel attention (MDTA), fusion head."""
from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .mvmw import BranchOutputs
from .unet import conv3x3


class FeatureBundle(NamedTuple):
    f_c_ref: torch.Tensor
    f_minus_ref: torch.Tensor
    f_plus_ref: torch.Tensor
    f_res: torch.Tensor


class AttnOutputs(NamedTuple):
    f_c_minus: torch.Tensor
    f_minus_c: torch.Tensor
    f_c_plus: torch.Tensor
    f_plus_c: torch.Tensor
    f_mdta: torch.Tensor


class ResidualBlock(nn.Module):
    """Two conv+ReLU layers with an input-to-output skip (1x1 projection when widths differ)."""

    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv1 = conv3x3(cin, cout)
        self.conv2 = conv3x3(cout, cout)
        self.skip = nn.Identity() if cin == cout else nn.Conv2d(cin, cout, 1)

    def forward(self, x):
        return F.relu(self.conv2(F.relu(self.conv1(x)))) + self.skip(x)


class ShallowFeatures(nn.Module):
    def __init__(self, channels: int, bins: int):
        super().__init__()
        self.ref_c = conv3x3(1, channels)
        self.ref_minus = conv3x3(1, channels)
        self.ref_plus = conv3x3(1, channels)
        self.res = ResidualBlock(bins, channels)

    def forward(self, outputs: BranchOutputs, v_center: torch.Tensor) -> FeatureBundle:
        shapes = {tuple(t.shape[-2:]) for t in (*outputs, v_center)}
        if len(shapes) != 1:
            raise ValueError(f"mismatched spatial sizes {sorted(shapes)}")
        return FeatureBundle(
            f_c_ref=self.ref_c(outputs.i_center),
            f_minus_ref=self.ref_minus(outputs.i_minus),
            f_plus_ref=self.ref_plus(outputs.i_plus),
            f_res=self.res(v_center),
        )


# -- window machinery ---------------------------------------------------------------

def window_partition(x: torch.Tensor, ws: int) -> torch.Tensor:
    """(N, H, W, C) -> (N * nW, ws*ws, C), windows in row-major order."""
    n, h, w, c = x.shape
    x = x.view(n, h // ws, ws, w // ws, ws, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, ws * ws, c)


def window_reverse(windows: torch.Tensor, ws: int, h: int, w: int) -> torch.Tensor:
    c = windows.shape[-1]
    n = windows.shape[0] // ((h // ws) * (w // ws))
    x = windows.view(n, h // ws, w // ws, ws, ws, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(n, h, w, c)


def shifted_window_mask(h: int, w: int, ws: int, shift: int, device=None) -> torch.Tensor:
    """Additive (nW, L, L) mask blocking attention across regions wrapped by the cyclic shift."""
    img = torch.zeros(1, h, w, 1, device=device)
    regions = (slice(0, -ws), slice(-ws, -shift), slice(-shift, None))
    label = 0
    for hs in regions:
        for wsl in regions:
            img[:, hs, wsl, :] = label
            label += 1
    labels = window_partition(img, ws).squeeze(-1)
    diff = labels[:, None, :] - labels[:, :, None]
    return diff.masked_fill(diff != 0, -100.0).masked_fill(diff == 0, 0.0)


def relative_position_index(ws: int) -> torch.Tensor:
    coords = torch.stack(torch.meshgrid(torch.arange(ws), torch.arange(ws), indexing="ij")).flatten(1)
    rel = (coords[:, :, None] - coords[:, None, :]).permute(1, 2, 0) + (ws - 1)
    return rel[..., 0] * (2 * ws - 1) + rel[..., 1]


def attention(q, k, v, scale: float, bias=None, mask=None):
    """softmax(q k^T * scale + bias + mask) v over (B, heads, L, d) tensors; returns (out, weights)."""
    logits = (q * scale) @ k.transpose(-2, -1)
    if bias is not None:
        logits = logits + bias
    if mask is not None:
        nw = mask.shape[0]
        b, heads, lq, lk = logits.shape
        logits = (logits.view(b // nw, nw, heads, lq, lk) + mask[None, :, None]).view(b, heads, lq, lk)
    weights = logits.softmax(dim=-1)
    return weights @ v, weights


class WindowMutualAttention(nn.Module):
    """(Shifted) window multi-head mutual attention between two token maps.

    Queries of one map attend to keys/values of the other within each window:
    ``f12 = softmax(Q1 K2^T / sqrt(d)) V2`` and ``f21 = softmax(Q2 K1^T / sqrt(d)) V1``.
    The relative position bias is shared by both directions.
    """

    def __init__(self, dim: int, num_heads: int, window_size: int = 8, shift_size: int = 0):
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"{num_heads} heads do not divide {dim} channels")
        if not 0 <= shift_size < window_size:
            raise ValueError("shift_size must lie in [0, window_size)")
        self.dim = dim
        self.num_heads = num_heads
        self.window_size = window_size
        self.shift_size = shift_size
        self.head_dim = dim // num_heads
        self.scale = self.head_dim ** -0.5
        self.qkv1 = nn.Linear(dim, 3 * dim)
        self.qkv2 = nn.Linear(dim, 3 * dim)
        self.proj1 = nn.Linear(dim, dim)
        self.proj2 = nn.Linear(dim, dim)
        self.relative_position_bias_table = nn.Parameter(torch.zeros((2 * window_size - 1) ** 2, num_heads))
        nn.init.trunc_normal_(self.relative_position_bias_table, std=0.02)
        self.register_buffer("relative_position_index", relative_position_index(window_size), persistent=False)

    def _split_heads(self, qkv: torch.Tensor):
        b, L, _ = qkv.shape
        qkv = qkv.reshape(b, L, 3, self.num_heads, self.head_dim).permute(2, 0, 3, 1, 4)
        return qkv[0], qkv[1], qkv[2]

    def _merge_heads(self, x: torch.Tensor) -> torch.Tensor:
        b, _, L, _ = x.shape
        return x.transpose(1, 2).reshape(b, L, self.dim)

    def forward(self, x1: torch.Tensor, x2: torch.Tensor, return_attn: bool = False):
        """``x1``, ``x2``: (N, H, W, C) token maps of equal shape."""
        if x1.shape != x2.shape:
            raise ValueError(f"mutual attention inputs differ in shape: {tuple(x1.shape)} vs {tuple(x2.shape)}")
        if x1.shape[-1] != self.dim:
            raise ValueError(f"expected {self.dim} channels, got {x1.shape[-1]}")
        n, h, w, c = x1.shape
        ws, shift = self.window_size, self.shift_size
        pad_h, pad_w = (-h) % ws, (-w) % ws
        if pad_h or pad_w:
            x1 = _reflect_pad_nhwc(x1, pad_h, pad_w)
            x2 = _reflect_pad_nhwc(x2, pad_h, pad_w)
        hp, wp = h + pad_h, w + pad_w
        if shift:
            x1 = torch.roll(x1, shifts=(-shift, -shift), dims=(1, 2))
            x2 = torch.roll(x2, shifts=(-shift, -shift), dims=(1, 2))
            mask = shifted_window_mask(hp, wp, ws, shift, device=x1.device).to(x1.dtype)
        else:
            mask = None

        L = ws * ws
        bias = self.relative_position_bias_table[self.relative_position_index.reshape(-1)]
        bias = bias.view(L, L, self.num_heads).permute(2, 0, 1)
        q1, k1, v1 = self._split_heads(self.qkv1(window_partition(x1, ws)))
        q2, k2, v2 = self._split_heads(self.qkv2(window_partition(x2, ws)))
        if return_attn:
            o12, a12 = attention(q1, k2, v2, self.scale, bias, mask)
            o21, a21 = attention(q2, k1, v1, self.scale, bias, mask)
        else:
            # fused kernel; windows folded into the head axis so one (nW*heads, L, L)
            # additive mask (bias + shift mask) broadcasts over the batch
            nw = (hp // ws) * (wp // ws)
            extra = (bias[None] if mask is None else bias[None] + mask[:, None]).expand(nw, -1, -1, -1)
            extra = extra.reshape(1, nw * self.num_heads, L, L)

            def fused(q, k, v):
                fold = (n, nw * self.num_heads, L, self.head_dim)
                out = F.scaled_dot_product_attention(q.reshape(fold), k.reshape(fold), v.reshape(fold),
                                                     attn_mask=extra, scale=self.scale)
                return out.view(n * nw, self.num_heads, L, self.head_dim)

            o12 = fused(q1, k2, v2)
            o21 = fused(q2, k1, v1)
        y1 = window_reverse(self.proj1(self._merge_heads(o12)), ws, hp, wp)
        y2 = window_reverse(self.proj2(self._merge_heads(o21)), ws, hp, wp)
        if shift:
            y1 = torch.roll(y1, shifts=(shift, shift), dims=(1, 2))
            y2 = torch.roll(y2, shifts=(shift, shift), dims=(1, 2))
        y1 = y1[:, :h, :w].contiguous()
        y2 = y2[:, :h, :w].contiguous()
        if return_attn:
            return y1, y2, (a12, a21)
        return y1, y2


def _reflect_pad_nhwc(x: torch.Tensor, pad_h: int, pad_w: int) -> torch.Tensor:
    x = F.pad(x.permute(0, 3, 1, 2), (0, pad_w, 0, pad_h), mode="reflect")
    return x.permute(0, 2, 3, 1)


class Mlp(nn.Sequential):
    def __init__(self, dim: int, hidden: int):
        super().__init__(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))


class MutualSwinBlock(nn.Module):
    """Pre-norm block: mutual attention then per-position MLP, residual on both token streams."""

    def __init__(self, dim: int, num_heads: int, window_size: int = 8, shift_size: int = 0,
                 mlp_ratio: float = 4.0):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1_a = nn.LayerNorm(dim)
        self.norm1_b = nn.LayerNorm(dim)
        self.attn = WindowMutualAttention(dim, num_heads, window_size, shift_size)
        self.norm2_a = nn.LayerNorm(dim)
        self.norm2_b = nn.LayerNorm(dim)
        self.mlp_a = Mlp(dim, hidden)
        self.mlp_b = Mlp(dim, hidden)

    def forward(self, xa: torch.Tensor, xb: torch.Tensor):
        ya, yb = self.attn(self.norm1_a(xa), self.norm1_b(xb))
        xa = xa + ya
        xb = xb + yb
        xa = xa + self.mlp_a(self.norm2_a(xa))
        xb = xb + self.mlp_b(self.norm2_b(xb))
        return xa, xb


class MSTB(nn.Module):
    """Mutual Swin transformer block: alternating unshifted / shifted mutual-attention blocks."""

    def __init__(self, dim: int, num_heads: int = 6, window_size: int = 8, depth: int = 2,
                 mlp_ratio: float = 4.0, shifted: bool = True):
        super().__init__()
        self.blocks = nn.ModuleList([
            MutualSwinBlock(dim, num_heads, window_size,
                            shift_size=(window_size // 2 if shifted and i % 2 == 1 else 0),
                            mlp_ratio=mlp_ratio)
            for i in range(depth)
        ])

    def forward(self, f_c: torch.Tensor, f_aux: torch.Tensor):
        """(N, C, H, W) maps in, ``(f_c_aux, f_aux_c)`` out."""
        a = f_c.permute(0, 2, 3, 1)
        b = f_aux.permute(0, 2, 3, 1)
        for blk in self.blocks:
            a, b = blk(a, b)
        return a.permute(0, 3, 1, 2).contiguous(), b.permute(0, 3, 1, 2).contiguous()


class MDTA(nn.Module):
    """Multi-DConv head transposed attention: per-head channel-by-channel attention."""

    def __init__(self, dim: int, num_heads: int, bias: bool = False):
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"{num_heads} heads do not divide {dim} channels")
        self.num_heads = num_heads
        self.temperature = nn.Parameter(torch.ones(num_heads, 1, 1))
        self.qkv = nn.Conv2d(dim, dim * 3, kernel_size=1, bias=bias)
        self.qkv_dwconv = nn.Conv2d(dim * 3, dim * 3, kernel_size=3, padding=1, groups=dim * 3, bias=bias)
        self.project_out = nn.Conv2d(dim, dim, kernel_size=1, bias=bias)

    def _attend(self, x):
        b, c, h, w = x.shape
        q, k, v = self.qkv_dwconv(self.qkv(x)).chunk(3, dim=1)
        q = F.normalize(q.reshape(b, self.num_heads, -1, h * w), dim=-1)
        k = F.normalize(k.reshape(b, self.num_heads, -1, h * w), dim=-1)
        v = v.reshape(b, self.num_heads, -1, h * w)
        weights = ((q @ k.transpose(-2, -1)) * self.temperature).softmax(dim=-1)
        return (weights @ v).reshape(b, c, h, w), weights

    def attention_maps(self, x: torch.Tensor) -> torch.Tensor:
        return self._attend(x)[1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.project_out(self._attend(x)[0])


class MSCA(nn.Module):
    def __init__(self, channels: int = 48, num_heads: int = 6, window_size: int = 8, depth: int = 2,
                 mlp_ratio: float = 4.0):
        super().__init__()
        self.mstb_minus = MSTB(channels, num_heads, window_size, depth, mlp_ratio)
        self.mstb_plus = MSTB(channels, num_heads, window_size, depth, mlp_ratio)
        self.mdta = MDTA(4 * channels, num_heads)

    def forward(self, bundle: FeatureBundle) -> AttnOutputs:
        f_c_minus, f_minus_c = self.mstb_minus(bundle.f_c_ref, bundle.f_minus_ref)
        f_c_plus, f_plus_c = self.mstb_plus(bundle.f_c_ref, bundle.f_plus_ref)
        f_mdta = self.mdta(torch.cat(list(bundle), dim=1))
        return AttnOutputs(f_c_minus, f_minus_c, f_c_plus, f_plus_c, f_mdta)


class FusionHead(nn.Module):
    """Fusion conv over the concatenated attention outputs, a residual block, and a prediction conv."""

    def __init__(self, channels: int = 48):
        super().__init__()
        self.fuse = conv3x3(8 * channels, channels)
        self.res = ResidualBlock(channels, channels)
        self.pred = conv3x3(channels, 1)

    def forward(self, attn: AttnOutputs) -> torch.Tensor:
        x = self.fuse(torch.cat(list(attn), dim=1))
        return torch.sigmoid(self.pred(self.res(x)))
