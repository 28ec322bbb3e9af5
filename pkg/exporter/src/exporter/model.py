"""Reference implementation of the hybrid encoder, in torch.

The module tree reproduces the pretrained checkpoints' layout exactly:
patch_embed.seq.{0,2}, layers.N.blocks.M.conv{1,2,3} / .attn / .mlp /
.local_conv, layers.N.downsample.conv{1,2,3}, neck.{0..3}. Attribute
names here are load-bearing; renaming any of them breaks state_dict
key matching in the converter.

Only inference is supported. The forward pass exists to generate
reference feature maps for parity fixtures, not to train.
"""

from __future__ import annotations

import itertools

import torch
import torch.nn.functional as F
from torch import nn

from .architecture import Architecture


class ConvBN(nn.Sequential):
    """Conv2d (no bias) followed by BatchNorm2d, as submodules `c` and `bn`."""

    def __init__(self, in_ch, out_ch, ks=1, stride=1, pad=0, groups=1, eps=1e-5):
        super().__init__()
        self.add_module("c", nn.Conv2d(in_ch, out_ch, ks, stride, pad, groups=groups, bias=False))
        self.add_module("bn", nn.BatchNorm2d(out_ch, eps=eps))


class PatchEmbed(nn.Module):
    # the GELU at seq index 1 keeps the conv indices at 0 and 2
    def __init__(self, dim: int, eps: float):
        super().__init__()
        half = dim // 2
        self.seq = nn.Sequential(
            ConvBN(3, half, 3, 2, 1, eps=eps),
            nn.GELU(),
            ConvBN(half, dim, 3, 2, 1, eps=eps),
        )

    def forward(self, x):
        return self.seq(x)


class MBConv(nn.Module):
    """Inverted residual block; the activation comes after the skip add."""

    def __init__(self, dim: int, expand_ratio: float, eps: float):
        super().__init__()
        hidden = int(dim * expand_ratio)
        self.conv1 = ConvBN(dim, hidden, 1, eps=eps)
        self.act1 = nn.GELU()
        self.conv2 = ConvBN(hidden, hidden, 3, 1, 1, groups=hidden, eps=eps)
        self.act2 = nn.GELU()
        self.conv3 = ConvBN(hidden, dim, 1, eps=eps)
        self.act3 = nn.GELU()

    def forward(self, x):
        shortcut = x
        x = self.act1(self.conv1(x))
        x = self.act2(self.conv2(x))
        x = self.conv3(x)
        return self.act3(x + shortcut)


class PatchMerging(nn.Module):
    """Between-stage transition; accepts tokens (B, L, C) or a map (B, C, H, W)."""

    def __init__(self, resolution: int, dim: int, out_dim: int, stride: int, eps: float):
        super().__init__()
        self.input_resolution = resolution
        self.conv1 = ConvBN(dim, out_dim, 1, eps=eps)
        self.act = nn.GELU()
        self.conv2 = ConvBN(out_dim, out_dim, 3, stride, 1, groups=out_dim, eps=eps)
        self.conv3 = ConvBN(out_dim, out_dim, 1, eps=eps)

    def forward(self, x):
        if x.ndim == 3:
            b = x.shape[0]
            r = self.input_resolution
            x = x.view(b, r, r, -1).permute(0, 3, 1, 2)
        x = self.act(self.conv1(x))
        x = self.act(self.conv2(x))
        x = self.conv3(x)
        return x.flatten(2).transpose(1, 2)


class Attention(nn.Module):
    """Windowed multi-head attention with a learned relative-position bias.

    The bias table has one column per distinct absolute offset pair
    (|dr|, |dc|); for a square window that is window**2 columns, and the
    buffer `attention_bias_idxs` maps every query/key pair to its column.
    """

    def __init__(self, dim: int, heads: int, window: int, eps: float):
        super().__init__()
        key_dim = dim // heads
        self.num_heads = heads
        self.key_dim = key_dim
        self.scale = key_dim**-0.5
        self.norm = nn.LayerNorm(dim, eps=eps)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

        points = list(itertools.product(range(window), range(window)))
        offsets: dict[tuple[int, int], int] = {}
        idxs = []
        for p1 in points:
            for p2 in points:
                off = (abs(p1[0] - p2[0]), abs(p1[1] - p2[1]))
                if off not in offsets:
                    offsets[off] = len(offsets)
                idxs.append(offsets[off])
        n = len(points)
        self.attention_biases = nn.Parameter(torch.zeros(heads, len(offsets)))
        self.register_buffer(
            "attention_bias_idxs", torch.LongTensor(idxs).view(n, n), persistent=False
        )

    def forward(self, x):
        b, n, _ = x.shape
        x = self.norm(x)
        qkv = self.qkv(x)
        # per-head rows laid out [q | k | v]
        q, k, v = qkv.view(b, n, self.num_heads, -1).split([self.key_dim] * 3, dim=3)
        q = q.permute(0, 2, 1, 3)
        k = k.permute(0, 2, 1, 3)
        v = v.permute(0, 2, 1, 3)
        attn = (q @ k.transpose(-2, -1)) * self.scale + self.attention_biases[:, self.attention_bias_idxs]
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, -1)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int, eps: float):
        super().__init__()
        self.norm = nn.LayerNorm(dim, eps=eps)
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(self.norm(x))))


class AttentionBlock(nn.Module):
    """Window attention + depthwise local conv + MLP, on (B, L, C) tokens."""

    def __init__(self, dim, resolution, heads, window, mlp_ratio, ln_eps, bn_eps):
        super().__init__()
        self.input_resolution = resolution
        self.window_size = window
        self.attn = Attention(dim, heads, window, ln_eps)
        self.local_conv = ConvBN(dim, dim, 3, 1, 1, groups=dim, eps=bn_eps)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), ln_eps)

    def forward(self, x):
        b, length, c = x.shape
        r = self.input_resolution
        w = self.window_size
        res_x = x
        if r == w:
            x = self.attn(x)
        else:
            # pad bottom/right to a window multiple, attend, crop back
            x = x.view(b, r, r, c)
            pad = (w - r % w) % w
            if pad:
                x = F.pad(x, (0, 0, 0, pad, 0, pad))
            p = r + pad
            nw = p // w
            x = x.view(b, nw, w, nw, w, c).transpose(2, 3).reshape(b * nw * nw, w * w, c)
            x = self.attn(x)
            x = x.view(b, nw, nw, w, w, c).transpose(2, 3).reshape(b, p, p, c)
            if pad:
                x = x[:, :r, :r].contiguous()
            x = x.view(b, length, c)
        x = res_x + x
        x = x.transpose(1, 2).reshape(b, c, r, r)
        x = self.local_conv(x)
        x = x.view(b, c, length).transpose(1, 2)
        return x + self.mlp(x)


class Stage(nn.Module):
    # .blocks and .downsample are part of the checkpoint key contract
    def __init__(self, blocks, downsample=None):
        super().__init__()
        self.blocks = nn.ModuleList(blocks)
        self.downsample = downsample

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        if self.downsample is not None:
            x = self.downsample(x)
        return x


class LayerNorm2d(nn.Module):
    """Channel layer norm over (B, C, H, W), matching the neck checkpoints."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x):
        u = x.mean(1, keepdim=True)
        s = (x - u).pow(2).mean(1, keepdim=True)
        x = (x - u) / torch.sqrt(s + self.eps)
        return self.weight[:, None, None] * x + self.bias[:, None, None]


class ImageEncoder(nn.Module):
    """The full encoder: stem, staged trunk, projection neck."""

    def __init__(self, arch: Architecture):
        super().__init__()
        self.arch = arch
        dims = [s.dim for s in arch.stages]
        resolutions = arch.stage_resolutions()
        self.patch_embed = PatchEmbed(dims[0], arch.bn_epsilon)
        stages = []
        for i, spec in enumerate(arch.stages):
            if spec.kind == "conv":
                blocks = [
                    MBConv(spec.dim, spec.expand_ratio, arch.bn_epsilon)
                    for _ in range(spec.blocks)
                ]
            else:
                blocks = [
                    AttentionBlock(
                        spec.dim,
                        resolutions[i],
                        spec.heads,
                        spec.window,
                        spec.mlp_ratio,
                        arch.ln_epsilon,
                        arch.bn_epsilon,
                    )
                    for _ in range(spec.blocks)
                ]
            down = None
            if i < len(arch.stages) - 1:
                down = PatchMerging(
                    resolutions[i],
                    spec.dim,
                    arch.stages[i + 1].dim,
                    arch.downsample_strides[i],
                    arch.bn_epsilon,
                )
            stages.append(Stage(blocks, down))
        self.layers = nn.ModuleList(stages)
        out = arch.output_channels
        self.neck = nn.Sequential(
            nn.Conv2d(dims[-1], out, 1, bias=False),
            LayerNorm2d(out, arch.neck_epsilon),
            nn.Conv2d(out, out, 3, padding=1, bias=False),
            LayerNorm2d(out, arch.neck_epsilon),
        )

    def forward(self, x):
        x = self.patch_embed(x)
        for layer in self.layers:
            x = layer(x)
        b = x.shape[0]
        g = self.arch.grid
        x = x.view(b, g, g, -1).permute(0, 3, 1, 2)
        return self.neck(x)
