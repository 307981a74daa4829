"""Shared conv building blocks."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


def _norm(channels: int) -> nn.Module:
    groups = next(g for g in (8, 4, 2, 1) if channels % g == 0)
    return nn.GroupNorm(groups, channels)


class ConvBlock(nn.Module):
    def __init__(self, cin, cout, stride=1, norm=True, bias=True):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=bias)
        self.norm = _norm(cout) if norm else nn.Identity()
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class ResidualBlock(nn.Module):
    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1)
        self.n1 = _norm(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.n2 = _norm(cout)
        self.short = (
            nn.Identity()
            if stride == 1 and cin == cout
            else nn.Conv2d(cin, cout, 1, stride=stride)
        )

    def forward(self, x):
        h = F.relu(self.n1(self.conv1(x)))
        h = self.n2(self.conv2(h))
        return F.relu(h + self.short(x))


class DilatedContextBlock(nn.Module):
    """Parallel dilated 3x3 branches plus a 1x1 branch, fused by a 1x1 conv."""

    def __init__(self, cin, cout, dilations=(1, 2, 4)):
        super().__init__()
        self.branches = nn.ModuleList(
            [nn.Conv2d(cin, cout, 1)]
            + [nn.Conv2d(cin, cout, 3, padding=d, dilation=d) for d in dilations]
        )
        self.fuse = nn.Sequential(
            nn.Conv2d(cout * (1 + len(dilations)), cout, 1), _norm(cout), nn.ReLU(inplace=True)
        )

    def forward(self, x):
        return self.fuse(torch.cat([b(x) for b in self.branches], dim=1))


def append_coords(x: torch.Tensor) -> torch.Tensor:
    """Concatenate normalized (-1..1) x/y coordinate channels."""
    b, _, h, w = x.shape
    ys = torch.linspace(-1.0, 1.0, h, dtype=x.dtype, device=x.device)
    xs = torch.linspace(-1.0, 1.0, w, dtype=x.dtype, device=x.device)
    yy, xx = torch.meshgrid(ys, xs, indexing="ij")
    grid = torch.stack([yy, xx]).unsqueeze(0).expand(b, -1, -1, -1)
    return torch.cat([x, grid], dim=1)
