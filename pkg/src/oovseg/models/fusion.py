"""Audio-visual feature fusion: residual dot-product attention over concatenated maps."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class FusionAttention(nn.Module):
    """Z = F_av + mu((Q K^T / N) V) with 1x1 query/key/value/output maps.

    N is the number of spatial positions; there is deliberately no softmax,
    the raw dot products are divided by N.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.omega = nn.Conv2d(channels, channels, 1)
        self.phi = nn.Conv2d(channels, channels, 1)
        self.g = nn.Conv2d(channels, channels, 1)
        self.mu = nn.Conv2d(channels, channels, 1)

    def forward(self, f_av: torch.Tensor) -> torch.Tensor:
        b, c, h, w = f_av.shape
        n = h * w
        q = self.omega(f_av).reshape(b, c, n).transpose(1, 2)  # B x N x C
        k = self.phi(f_av).reshape(b, c, n).transpose(1, 2)
        v = self.g(f_av).reshape(b, c, n).transpose(1, 2)
        attended = (q @ k.transpose(1, 2) / n) @ v  # B x N x C
        attended = attended.transpose(1, 2).reshape(b, c, h, w)
        return f_av + self.mu(attended)


class AudioVisualFusion(nn.Module):
    """Align the audio map to the visual grid, concatenate, optionally attend."""

    def __init__(self, visual_channels: int, audio_channels: int, use_attention: bool = True):
        super().__init__()
        self.out_channels = visual_channels + audio_channels
        self.use_attention = use_attention
        self.attention = FusionAttention(self.out_channels) if use_attention else None

    def forward(self, f_vs: torch.Tensor, f_as: torch.Tensor) -> torch.Tensor:
        aligned = F.interpolate(f_as, size=f_vs.shape[-2:], mode="bilinear",
                                align_corners=False)
        f_av = torch.cat([f_vs, aligned], dim=1)
        if self.attention is None:
            return f_av
        return self.attention(f_av)
