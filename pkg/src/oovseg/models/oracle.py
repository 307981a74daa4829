"""Oracle teachers: ground-truth logits and label-derived features.

These stand in for trained teachers so the distillation plumbing can be
tested independently of teacher quality.  Logits are one-hot ground truth
scaled by a confidence constant; encoder features are a fixed seeded random
projection of the label map pooled to the teacher's feature grid.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import ModelConfig
from .nets import ENCODER_STRIDE, stride16_hw


def _label_projection_feature(gt, k_classes, channels, grid_hw, seed):
    onehot = F.one_hot(gt.long(), k_classes).permute(0, 3, 1, 2).float()
    pooled = F.adaptive_avg_pool2d(onehot, grid_hw)
    gen = torch.Generator().manual_seed(seed)
    proj = torch.randn(channels, k_classes, generator=gen) / k_classes**0.5
    return torch.einsum("ck,bkhw->bchw", proj, pooled)


class OracleVisualTeacher(nn.Module):
    def __init__(self, cfg: ModelConfig, confidence: float = 6.0, seed: int = 1234):
        super().__init__()
        self.cfg = cfg
        self.confidence = confidence
        self.seed = seed
        self.grid_hw = stride16_hw(cfg.pano_hw)

    def infer(self, pano, gt):
        if gt is None:
            raise ValueError("oracle teacher needs ground-truth labels")
        logits = self.confidence * F.one_hot(gt.long(), self.cfg.k_classes) \
            .permute(0, 3, 1, 2).float()
        feat = _label_projection_feature(gt, self.cfg.k_classes, self.cfg.feat_channels,
                                         self.grid_hw, self.seed)
        return feat, logits


class OracleAudioTeacher(nn.Module):
    def __init__(self, cfg: ModelConfig, confidence: float = 6.0, seed: int = 4321):
        super().__init__()
        self.cfg = cfg
        self.confidence = confidence
        self.seed = seed
        self.feat_hw = stride16_hw(cfg.pano_hw)

    def infer(self, sp8, gt):
        if gt is None:
            raise ValueError("oracle teacher needs ground-truth labels")
        logits = self.confidence * F.one_hot(gt.long(), self.cfg.k_classes) \
            .permute(0, 3, 1, 2).float()
        feat = _label_projection_feature(gt, self.cfg.k_classes, self.cfg.audio_channels,
                                         self.feat_hw, self.seed)
        return feat, logits
