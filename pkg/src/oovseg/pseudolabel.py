"""Foreground masks for moving sound-making vehicles and masked teacher targets."""

from __future__ import annotations

import numpy as np

from .scene import VEHICLE_CLASSES


def estimate_background(frames) -> np.ndarray:
    """Per-pixel temporal median across frames; needs at least 3 frames."""
    if len(frames) < 3:
        raise ValueError(f"background estimation needs >= 3 frames, got {len(frames)}")
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise ValueError(f"frames disagree on shape: {shapes}")
    stack = np.stack(frames)
    med = np.median(stack, axis=0)
    if np.issubdtype(stack.dtype, np.integer):
        med = np.round(med).astype(stack.dtype)
    return med


def foreground_mask(seg: np.ndarray, seg_bg: np.ndarray) -> np.ndarray:
    """1 where seg is a vehicle class that differs from the background label."""
    if seg.shape != seg_bg.shape:
        raise ValueError(f"shape mismatch: seg {seg.shape} vs seg_bg {seg_bg.shape}")
    vehicle = np.isin(seg, VEHICLE_CLASSES)
    return (vehicle & (seg != seg_bg)).astype(np.uint8)


def mask_teacher_logits(mask: np.ndarray, logits: np.ndarray) -> np.ndarray:
    """Elementwise product of H x W x K logits with the mask broadcast over K."""
    if mask.shape != logits.shape[:2]:
        raise ValueError(f"shape mismatch: mask {mask.shape} vs logits {logits.shape}")
    return logits * mask[..., None]
