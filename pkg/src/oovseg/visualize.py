"""Composite inspection figures: background, outlined input, labels, predictions."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .geometry import FovSpec, fpv_footprint_mask  # noqa: E402
from .pseudolabel import estimate_background  # noqa: E402
from .scene import generate_burst  # noqa: E402

_LABEL_COLORS = np.array([[30, 30, 30], [215, 45, 45], [45, 205, 70], [50, 85, 225]],
                         dtype=np.uint8)


def labels_to_rgb(labels: np.ndarray) -> np.ndarray:
    return _LABEL_COLORS[labels]


def mask_boundary(mask: np.ndarray) -> np.ndarray:
    """Pixels inside the mask that touch an outside pixel (wrap-aware in x)."""
    interior = mask.copy()
    for shift, axis in ((1, 0), (-1, 0)):
        rolled = np.roll(mask, shift, axis=axis)
        rolled[0 if shift == 1 else -1, :] = mask[0 if shift == 1 else -1, :]
        interior &= rolled
    for shift in (1, -1):
        interior &= np.roll(mask, shift, axis=1)
    return mask & ~interior


def outline_fpv(panorama: np.ndarray, rotation, fov: FovSpec) -> np.ndarray:
    """Panorama with the FPV footprint boundary drawn in green."""
    mask = fpv_footprint_mask(rotation, fov, panorama.shape[:2]).mask
    out = panorama.copy()
    out[mask_boundary(mask)] = (0, 255, 0)
    return out


def _predict(sample, checkpoint, fov: FovSpec) -> np.ndarray:
    from .experiments import _eval_inputs
    from .audio import StftParams
    from .config import variant_flags
    from .models import load_student

    student, manifest = load_student(checkpoint)
    flags = variant_flags(manifest["variant"])
    stft = StftParams(**manifest["stft"])
    view, isp, facing = _eval_inputs(sample, student.cfg, stft, fov, flags)
    with torch.no_grad():
        logits = student(
            torch.from_numpy(view)[None] if view is not None else None,
            torch.from_numpy(isp)[None] if isp is not None else None,
            torch.tensor([facing], dtype=torch.float32))["seg"]
        sized = torch.nn.functional.interpolate(logits, size=sample.gt_labels.shape,
                                                mode="bilinear", align_corners=False)
    return sized[0].numpy().argmax(0)


def inspect_sample(sample, out_path, scene_cfg=None, fov: FovSpec | None = None,
                   checkpoints=()) -> Path:
    """Write the composite figure for one sample; returns the file path.

    Panels: estimated background, panorama with the FPV outline, ground
    truth, then one prediction panel per checkpoint.
    """
    fov = fov or FovSpec(120.0, 135.0)
    if scene_cfg is not None and sample.meta.get("scene_seed") is not None:
        background = estimate_background(generate_burst(sample.meta["scene_seed"], scene_cfg))
    else:
        background = sample.panorama
    panels = [("background", background),
              ("input (FPV outlined)", outline_fpv(sample.panorama, sample.rotation, fov))]
    if sample.gt_labels is not None:
        panels.append(("ground truth", labels_to_rgb(sample.gt_labels)))
    for i, ckpt in enumerate(checkpoints):
        pred = _predict(sample, ckpt, fov)
        panels.append((f"prediction {i + 1}" if len(checkpoints) > 1 else "prediction",
                       labels_to_rgb(pred)))

    fig, axes = plt.subplots(len(panels), 1, figsize=(6, 1.9 * len(panels)))
    if len(panels) == 1:
        axes = [axes]
    for ax, (title, img) in zip(axes, panels):
        ax.imshow(img)
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
