"""Distillation and reconstruction losses plus the weighted overall objective.

Per-sample semantics: feature alignment and reconstruction use the L2 norm of
the flattened difference, logits distillation the elementwise L1 sum.  The
batch reduction (mean by default, sum optional) is recorded in the training
config.  The paired loss operators stop gradients on their teacher-side
arguments; the low-level terms leave gradient flow to the caller, which the
training loop needs because the teacher-feature projector is trainable.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .config import LossWeights


def _check_shapes(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _reduce(per_sample: torch.Tensor, reduction: str) -> torch.Tensor:
    if reduction == "mean":
        return per_sample.mean()
    if reduction == "sum":
        return per_sample.sum()
    raise ValueError(f"unknown reduction {reduction!r}")


def l2_term(target: torch.Tensor, pred: torch.Tensor, reduction: str = "mean",
            element_reduction: str = "norm") -> torch.Tensor:
    """Per-sample L2 norm of (pred - target), batch-reduced; no detaching.

    element_reduction "rms" divides each norm by sqrt(numel), making the term
    scale-free for training; "norm" is the plain flattened norm.
    """
    _check_shapes(target, pred, "l2 term")
    per = (pred - target).flatten(1).norm(dim=1)
    if element_reduction == "rms":
        per = per / per.new_tensor(float(pred[0].numel())).sqrt()
    elif element_reduction != "norm":
        raise ValueError(f"unknown element_reduction {element_reduction!r}")
    return _reduce(per, reduction)


def l1_term(target: torch.Tensor, pred: torch.Tensor, reduction: str = "mean",
            element_reduction: str = "sum") -> torch.Tensor:
    """Per-sample elementwise L1 of (pred - target), batch-reduced; no detaching.

    element_reduction "mean" averages over elements instead of summing.
    """
    _check_shapes(target, pred, "l1 term")
    per = (pred - target).flatten(1).abs().sum(dim=1)
    if element_reduction == "mean":
        per = per / float(pred[0].numel())
    elif element_reduction != "sum":
        raise ValueError(f"unknown element_reduction {element_reduction!r}")
    return _reduce(per, reduction)


def feature_alignment_loss(f_at, f_as, f_vt, f_vs, reduction: str = "mean"):
    """(audio term, visual term): L2 distance between teacher and student features.

    Teacher features are gradient-stopped.
    """
    return (l2_term(f_at.detach(), f_as, reduction),
            l2_term(f_vt.detach(), f_vs, reduction))


def logits_distillation_loss(f_at_seg, f_vt_seg_masked, f_s_seg, reduction: str = "mean"):
    """(audio term, visual term): L1 distance from teacher logits to student logits."""
    return (l1_term(f_at_seg.detach(), f_s_seg, reduction),
            l1_term(f_vt_seg_masked.detach(), f_s_seg, reduction))


def modality_reconstruction_loss(y_dsp, y_dsp_hat, x_v, f_v_s, reduction: str = "mean"):
    """(audio term, visual term): L2 reconstruction distances to fixed targets."""
    return (l2_term(y_dsp.detach(), y_dsp_hat, reduction),
            l2_term(x_v.detach(), f_v_s, reduction))


@dataclass
class LossParts:
    """Scalar component losses; None marks a disabled pathway."""

    fal_a: torch.Tensor | None = None
    fal_v: torch.Tensor | None = None
    ldl_a: torch.Tensor | None = None
    ldl_v: torch.Tensor | None = None
    mrl_a: torch.Tensor | None = None
    mrl_v: torch.Tensor | None = None

    def detached(self) -> dict:
        out = {}
        for name in ("fal_a", "fal_v", "ldl_a", "ldl_v", "mrl_a", "mrl_v"):
            val = getattr(self, name)
            out[name] = float(val.detach()) if val is not None else None
        return out


def total_loss(parts: LossParts, w: LossWeights) -> torch.Tensor:
    """Weighted sum of the six components.

    Zero-weighted components are skipped outright, so their graph contributes
    no gradient path at all; a missing part with a positive weight is an error.
    """
    pieces = [
        (w.lambda_a, parts.fal_a, "fal_a"),
        (w.lambda_v, parts.fal_v, "fal_v"),
        (w.beta_a, parts.ldl_a, "ldl_a"),
        (w.beta_v, parts.ldl_v, "ldl_v"),
        (w.gamma_a, parts.mrl_a, "mrl_a"),
        (w.gamma_v, parts.mrl_v, "mrl_v"),
    ]
    total = None
    for weight, part, name in pieces:
        if weight == 0:
            continue
        if part is None:
            raise ValueError(f"loss component {name} has weight {weight} but was not computed")
        term = weight * part
        total = term if total is None else total + term
    if total is None:
        ref = next((p for _, p, _ in pieces if p is not None), None)
        return torch.zeros((), dtype=ref.dtype if ref is not None else torch.float32)
    return total
