"""Teacher and student training loops: batch assembly, objectives, checkpointing.

Teacher outputs are constant with respect to the student, so they are
precomputed once per dataset before student epochs start; the learnable
teacher-feature projector is the only training-time bridge and lives inside
the student module.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from . import audio as audio_ops
from .config import (ExperimentConfig, SceneConfig, _build, config_hash, to_plain,
                     variant_flags)
from .dataset import read_split
from .geometry import (FovSpec, HeadRotation, fpv_footprint_mask, project_fpv,
                       sample_head_rotation)
from .losses import LossParts, l1_term, l2_term, total_loss
from .metrics import confusion_counts, iou_from_confusion, mean_iou
from .models import (AudioTeacher, OracleAudioTeacher, OracleVisualTeacher, Student,
                     VisualTeacher, load_checkpoint, save_checkpoint)
from .pseudolabel import estimate_background, foreground_mask, mask_teacher_logits
from .scene import Sample, generate_burst


class TrainingFailure(RuntimeError):
    """Raised on NaN losses or unmet teacher quality gates."""

    def __init__(self, message: str, components: dict | None = None):
        super().__init__(message)
        self.components = components or {}


def set_determinism(seed: int, deterministic: bool = True) -> None:
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)


# ---------------------------------------------------------------------------
# Sample preparation
# ---------------------------------------------------------------------------

@dataclass
class PreparedSample:
    view: np.ndarray  # student visual input (canvas or perspective crop), [0, 1]
    isp: np.ndarray  # 2 x F x Tm
    dsp: np.ndarray  # 6 x F x Tm
    sp8: np.ndarray  # 8 x F x Tm
    pano: np.ndarray  # 3 x H x W, [0, 1], model panorama grid
    labels: np.ndarray | None  # H x W int64, model panorama grid
    rotation: HeadRotation
    facing_deg: float
    scene_seed: int | None


def _resize_image(img: np.ndarray, hw) -> np.ndarray:
    if img.shape[:2] == tuple(hw):
        return img
    return np.asarray(Image.fromarray(img).resize((hw[1], hw[0]), Image.BILINEAR))


def _resize_labels(labels: np.ndarray, hw) -> np.ndarray:
    if labels.shape == tuple(hw):
        return labels
    return np.asarray(Image.fromarray(labels).resize((hw[1], hw[0]), Image.NEAREST))


def student_view_image(panorama: np.ndarray, rot: HeadRotation, fov: FovSpec,
                       model_cfg) -> np.ndarray:
    """The student's limited visual input in [0, 1], channels first.

    masked_pano: visible pixels placed on a zeroed panorama canvas (viewing
    pose is device state, so placement leaks nothing the system lacks);
    perspective: the raw pinhole crop.
    """
    if model_cfg.student_view == "masked_pano":
        pano = _resize_image(panorama, model_cfg.pano_hw)
        mask = fpv_footprint_mask(rot, fov, model_cfg.pano_hw).mask
        view = (pano / 255.0).astype(np.float32) * mask[:, :, None]
    else:
        view = (project_fpv(panorama, rot, fov, model_cfg.fpv_hw) / 255.0).astype(np.float32)
    return view.transpose(2, 0, 1)


def prepare_sample(sample: Sample, cfg: ExperimentConfig, fov: FovSpec,
                   rotation: HeadRotation | None = None,
                   ear_rng: np.random.Generator | None = None) -> PreparedSample:
    """Build the student view and every spectrogram the models consume.

    rotation overrides the stored one (rotation augmentation); ear_rng, when
    given, applies the mono-drop transform to the binaural input.
    """
    rot = rotation or sample.rotation
    if rot is None:
        raise ValueError("sample carries no head rotation and none was supplied")
    view = student_view_image(sample.panorama, rot, fov, cfg.model)

    pair = audio_ops.select_mic_pair(rot.u)
    binaural = audio_ops.extract_binaural(sample.audio, pair)
    if ear_rng is not None:
        binaural = audio_ops.drop_ear(binaural, ear_rng)
    isp = audio_ops.stft_magnitude(binaural, cfg.stft)
    dsp = audio_ops.difference_spectrograms(sample.audio, pair, cfg.stft).values
    sp8 = audio_ops.stft_magnitude(sample.audio, cfg.stft)

    pano = _resize_image(sample.panorama, cfg.model.pano_hw)
    pano = (pano / 255.0).astype(np.float32).transpose(2, 0, 1)
    labels = None
    if sample.gt_labels is not None:
        labels = _resize_labels(sample.gt_labels, cfg.model.pano_hw).astype(np.int64)
    return PreparedSample(view=view, isp=isp, dsp=dsp, sp8=sp8, pano=pano, labels=labels,
                          rotation=rot, facing_deg=pair.facing_deg,
                          scene_seed=sample.meta.get("scene_seed"))


def prepare_split(samples, cfg: ExperimentConfig, fov: FovSpec | None = None):
    fov = fov or FovSpec(*cfg.eval.fov)
    return [prepare_sample(s, cfg, fov) for s in samples]


def _stack(prep, attr, dtype=torch.float32):
    return torch.from_numpy(np.stack([getattr(p, attr) for p in prep])).to(dtype)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


# ---------------------------------------------------------------------------
# Pseudo-labels from the visual teacher
# ---------------------------------------------------------------------------

def _teacher_background_labels(prep: PreparedSample, teacher, cfg: ExperimentConfig,
                               scene_cfg: SceneConfig | None) -> np.ndarray:
    """Segmentation of the estimated background plate for one sample."""
    if scene_cfg is not None and prep.scene_seed is not None:
        frames = generate_burst(prep.scene_seed, scene_cfg)
        bg = estimate_background(frames)
    else:
        # No burst source: fall back to the sample's own panorama, which
        # degrades Eq-style masking to plain vehicle-class selection.
        bg = None
    if bg is None:
        return np.zeros(cfg.model.pano_hw, dtype=np.int64)
    bg = _resize_image(bg, cfg.model.pano_hw)
    tens = torch.from_numpy((bg / 255.0).astype(np.float32).transpose(2, 0, 1))[None]
    with torch.no_grad():
        _, logits = teacher.infer(tens, None)
    return logits[0].argmax(0).numpy()


@dataclass
class TeacherTargets:
    vt_feat: torch.Tensor  # B x C x h x w (pre-projection)
    at_feat: torch.Tensor
    at_logits: torch.Tensor  # B x K x H x W
    vt_logits_masked: torch.Tensor
    pseudo_labels: torch.Tensor  # B x H x W int64


def compute_teacher_targets(prep_list, visual_teacher, audio_teacher, cfg: ExperimentConfig,
                            scene_cfg: SceneConfig | None, batch_size: int = 16) -> TeacherTargets:
    """Run both teachers over a prepared split and build distillation targets."""
    vt_feats, at_feats, at_logits_all, masked_all, pseudo_all = [], [], [], [], []
    with torch.no_grad():
        for start in range(0, len(prep_list), batch_size):
            chunk = prep_list[start:start + batch_size]
            pano = _stack(chunk, "pano")
            sp8 = _stack(chunk, "sp8")
            gt = None
            if chunk[0].labels is not None:
                gt = _stack(chunk, "labels", torch.int64)
            vt_feat, vt_logits = visual_teacher.infer(pano, gt)
            at_feat, at_logits = audio_teacher.infer(sp8, gt)
            for i, p in enumerate(chunk):
                seg = vt_logits[i].argmax(0).numpy()
                seg_bg = _teacher_background_labels(p, visual_teacher, cfg, scene_cfg)
                mask = foreground_mask(seg, seg_bg)
                logits_hwk = vt_logits[i].permute(1, 2, 0).numpy()
                masked = mask_teacher_logits(mask, logits_hwk)
                masked_all.append(torch.from_numpy(masked.transpose(2, 0, 1)))
                pseudo_all.append(torch.from_numpy(np.where(mask > 0, seg, 0).astype(np.int64)))
            vt_feats.append(vt_feat)
            at_feats.append(at_feat)
            at_logits_all.append(at_logits)
    return TeacherTargets(
        vt_feat=torch.cat(vt_feats),
        at_feat=torch.cat(at_feats),
        at_logits=torch.cat(at_logits_all),
        vt_logits_masked=torch.stack(masked_all),
        pseudo_labels=torch.stack(pseudo_all),
    )


# ---------------------------------------------------------------------------
# Validation mIoU helper
# ---------------------------------------------------------------------------

def _val_miou(model_logits_fn, prep_list, batch_size=16) -> float:
    conf = None
    with torch.no_grad():
        for start in range(0, len(prep_list), batch_size):
            chunk = prep_list[start:start + batch_size]
            logits = model_logits_fn(chunk)
            pred = logits.argmax(1).numpy()
            for i, p in enumerate(chunk):
                region = np.ones_like(p.labels, dtype=bool)
                c = confusion_counts(pred[i], p.labels, region)
                conf = c if conf is None else conf + c
    val = mean_iou(iou_from_confusion(conf))
    return 0.0 if val is None else val


# ---------------------------------------------------------------------------
# Teacher training
# ---------------------------------------------------------------------------

def _ce_weight(cfg: ExperimentConfig) -> torch.Tensor:
    w = torch.ones(cfg.model.k_classes)
    w[0] = cfg.train.ce_background_weight
    return w


def _train_segmenter(model, inputs_attr, prep_train, targets, prep_val, cfg,
                     log_writer, tag: str, epochs: int | None = None):
    """Generic cross-entropy training shared by both teachers."""
    tr = cfg.train
    epochs = epochs or tr.teacher_epochs
    ce_weight = _ce_weight(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=tr.teacher_lr)
    steps = max(1, -(-len(prep_train) // tr.batch_size)) * epochs
    sched = torch.optim.lr_scheduler.OneCycleLR(
        opt, max_lr=tr.teacher_lr * tr.teacher_peak_mult, total_steps=steps,
        pct_start=tr.one_cycle_pct_start) if tr.one_cycle else None
    rng = np.random.default_rng(tr.seed)
    for epoch in range(epochs):
        model.train()
        epoch_loss = 0.0
        n_batches = 0
        for idx in _batches(len(prep_train), tr.batch_size, rng):
            chunk = [prep_train[i] for i in idx]
            x = _stack(chunk, inputs_attr)
            y = targets[idx] if targets is not None else _stack(chunk, "labels", torch.int64)
            opt.zero_grad()
            _, logits = model(x)
            loss = F.cross_entropy(logits, y, weight=ce_weight)
            if not torch.isfinite(loss):
                raise TrainingFailure(f"{tag}: non-finite loss at epoch {epoch}",
                                      {"ce": float(loss)})
            loss.backward()
            opt.step()
            if sched is not None:
                sched.step()
            epoch_loss += float(loss.detach())
            n_batches += 1
        model.eval()
        val = _val_miou(lambda ch: model(_stack(ch, inputs_attr))[1], prep_val)
        log_writer.writerow({"model": tag, "epoch": epoch,
                             "train_ce": epoch_loss / max(1, n_batches),
                             "val_miou": val})
    return val


def train_teachers(cfg: ExperimentConfig, data_root, out_dir) -> dict:
    """Train the visual then the auditory teacher; enforce quality gates.

    The visual teacher learns from synthetic ground truth; the auditory
    teacher learns from pseudo-labels carved out of the visual teacher's
    panorama predictions by the moving-foreground mask.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    set_determinism(cfg.train.seed, cfg.train.deterministic)
    scene_cfg = _scene_cfg_for(data_root)

    train_samples = read_split(data_root, "train")
    val_samples = read_split(data_root, "val")
    prep_train = prepare_split(train_samples, cfg)
    prep_val = prepare_split(val_samples, cfg)

    log_path = out_dir / "teacher_log.csv"
    with open(log_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["model", "epoch", "train_ce", "val_miou"])
        writer.writeheader()

        visual = VisualTeacher(cfg.model)
        v_miou = _train_segmenter(visual, "pano", prep_train, None, prep_val, cfg,
                                  writer, "visual_teacher")
        if v_miou < cfg.train.teacher_gate_visual:
            raise TrainingFailure(
                f"visual teacher gate: val mIoU {v_miou:.3f} < "
                f"required {cfg.train.teacher_gate_visual:.3f}")

        visual.eval()
        pseudo = _visual_pseudo_labels(prep_train, visual, cfg, scene_cfg)
        audio = AudioTeacher(cfg.model)
        a_miou = _train_segmenter(audio, "sp8", prep_train, pseudo, prep_val, cfg,
                                  writer, "audio_teacher",
                                  epochs=cfg.train.audio_teacher_epochs)
        if a_miou < cfg.train.teacher_gate_audio:
            raise TrainingFailure(
                f"audio teacher gate: val mIoU {a_miou:.3f} < "
                f"required {cfg.train.teacher_gate_audio:.3f}")

    v_path = save_checkpoint(out_dir / "visual_teacher", visual, cfg.model,
                             kind="visual_teacher", metrics={"val_miou": v_miou},
                             seed=cfg.train.seed, extra={"stft": to_plain(cfg.stft)})
    a_path = save_checkpoint(out_dir / "audio_teacher", audio, cfg.model,
                             kind="audio_teacher", metrics={"val_miou": a_miou},
                             seed=cfg.train.seed, extra={"stft": to_plain(cfg.stft)})
    return {"visual": v_path, "audio": a_path, "visual_miou": v_miou, "audio_miou": a_miou,
            "log": log_path}


def _visual_pseudo_labels(prep_list, visual_teacher, cfg, scene_cfg, batch_size=16):
    out = []
    with torch.no_grad():
        for start in range(0, len(prep_list), batch_size):
            chunk = prep_list[start:start + batch_size]
            _, logits = visual_teacher.infer(_stack(chunk, "pano"), None)
            for i, p in enumerate(chunk):
                seg = logits[i].argmax(0).numpy()
                seg_bg = _teacher_background_labels(p, visual_teacher, cfg, scene_cfg)
                mask = foreground_mask(seg, seg_bg)
                out.append(torch.from_numpy(np.where(mask > 0, seg, 0).astype(np.int64)))
    return torch.stack(out)


def _scene_cfg_for(data_root) -> SceneConfig | None:
    from .dataset import load_manifest

    gen = load_manifest(data_root).generator_config
    if not gen or "scene" not in gen:
        return None
    return _build(SceneConfig, gen["scene"])


def load_teachers(cfg: ExperimentConfig, teachers_dir=None):
    """Real teachers from checkpoints, or oracles when cfg.train.oracle_teachers."""
    if cfg.train.oracle_teachers:
        return OracleVisualTeacher(cfg.model), OracleAudioTeacher(cfg.model)
    if teachers_dir is None:
        raise ValueError("teachers_dir required unless oracle_teachers is set")
    teachers_dir = Path(teachers_dir)
    visual = VisualTeacher(cfg.model)
    load_checkpoint(teachers_dir / "visual_teacher", visual, expected_cfg=cfg.model)
    audio = AudioTeacher(cfg.model)
    load_checkpoint(teachers_dir / "audio_teacher", audio, expected_cfg=cfg.model)
    visual.eval()
    audio.eval()
    return visual, audio


# ---------------------------------------------------------------------------
# Student training
# ---------------------------------------------------------------------------

def effective_weights(cfg: ExperimentConfig, flags):
    """Zero the loss weights of disabled pathways."""
    w = cfg.train.weights
    kw = dict(lambda_a=w.lambda_a, lambda_v=w.lambda_v, beta_a=w.beta_a, beta_v=w.beta_v,
              gamma_a=w.gamma_a, gamma_v=w.gamma_v)
    if not flags.distill_audio:
        kw["lambda_a"] = kw["beta_a"] = 0.0
    if not flags.distill_visual:
        kw["lambda_v"] = kw["beta_v"] = 0.0
    if not flags.reconstruction:
        kw["gamma_a"] = kw["gamma_v"] = 0.0
    if not flags.audio_branch:
        kw["lambda_a"] = 0.0
        kw["gamma_a"] = 0.0
    if not flags.visual_branch:
        kw["lambda_v"] = 0.0
        kw["gamma_v"] = 0.0
    return type(w)(**kw)


STUDENT_LOG_FIELDS = ["epoch", "fal_a", "fal_v", "ldl_a", "ldl_v", "mrl_a", "mrl_v",
                      "base_ce", "total", "val_miou"]


def student_step_losses(student: Student, batch: dict, targets: dict,
                        cfg: ExperimentConfig, flags, weights) -> tuple:
    """Forward pass plus every enabled loss component for one batch."""
    out = student(batch.get("view"), batch.get("isp"), batch.get("facing"))
    parts = LossParts()
    red = cfg.train.batch_reduction
    normalized = cfg.train.element_reduction == "normalized"
    l2_el = "rms" if normalized else "norm"
    l1_el = "mean" if normalized else "sum"
    if flags.distill_audio:
        parts.fal_a = l2_term(targets["at_feat"].detach(), out["f_as"], red, l2_el)
        parts.ldl_a = l1_term(targets["at_logits"].detach(), out["seg"], red, l1_el)
    if flags.distill_visual:
        # The projector is trainable, so only the raw teacher feature is frozen.
        f_vt = student.teacher_proj(targets["vt_feat"].detach(), out["f_vs"].shape[-2:])
        parts.fal_v = l2_term(f_vt, out["f_vs"], red, l2_el)
        parts.ldl_v = l1_term(targets["vt_logits_masked"].detach(), out["seg"], red, l1_el)
    if flags.reconstruction:
        parts.mrl_a = l2_term(batch["dsp"].detach(), out["recon_dsp"], red, l2_el)
        parts.mrl_v = l2_term(batch["pano"].detach(), out["recon_image"], red, l2_el)
    loss = total_loss(parts, weights)
    ce = None
    if flags.base_ce:
        ce = F.cross_entropy(out["seg"], targets["pseudo_labels"],
                             weight=_ce_weight(cfg).to(out["seg"].dtype))
        loss = loss + cfg.train.base_ce_weight * ce
    return out, parts, ce, loss


def train_student(cfg: ExperimentConfig, data_root, out_dir, teachers=None,
                  teachers_dir=None, variant: str | None = None,
                  prepared=None) -> dict:
    """Train one student variant against frozen teachers; returns artifact paths.

    prepared, when given, is (prep_train, prep_val, targets) shared across
    variant runs so sample preparation and teacher forwards happen once.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    variant = variant or cfg.train.variant
    flags = variant_flags(variant)
    tr = cfg.train
    set_determinism(tr.seed, tr.deterministic)
    scene_cfg = _scene_cfg_for(data_root)

    if teachers is None:
        teachers = load_teachers(cfg, teachers_dir)
    visual_teacher, audio_teacher = teachers

    fov = FovSpec(*cfg.eval.fov)
    train_samples = read_split(data_root, "train")
    if prepared is not None:
        prep_train, prep_val, targets = prepared
    else:
        val_samples = read_split(data_root, "val")
        prep_train = prepare_split(train_samples, cfg, fov)
        prep_val = prepare_split(val_samples, cfg, fov)
        targets = compute_teacher_targets(prep_train, visual_teacher, audio_teacher, cfg,
                                          scene_cfg)

    # Teacher isolation: distillation uses precomputed tensors, so teacher
    # parameters are outside the graph; assert none ever accumulates a grad.
    for module in (visual_teacher, audio_teacher):
        for p in getattr(module, "parameters", lambda: [])():
            p.requires_grad_(False)

    student = Student(cfg.model, flags)
    weights = effective_weights(cfg, flags)
    opt = torch.optim.Adam(student.parameters(), lr=tr.lr)
    steps = max(1, -(-len(prep_train) // tr.batch_size)) * tr.epochs
    sched = torch.optim.lr_scheduler.OneCycleLR(
        opt, max_lr=tr.lr * tr.one_cycle_peak_mult, total_steps=steps,
        pct_start=tr.one_cycle_pct_start) if tr.one_cycle else None

    audit = {
        "variant": variant,
        "flags": to_plain(flags),
        "effective_weights": to_plain(weights),
        "config_hash": config_hash(cfg),
    }
    (out_dir / "flag_audit.json").write_text(
        __import__("json").dumps(audit, sort_keys=True, indent=1) + "\n")

    rng = np.random.default_rng(tr.seed)
    rot_rng = np.random.default_rng(tr.seed + 1)
    log_path = out_dir / "student_log.csv"
    best = {"val_miou": -1.0, "epoch": -1, "state": None}
    with open(log_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=STUDENT_LOG_FIELDS)
        writer.writeheader()
        for epoch in range(tr.epochs):
            if tr.resample_rotation_per_epoch:
                ranges = (scene_cfg.rotation_u_range, scene_cfg.rotation_v_range,
                          scene_cfg.rotation_rot_range) if scene_cfg else None
                prep_train = [
                    prepare_sample(s, cfg, fov, rotation=sample_head_rotation(rot_rng, ranges)
                                   if ranges else sample_head_rotation(rot_rng))
                    for s in train_samples
                ]
                targets = compute_teacher_targets(prep_train, visual_teacher, audio_teacher,
                                                  cfg, scene_cfg)
            student.train()
            sums = {k: 0.0 for k in STUDENT_LOG_FIELDS if k not in ("epoch", "val_miou")}
            n_batches = 0
            for idx in _batches(len(prep_train), tr.batch_size, rng):
                chunk = [prep_train[i] for i in idx]
                batch = {
                    "view": _stack(chunk, "view") if flags.visual_branch else None,
                    "isp": _stack(chunk, "isp") if flags.audio_branch else None,
                    "facing": torch.tensor([p.facing_deg for p in chunk],
                                           dtype=torch.float32),
                    "dsp": _stack(chunk, "dsp"),
                    "pano": _stack(chunk, "pano"),
                }
                tgt = {
                    "vt_feat": targets.vt_feat[idx],
                    "at_feat": targets.at_feat[idx],
                    "at_logits": targets.at_logits[idx],
                    "vt_logits_masked": targets.vt_logits_masked[idx],
                    "pseudo_labels": targets.pseudo_labels[idx],
                }
                opt.zero_grad()
                _, parts, ce, loss = student_step_losses(student, batch, tgt, cfg, flags,
                                                         weights)
                if not torch.isfinite(loss):
                    dump = parts.detached()
                    dump["base_ce"] = float(ce) if ce is not None else None
                    dump["total"] = float(loss)
                    raise TrainingFailure(
                        f"non-finite student loss at epoch {epoch}: {dump}", dump)
                loss.backward()
                opt.step()
                if sched is not None:
                    sched.step()
                comp = parts.detached()
                for key in ("fal_a", "fal_v", "ldl_a", "ldl_v", "mrl_a", "mrl_v"):
                    sums[key] += comp[key] or 0.0
                sums["base_ce"] += float(ce.detach()) if ce is not None else 0.0
                sums["total"] += float(loss.detach())
                n_batches += 1
            student.eval()
            val = _val_miou(
                lambda ch: student(
                    _stack(ch, "view") if flags.visual_branch else None,
                    _stack(ch, "isp") if flags.audio_branch else None,
                    torch.tensor([p.facing_deg for p in ch], dtype=torch.float32))["seg"],
                prep_val)
            row = {k: sums[k] / max(1, n_batches) for k in sums}
            row.update(epoch=epoch, val_miou=val)
            writer.writerow(row)
            fh.flush()
            if val >= best["val_miou"]:
                best = {"val_miou": val, "epoch": epoch,
                        "state": {k: v.clone() for k, v in student.state_dict().items()}}

    extra = {"stft": to_plain(cfg.stft), "fov": list(cfg.eval.fov),
             "experiment": cfg.name}
    last_path = save_checkpoint(out_dir / "student_last", student, cfg.model,
                                kind="student", variant=variant, epoch=tr.epochs - 1,
                                metrics={"val_miou": val}, seed=tr.seed, extra=extra)
    student.load_state_dict(best["state"])
    best_path = save_checkpoint(out_dir / "student_best", student, cfg.model,
                                kind="student", variant=variant, epoch=best["epoch"],
                                metrics={"val_miou": best["val_miou"]}, seed=tr.seed,
                                extra=extra)
    return {"best": best_path, "last": last_path, "log": log_path,
            "best_val_miou": best["val_miou"], "audit": audit}
