"""Experiment runners: evaluation, FoV sweeps, mono-vs-binaural, ablations.

Report CSV schema (one row per region and class, plus a mean row):
run_id, variant, dataset, region, class, iou, miou, fscore.  Panorama-scope
variants report only the All region; FPV/OOV cells stay empty, rendered as
"-" in printed tables.  The F-score weighting follows the beta^2 = 0.3
convention (stated here once; see metrics module).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from . import audio as audio_ops  # noqa: E402
from .audio import StftParams  # noqa: E402
from .config import ExperimentConfig, config_hash, variant_flags  # noqa: E402
from .dataset import read_split  # noqa: E402
from .geometry import FovSpec, fpv_footprint_mask  # noqa: E402
from .metrics import (REGIONS, RegionMetrics, confusion_counts, region_metrics)  # noqa: E402
from .models import load_student  # noqa: E402
from .scene import CLASS_NAMES, VEHICLE_CLASSES  # noqa: E402
from .training import student_view_image, train_student, train_teachers  # noqa: E402

REPORT_FIELDS = ["run_id", "variant", "dataset", "region", "class", "iou", "miou", "fscore"]


@dataclass
class ExperimentReport:
    run_id: str
    config_hash: str
    rows: list = field(default_factory=list)
    seeds: dict = field(default_factory=dict)

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
            writer.writeheader()
            for row in self.rows:
                writer.writerow(row)
        return path


def _report_rows(run_id, variant, dataset, per_region: dict, pano_scope: bool):
    rows = []
    for region in REGIONS:
        rm = per_region[region]
        blank = pano_scope and region != "All"
        for c in VEHICLE_CLASSES:
            iou = rm.class_iou[c]
            rows.append({
                "run_id": run_id, "variant": variant, "dataset": dataset,
                "region": region, "class": CLASS_NAMES[c],
                "iou": "" if blank or iou is None else f"{iou:.6f}",
                "miou": "" if blank or rm.miou is None else f"{rm.miou:.6f}",
                "fscore": "" if blank else f"{rm.f_score:.6f}",
            })
        rows.append({
            "run_id": run_id, "variant": variant, "dataset": dataset,
            "region": region, "class": "mean",
            "iou": "",
            "miou": "" if blank or rm.miou is None else f"{rm.miou:.6f}",
            "fscore": "" if blank else f"{rm.f_score:.6f}",
        })
    return rows


@dataclass
class EvalResult:
    variant: str
    dataset: str
    fov: tuple
    per_region: dict  # region -> RegionMetrics
    n_samples: int
    rows: list

    def miou(self, region: str):
        return self.per_region[region].miou


def _eval_inputs(sample, model_cfg, stft: StftParams, fov: FovSpec, flags,
                 ear_rng=None):
    view = isp = None
    facing = 0.0
    if flags.visual_branch:
        view = student_view_image(sample.panorama, sample.rotation, fov, model_cfg)
    if flags.audio_branch:
        pair = audio_ops.select_mic_pair(sample.rotation.u)
        facing = pair.facing_deg
        binaural = audio_ops.extract_binaural(sample.audio, pair)
        if ear_rng is not None:
            binaural = audio_ops.drop_ear(binaural, ear_rng)
        isp = audio_ops.stft_magnitude(binaural, stft)
    return view, isp, facing


def evaluate(checkpoint, data_root, split: str = "test", fov: FovSpec | None = None,
             drop_ear_seed: int | None = None, batch_size: int = 16,
             run_id: str | None = None, variant_label: str | None = None) -> EvalResult:
    """Run inference over a split and accumulate region-split confusion counts.

    Predictions are argmaxed after resizing logits to the ground-truth grid;
    region masks come from each sample's stored rotation and the given FoV.
    """
    student, manifest = load_student(checkpoint)
    flags = variant_flags(manifest["variant"])
    stft = StftParams(**manifest["stft"])
    fov = fov or FovSpec(*manifest["fov"])
    variant = variant_label or manifest["variant"]
    samples = read_split(data_root, split)
    if not samples:
        raise ValueError(f"split {split!r} of {data_root} is empty")

    ear_rng = np.random.default_rng(drop_ear_seed) if drop_ear_seed is not None else None
    conf = {region: np.zeros((4, 4), dtype=np.int64) for region in REGIONS}
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            inputs = [_eval_inputs(s, student.cfg, stft, fov, flags, ear_rng) for s in chunk]
            view = torch.from_numpy(np.stack([i[0] for i in inputs])) \
                if flags.visual_branch else None
            isp = torch.from_numpy(np.stack([i[1] for i in inputs])) \
                if flags.audio_branch else None
            facing = torch.tensor([i[2] for i in inputs], dtype=torch.float32)
            logits = student(view, isp, facing)["seg"]
            for i, sample in enumerate(chunk):
                gt = sample.gt_labels
                if gt is None:
                    raise ValueError("evaluation split has samples without ground truth")
                sized = torch.nn.functional.interpolate(
                    logits[i:i + 1], size=gt.shape, mode="bilinear", align_corners=False)
                pred = sized[0].numpy().argmax(0)
                fpv_mask = fpv_footprint_mask(sample.rotation, fov, gt.shape).mask
                conf["FPV"] += confusion_counts(pred, gt, fpv_mask)
                conf["OOV"] += confusion_counts(pred, gt, ~fpv_mask)
                conf["All"] += confusion_counts(pred, gt, np.ones_like(fpv_mask))
    per_region = {r: region_metrics(conf[r], r) for r in REGIONS}
    run_id = run_id or f"{manifest.get('experiment', 'run')}-{manifest['config_hash'][:8]}"
    rows = _report_rows(run_id, variant, f"{Path(data_root).name}/{split}", per_region,
                        pano_scope=flags.pano_scope)
    return EvalResult(variant=variant, dataset=f"{Path(data_root).name}/{split}",
                      fov=(fov.h_deg, fov.v_deg), per_region=per_region,
                      n_samples=len(samples), rows=rows)


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------

def sweep_fov(checkpoint, data_root, fov_list, out_dir, split: str = "test") -> dict:
    """Evaluate across FoV sizes; writes CSV and a line plot of mIoU vs FoV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for fov_hw in fov_list:
        fov = FovSpec(*fov_hw)
        results.append(evaluate(checkpoint, data_root, split=split, fov=fov))

    csv_path = out_dir / "fov_sweep.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["fov_h", "fov_v", "region", "miou", "fscore"])
        writer.writeheader()
        for res in results:
            for region in REGIONS:
                rm = res.per_region[region]
                writer.writerow({"fov_h": res.fov[0], "fov_v": res.fov[1], "region": region,
                                 "miou": "" if rm.miou is None else f"{rm.miou:.6f}",
                                 "fscore": f"{rm.f_score:.6f}"})

    fig, ax = plt.subplots(figsize=(5, 3.2))
    widths = [res.fov[0] for res in results]
    for region in REGIONS:
        vals = [100.0 * (res.per_region[region].miou or 0.0) for res in results]
        ax.plot(widths, vals, marker="o", label=region)
    ax.set_xlabel("horizontal FoV (deg)")
    ax.set_ylabel("mIoU (%)")
    ax.legend()
    fig.tight_layout()
    plot_path = out_dir / "fov_sweep.png"
    fig.savefig(plot_path, dpi=120)
    plt.close(fig)
    return {"results": results, "csv": csv_path, "plot": plot_path}


def mono_vs_binaural(checkpoint, data_root, out_dir, split: str = "test",
                     mono_seed: int = 0) -> dict:
    """Paired binaural and ear-dropped evaluation passes over the same split."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    binaural = evaluate(checkpoint, data_root, split=split)
    mono = evaluate(checkpoint, data_root, split=split, drop_ear_seed=mono_seed)
    csv_path = out_dir / "mono_vs_binaural.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["channel", "region", "miou", "fscore"])
        writer.writeheader()
        for tag, res in (("binaural", binaural), ("mono", mono)):
            for region in REGIONS:
                rm = res.per_region[region]
                writer.writerow({"channel": tag, "region": region,
                                 "miou": "" if rm.miou is None else f"{rm.miou:.6f}",
                                 "fscore": f"{rm.f_score:.6f}"})
    return {"binaural": binaural, "mono": mono, "csv": csv_path}


def run_directional_suite(cfg: ExperimentConfig, out_root, variants=None,
                          mono_seed: int = 0) -> dict:
    """One seeded end-to-end pass: data, teachers, student variants, metrics.

    Returns per-variant region mIoUs on the test split plus the mono pass for
    the full student.  Everything under out_root is reusable: existing data
    and teacher checkpoints are picked up instead of regenerated.
    """
    import dataclasses as _dc
    import json as _json

    from .dataset import build_dataset, read_split as _read_split
    from .training import (compute_teacher_targets, load_teachers, prepare_split,
                           _scene_cfg_for)

    out_root = Path(out_root)
    variants = variants or ("SBV-full", "SBV-V", "SBV-v3", "SBV-v2", "SBV-v1")
    data_root = out_root / "data"
    if not (data_root / "manifest.json").exists():
        build_dataset(cfg, data_root)
    teachers_dir = out_root / "teachers"
    if not (teachers_dir / "visual_teacher.pt").exists():
        train_teachers(cfg, data_root, teachers_dir)
    teachers = load_teachers(cfg, teachers_dir)

    results = {"teachers": {}, "variants": {}, "mono": None,
               "config_hash": config_hash(cfg), "seed": cfg.train.seed}
    tmanifest = _json.loads((teachers_dir / "visual_teacher.json").read_text())
    results["teachers"]["visual_miou"] = tmanifest["metrics"]["val_miou"]
    amanifest = _json.loads((teachers_dir / "audio_teacher.json").read_text())
    results["teachers"]["audio_miou"] = amanifest["metrics"]["val_miou"]

    prepared = None
    if any(not (out_root / v.lower() / "student_best.pt").exists() for v in variants):
        fov = FovSpec(*cfg.eval.fov)
        prep_train = prepare_split(_read_split(data_root, "train"), cfg, fov)
        prep_val = prepare_split(_read_split(data_root, "val"), cfg, fov)
        targets = compute_teacher_targets(prep_train, *teachers, cfg,
                                          _scene_cfg_for(data_root))
        prepared = (prep_train, prep_val, targets)

    for variant in variants:
        vdir = out_root / variant.lower()
        vcfg = _dc.replace(cfg, train=_dc.replace(cfg.train, variant=variant))
        ckpt = vdir / "student_best.pt"
        if not ckpt.exists():
            train_student(vcfg, data_root, vdir, teachers=teachers, variant=variant,
                          prepared=prepared)
        res = evaluate(ckpt, data_root, split="test")
        results["variants"][variant] = {
            region: res.per_region[region].miou for region in REGIONS}
        if variant == "SBV-full":
            mono = evaluate(ckpt, data_root, split="test", drop_ear_seed=mono_seed)
            results["mono"] = {region: mono.per_region[region].miou for region in REGIONS}
    (out_root / "suite_results.json").write_text(
        _json.dumps(results, indent=1, sort_keys=True) + "\n")
    return results


ABLATION_VARIANTS = ("SBV-full", "SBV-v3", "SBV-v2", "SBV-v1")


def run_ablations(cfg: ExperimentConfig, data_root, out_dir, teachers_dir=None,
                  variants=ABLATION_VARIANTS, split: str = "test") -> dict:
    """Train and evaluate each variant with shared seeds; emit a comparison table."""
    import dataclasses as _dc

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if teachers_dir is None:
        teachers_dir = out_dir / "teachers"
        train_teachers(cfg, data_root, teachers_dir)

    report = ExperimentReport(run_id=f"{cfg.name}-ablate-{config_hash(cfg)[:8]}",
                              config_hash=config_hash(cfg),
                              seeds={"train": cfg.train.seed})
    results = {}
    audits = {}
    for variant in variants:
        vdir = out_dir / variant.lower().replace("/", "-")
        vcfg = _dc.replace(cfg, train=_dc.replace(cfg.train, variant=variant))
        arts = train_student(vcfg, data_root, vdir, teachers_dir=teachers_dir,
                             variant=variant)
        res = evaluate(arts["best"], data_root, split=split, run_id=report.run_id)
        results[variant] = res
        audits[variant] = arts["audit"]
        report.rows.extend(res.rows)
    report.write_csv(out_dir / "ablation_report.csv")
    audit_path = out_dir / "ablation_flag_audit.json"
    audit_path.write_text(__import__("json").dumps(audits, sort_keys=True, indent=1) + "\n")
    return {"results": results, "report": report, "csv": out_dir / "ablation_report.csv",
            "audit": audit_path}
