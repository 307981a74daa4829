"""Command-line entry point wiring every pipeline stage into reproducible runs.

Exit codes: 0 ok, 2 usage, 3 config, 4 data, 5 training failure.  Every run
writes a resolved-config snapshot into its output directory before doing any
work; a successful run is re-runnable from the snapshot alone.  The output
root can be overridden with the OOVSEG_OUT_ROOT environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from .config import (ConfigError, ExperimentConfig, PRESETS, apply_overrides, config_hash,
                     load_config, save_config)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_TRAINING = 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _fail(code: int, message: str):
    raise CliError(code, message)


def _resolve_out(args) -> Path:
    root = os.environ.get("OOVSEG_OUT_ROOT")
    out = Path(args.out)
    if root and not out.is_absolute():
        out = Path(root) / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_cfg(args) -> ExperimentConfig:
    try:
        if args.config in PRESETS:
            cfg = PRESETS[args.config]()
        else:
            path = Path(args.config)
            if not path.exists():
                _fail(EXIT_CONFIG, f"config: no such file or preset: {args.config}")
            cfg = load_config(path)
        if args.seed is not None:
            cfg = dataclasses.replace(
                cfg, seed=args.seed,
                train=dataclasses.replace(cfg.train, seed=args.seed))
        if args.override:
            cfg = apply_overrides(cfg, args.override)
        return cfg
    except ConfigError as exc:
        _fail(EXIT_CONFIG, f"config: {exc}")
    except FileNotFoundError as exc:
        _fail(EXIT_CONFIG, f"config: {exc}")


def _snapshot(cfg, out: Path) -> None:
    save_config(cfg, out / "config_snapshot.yaml")


def _require_data(path):
    if not (Path(path) / "manifest.json").exists():
        _fail(EXIT_DATA, f"data: no dataset manifest under {path}")
    return Path(path)


def _require_checkpoint(path):
    blob = Path(path).with_suffix(".pt")
    if not blob.exists():
        _fail(EXIT_DATA, f"data: missing checkpoint {blob}")
    return Path(path)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from .dataset import build_dataset

    cfg = _load_cfg(args)
    out = _resolve_out(args)
    _snapshot(cfg, out)
    manifest = build_dataset(cfg, out)
    total = sum(len(v) for v in manifest.splits.values())
    print(f"gen-data: wrote {total} samples to {out} (config {config_hash(cfg)})")
    return EXIT_OK


def cmd_train_teachers(args) -> int:
    from .training import TrainingFailure, train_teachers

    cfg = _load_cfg(args)
    out = _resolve_out(args)
    _snapshot(cfg, out)
    data = _require_data(args.data)
    try:
        arts = train_teachers(cfg, data, out)
    except TrainingFailure as exc:
        _fail(EXIT_TRAINING, f"training: {exc}")
    print(f"train-teachers: visual mIoU {arts['visual_miou']:.3f}, "
          f"audio mIoU {arts['audio_miou']:.3f} -> {out}")
    return EXIT_OK


def cmd_train_student(args) -> int:
    from .training import TrainingFailure, train_student

    cfg = _load_cfg(args)
    out = _resolve_out(args)
    _snapshot(cfg, out)
    data = _require_data(args.data)
    teachers_dir = None
    if not cfg.train.oracle_teachers:
        if args.teachers is None:
            _fail(EXIT_DATA, "data: --teachers required unless train.oracle_teachers is set")
        teachers_dir = Path(args.teachers)
        if not (teachers_dir / "visual_teacher.pt").exists():
            _fail(EXIT_DATA, f"data: no teacher checkpoints under {teachers_dir}")
    try:
        arts = train_student(cfg, data, out, teachers_dir=teachers_dir,
                             variant=args.variant)
    except TrainingFailure as exc:
        _fail(EXIT_TRAINING, f"training: {exc}")
    print(f"train-student: variant {args.variant or cfg.train.variant}, "
          f"best val mIoU {arts['best_val_miou']:.3f} -> {arts['best']}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .experiments import ExperimentReport, evaluate
    from .geometry import FovSpec
    from .models import CheckpointError

    out = _resolve_out(args)
    data = _require_data(args.data)
    ckpt = _require_checkpoint(args.checkpoint)
    fov = FovSpec(args.fov[0], args.fov[1]) if args.fov else None
    try:
        res = evaluate(ckpt, data, split=args.split, fov=fov)
    except CheckpointError as exc:
        _fail(EXIT_DATA, f"data: {exc}")
    report = ExperimentReport(run_id=f"eval-{Path(args.checkpoint).stem}",
                              config_hash="", rows=res.rows)
    path = report.write_csv(out / "eval_report.csv")
    for region in ("FPV", "OOV", "All"):
        rm = res.per_region[region]
        miou = "-" if rm.miou is None else f"{100 * rm.miou:.1f}"
        print(f"evaluate: {region:>3} mIoU {miou} F {rm.f_score:.3f}")
    print(f"evaluate: report -> {path}")
    return EXIT_OK


def cmd_sweep_fov(args) -> int:
    from .experiments import sweep_fov

    out = _resolve_out(args)
    data = _require_data(args.data)
    ckpt = _require_checkpoint(args.checkpoint)
    fov_list = [tuple(map(float, item.split("x"))) for item in args.fov_list.split(",")]
    arts = sweep_fov(ckpt, data, fov_list, out, split=args.split)
    print(f"sweep-fov: {len(fov_list)} FoVs -> {arts['csv']} and {arts['plot']}")
    return EXIT_OK


def cmd_mono_test(args) -> int:
    from .experiments import mono_vs_binaural

    out = _resolve_out(args)
    data = _require_data(args.data)
    ckpt = _require_checkpoint(args.checkpoint)
    arts = mono_vs_binaural(ckpt, data, out, split=args.split, mono_seed=args.mono_seed)
    for tag in ("binaural", "mono"):
        oov = arts[tag].per_region["OOV"].miou
        print(f"mono-test: {tag:>8} OOV mIoU "
              f"{'-' if oov is None else f'{100 * oov:.1f}'}")
    print(f"mono-test: report -> {arts['csv']}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .experiments import ABLATION_VARIANTS, run_ablations
    from .training import TrainingFailure

    cfg = _load_cfg(args)
    out = _resolve_out(args)
    _snapshot(cfg, out)
    data = _require_data(args.data)
    variants = tuple(args.variants.split(",")) if args.variants else ABLATION_VARIANTS
    try:
        arts = run_ablations(cfg, data, out, teachers_dir=args.teachers, variants=variants)
    except TrainingFailure as exc:
        _fail(EXIT_TRAINING, f"training: {exc}")
    for variant, res in arts["results"].items():
        oov = res.per_region["OOV"].miou
        print(f"ablate: {variant:>8} OOV mIoU "
              f"{'-' if oov is None else f'{100 * oov:.1f}'}")
    print(f"ablate: report -> {arts['csv']}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    from .config import _build, SceneConfig
    from .dataset import DatasetError, load_manifest, read_dataset
    from .geometry import FovSpec
    from .visualize import inspect_sample

    out = _resolve_out(args)
    data = _require_data(args.data)
    try:
        manifest = load_manifest(data)
        match = None
        for record in manifest.records:
            if record["id"] == args.sample:
                match = record
                break
        if match is None:
            _fail(EXIT_DATA, f"data: no sample {args.sample!r} in {data}")
        sample = next(s for rec, s in zip(manifest.records, read_dataset(data))
                      if rec["id"] == args.sample)
    except DatasetError as exc:
        _fail(EXIT_DATA, f"data: {exc}")
    scene_cfg = None
    gen = manifest.generator_config
    if gen and "scene" in gen:
        scene_cfg = _build(SceneConfig, gen["scene"])
    checkpoints = [p for p in (args.checkpoint, args.checkpoint2) if p]
    for ckpt in checkpoints:
        _require_checkpoint(ckpt)
    fov = FovSpec(args.fov[0], args.fov[1]) if args.fov else None
    path = inspect_sample(sample, out / f"inspect_{args.sample}.png", scene_cfg=scene_cfg,
                          fov=fov, checkpoints=checkpoints)
    print(f"inspect: figure -> {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oovseg",
                                     description="Out-of-view panorama segmentation bench")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, data=False, checkpoint=False):
        if config:
            p.add_argument("--config", required=True,
                           help="YAML config path or preset name "
                                f"({', '.join(sorted(PRESETS))})")
            p.add_argument("--seed", type=int, default=None)
            p.add_argument("--override", action="append", default=[],
                           help="dotted config override, e.g. train.lr=0.001")
        if data:
            p.add_argument("--data", required=True, help="dataset root")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint path (.pt)")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-teachers", help="train panorama and audio teachers")
    common(p, data=True)
    p.set_defaults(func=cmd_train_teachers)

    p = sub.add_parser("train-student", help="train a student variant")
    common(p, data=True)
    p.add_argument("--teachers", default=None, help="teacher checkpoint directory")
    p.add_argument("--variant", default=None)
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("evaluate", help="region-split metrics for a checkpoint")
    common(p, config=False, data=True, checkpoint=True)
    p.add_argument("--split", default="test")
    p.add_argument("--fov", type=float, nargs=2, default=None, metavar=("H", "V"))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-fov", help="evaluate across FoV sizes")
    common(p, config=False, data=True, checkpoint=True)
    p.add_argument("--split", default="test")
    p.add_argument("--fov-list", default="80x95,120x135,160x175")
    p.set_defaults(func=cmd_sweep_fov)

    p = sub.add_parser("mono-test", help="binaural vs dropped-ear evaluation")
    common(p, config=False, data=True, checkpoint=True)
    p.add_argument("--split", default="test")
    p.add_argument("--mono-seed", type=int, default=0)
    p.set_defaults(func=cmd_mono_test)

    p = sub.add_parser("ablate", help="train and compare ablation variants")
    common(p, data=True)
    p.add_argument("--teachers", default=None)
    p.add_argument("--variants", default=None, help="comma-separated variant tags")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect", help="composite figure for one sample")
    common(p, config=False, data=True)
    p.add_argument("--sample", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--checkpoint2", default=None)
    p.add_argument("--fov", type=float, nargs=2, default=None, metavar=("H", "V"))
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
