"""Checkpoint persistence: opaque weight blob plus a portable sidecar manifest."""

from __future__ import annotations

import json
from pathlib import Path

import torch

from ..config import ModelConfig, _build, config_hash, to_plain, variant_flags

CHECKPOINT_FORMAT = "1"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, model, model_cfg: ModelConfig, *, kind: str, variant: str | None = None,
                    epoch: int | None = None, metrics: dict | None = None,
                    seed: int | None = None, extra: dict | None = None) -> Path:
    """Write <path>.pt (weights) and <path>.json (manifest); returns the .pt path."""
    path = Path(path)
    blob = path.with_suffix(".pt")
    blob.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"state_dict": model.state_dict()}, blob)
    manifest = {
        "format_version": CHECKPOINT_FORMAT,
        "kind": kind,
        "variant": variant,
        "model_config": to_plain(model_cfg),
        "config_hash": config_hash(model_cfg),
        "epoch": epoch,
        "metrics": metrics or {},
        "seed": seed,
    }
    if extra:
        manifest.update(extra)
    blob.with_suffix(".json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return blob


def load_manifest(path) -> dict:
    path = Path(path).with_suffix(".json")
    if not path.exists():
        raise CheckpointError(f"missing checkpoint manifest {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("format_version") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format "
                              f"{manifest.get('format_version')!r} in {path}")
    cfg = _build(ModelConfig, manifest["model_config"])
    if config_hash(cfg) != manifest["config_hash"]:
        raise CheckpointError(f"config hash mismatch in {path}: manifest was edited or "
                              f"written by an incompatible build")
    return manifest


def model_config_from_manifest(manifest: dict) -> ModelConfig:
    return _build(ModelConfig, manifest["model_config"])


def load_checkpoint(path, model, expected_cfg: ModelConfig | None = None) -> dict:
    """Restore weights into model; returns the manifest.  Hashes must agree."""
    path = Path(path)
    blob = path.with_suffix(".pt")
    if not blob.exists():
        raise CheckpointError(f"missing checkpoint {blob}")
    manifest = load_manifest(blob)
    if expected_cfg is not None and config_hash(expected_cfg) != manifest["config_hash"]:
        raise CheckpointError(
            f"checkpoint {blob} was trained with a different model config "
            f"({manifest['config_hash']} != {config_hash(expected_cfg)})")
    state = torch.load(blob, map_location="cpu", weights_only=True)
    model.load_state_dict(state["state_dict"])
    return manifest


def load_student(path):
    """Rebuild a Student (with its variant flags) from a checkpoint pair."""
    from .nets import Student

    manifest = load_manifest(Path(path).with_suffix(".pt"))
    cfg = model_config_from_manifest(manifest)
    student = Student(cfg, variant_flags(manifest["variant"]))
    load_checkpoint(path, student, expected_cfg=cfg)
    student.eval()
    return student, manifest
