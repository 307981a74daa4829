"""Dataclass experiment configuration: presets, YAML round-trip, overrides, hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .audio import StftParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    """Parameters of the synthetic omnidirectional scene generator."""

    pano_hw: tuple = (128, 256)
    # Inclusive (lo, hi) emitter count per class.
    car_count: tuple = (1, 2)
    tram_count: tuple = (0, 1)
    motorcycle_count: tuple = (0, 1)
    distance_range: tuple = (4.0, 20.0)
    azimuth_range: tuple = (-180.0, 180.0)
    # None: emitters sit on the ground plane, elevation follows from distance.
    elevation_range: tuple | None = None
    camera_height_m: float = 1.5
    # Angular half-extent of a blob is blob_size_deg_m / distance, clamped.
    blob_size_deg_m: float = 40.0
    min_blob_deg: float = 3.0
    max_blob_deg: float = 16.0
    backdrop_noise: float = 0.03
    sample_rate: int = 16000
    duration_s: float = 2.0
    noise_floor: float = 1e-3
    head_radius_m: float = 0.09
    ear_axis_offset_deg: float = 30.0
    speed_of_sound: float = 343.0
    rotation_u_range: tuple = (-180.0, 180.0)
    rotation_v_range: tuple = (-20.0, 20.0)
    rotation_rot_range: tuple = (-15.0, 15.0)
    # Drift must clear the widest blob within the burst or the temporal
    # median keeps the emitter baked into the background plate.
    drift_deg_per_frame: float = 18.0
    burst_frames: int = 9

    @property
    def n_samples_audio(self) -> int:
        return int(round(self.duration_s * self.sample_rate))


@dataclass(frozen=True)
class ModelConfig:
    """Size parameterization shared by teachers and the student."""

    preset: str = "desk"
    pano_hw: tuple = (128, 256)
    fpv_hw: tuple = (96, 96)
    k_classes: int = 4
    base_width: int = 16
    feat_channels: int = 32
    audio_channels: int = 32
    decoder_width: int = 32
    aspp_dilations: tuple = (1, 2, 4)
    head_width: int = 32
    coord_channels: bool = True
    # How the student sees its limited view: "masked_pano" places the visible
    # pixels on a zeroed panorama canvas (viewing pose is device state, so the
    # placement is known); "perspective" feeds the raw pinhole crop.
    student_view: str = "masked_pano"
    # Expected spectrogram geometry (F, Tm); validated at forward time.
    spec_shape: tuple = (129, 251)
    audio_sample_rate: int = 16000

    @property
    def student_view_hw(self) -> tuple:
        return self.pano_hw if self.student_view == "masked_pano" else self.fpv_hw

    def __post_init__(self):
        if self.k_classes < 2:
            raise ConfigError("k_classes must be at least 2")
        if self.student_view not in ("masked_pano", "perspective"):
            raise ConfigError(f"unknown student_view {self.student_view!r}")


@dataclass(frozen=True)
class LossWeights:
    """Trade-off factors of the overall objective."""

    lambda_a: float = 0.05
    lambda_v: float = 0.05
    beta_a: float = 0.1
    beta_v: float = 0.4
    gamma_a: float = 0.02
    gamma_v: float = 0.02

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"loss weight {f.name} must be nonnegative")

    def as_tuple(self):
        return (self.lambda_a, self.lambda_v, self.beta_a, self.beta_v, self.gamma_a, self.gamma_v)


VARIANTS = ("SBV-full", "SBV-V", "SBV-A", "SBV-v3", "SBV-v2", "SBV-v1")


@dataclass(frozen=True)
class VariantFlags:
    """Which pathways a model variant keeps enabled.

    base_ce is the pseudo-label cross-entropy that anchors every variant at
    desk scale: matching masked teacher logits alone leaves background logits
    unconstrained near zero, which argmax decodes as noise.
    """

    visual_branch: bool = True
    audio_branch: bool = True
    fusion_attention: bool = True
    distill_visual: bool = True
    distill_audio: bool = True
    reconstruction: bool = True
    base_ce: bool = True
    # Panorama-scope variants have no FPV/OOV split in reports.
    pano_scope: bool = False


_VARIANT_TABLE = {
    "SBV-full": VariantFlags(),
    "SBV-V": VariantFlags(audio_branch=False, fusion_attention=False, distill_audio=False,
                          reconstruction=False),
    "SBV-A": VariantFlags(visual_branch=False, fusion_attention=False, distill_visual=False,
                          reconstruction=False, pano_scope=True),
    "SBV-v3": VariantFlags(distill_visual=False, distill_audio=False),
    "SBV-v2": VariantFlags(fusion_attention=False, distill_visual=False, distill_audio=False),
    "SBV-v1": VariantFlags(fusion_attention=False, distill_visual=False, distill_audio=False,
                           reconstruction=False),
}


def variant_flags(variant: str) -> VariantFlags:
    if variant not in _VARIANT_TABLE:
        raise ConfigError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    return _VARIANT_TABLE[variant]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0
    variant: str = "SBV-full"
    weights: LossWeights = field(default_factory=LossWeights)
    # Supervision fallback when distillation is disabled (ablation variants).
    base_ce_weight: float = 1.0
    # Class weight for the background id in cross-entropy objectives; vehicle
    # pixels are rare, so plain CE stalls on all-background predictions.
    ce_background_weight: float = 0.05
    one_cycle: bool = True
    one_cycle_peak_mult: float = 10.0
    one_cycle_pct_start: float = 0.3
    batch_reduction: str = "mean"
    # "normalized" rescales distillation/reconstruction terms per element so
    # their gradients do not drown the objective; "spec" keeps plain
    # sum/norm semantics.
    element_reduction: str = "normalized"
    resample_rotation_per_epoch: bool = False
    deterministic: bool = True
    teacher_epochs: int = 12
    audio_teacher_epochs: int | None = None
    teacher_lr: float = 2e-3
    teacher_peak_mult: float = 10.0
    teacher_gate_visual: float = 0.6
    teacher_gate_audio: float = 0.2
    oracle_teachers: bool = False

    def __post_init__(self):
        variant_flags(self.variant)
        if self.batch_reduction not in ("mean", "sum"):
            raise ConfigError(f"batch_reduction must be mean or sum, got {self.batch_reduction}")
        if self.element_reduction not in ("normalized", "spec"):
            raise ConfigError(
                f"element_reduction must be normalized or spec, got {self.element_reduction}")


@dataclass(frozen=True)
class EvalConfig:
    fov: tuple = (120.0, 135.0)
    fov_list: tuple = ((80.0, 95.0), (120.0, 135.0), (160.0, 175.0))
    mono_seed: int = 0


@dataclass(frozen=True)
class DataGenConfig:
    n_train: int = 64
    n_val: int = 16
    n_test: int = 16


@dataclass(frozen=True)
class ExperimentConfig:
    """One file drives every pipeline stage."""

    name: str = "desk"
    seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)
    stft: StftParams = field(default_factory=lambda: StftParams(16000, 256, 128))
    data: DataGenConfig = field(default_factory=DataGenConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

def desk_config() -> ExperimentConfig:
    return ExperimentConfig()


def full_config() -> ExperimentConfig:
    """Paper-scale sizes: 480x480 model inputs, 257x601 spectrograms, 512-wide decoder."""
    return ExperimentConfig(
        name="full",
        scene=SceneConfig(pano_hw=(480, 960), sample_rate=48000, duration_s=2.0),
        stft=StftParams(48000, 512, 160),
        model=ModelConfig(preset="full", pano_hw=(480, 480), fpv_hw=(480, 480),
                          base_width=64, feat_channels=256, audio_channels=256,
                          decoder_width=512, aspp_dilations=(6, 12, 18), head_width=256,
                          coord_channels=False, spec_shape=(257, 601),
                          audio_sample_rate=48000),
        train=TrainConfig(epochs=50, lr=1e-5),
    )


def bench_config(seed: int = 0) -> ExperimentConfig:
    """Sizes for the directional experiments: small but trainable on CPU."""
    scene = SceneConfig(
        pano_hw=(64, 128),
        duration_s=1.0,
        min_blob_deg=8.0,
        max_blob_deg=12.0,
        blob_size_deg_m=60.0,
        distance_range=(3.0, 12.0),
        car_count=(1, 1),
        drift_deg_per_frame=14.0,
    )
    stft = StftParams(16000, 256, 128)
    model = ModelConfig(
        preset="bench", pano_hw=(64, 128), fpv_hw=(48, 48),
        base_width=16, feat_channels=24, audio_channels=24, decoder_width=24,
        head_width=24, spec_shape=(stft.n_freqs, stft.n_frames(scene.n_samples_audio)),
    )
    return ExperimentConfig(
        name="bench", seed=seed, scene=scene, stft=stft,
        data=DataGenConfig(n_train=500, n_val=60, n_test=100),
        model=model,
        train=TrainConfig(seed=seed, epochs=30, lr=1e-3, one_cycle_peak_mult=3.0,
                          teacher_epochs=12, audio_teacher_epochs=18,
                          teacher_gate_audio=0.05),
    )


def smoke_config(seed: int = 0) -> ExperimentConfig:
    """Tiny end-to-end pipeline, well under five CPU minutes."""
    scene = SceneConfig(
        pano_hw=(32, 64),
        duration_s=0.5,
        min_blob_deg=10.0,
        distance_range=(3.0, 10.0),
        car_count=(1, 1),
        tram_count=(0, 1),
        motorcycle_count=(0, 1),
    )
    stft = StftParams(16000, 256, 128)
    model = ModelConfig(
        preset="smoke", pano_hw=(32, 64), fpv_hw=(32, 32),
        base_width=8, feat_channels=12, audio_channels=12, decoder_width=12,
        head_width=12, spec_shape=(stft.n_freqs, stft.n_frames(scene.n_samples_audio)),
    )
    return ExperimentConfig(
        name="smoke", seed=seed, scene=scene, stft=stft,
        data=DataGenConfig(n_train=16, n_val=8, n_test=8),
        model=model,
        train=TrainConfig(epochs=2, teacher_epochs=2, teacher_gate_visual=0.0,
                          teacher_gate_audio=0.0, seed=seed),
    )


PRESETS = {"desk": desk_config, "full": full_config, "bench": bench_config, "smoke": smoke_config}


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def to_plain(obj):
    """Dataclass tree -> plain dict/list structure for YAML/JSON."""
    if is_dataclass(obj):
        return {f.name: to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_plain(x) for x in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _build(cls, data):
    if data is None:
        return None
    if is_dataclass(cls):
        if not isinstance(data, dict):
            raise ConfigError(f"expected mapping for {cls.__name__}, got {type(data).__name__}")
        kwargs = {}
        names = {f.name: f for f in fields(cls)}
        for key, val in data.items():
            if key not in names:
                raise ConfigError(f"unknown config key {key!r} for {cls.__name__}")
            kwargs[key] = _coerce(names[key], val)
        return cls(**kwargs)
    return data


def _coerce(f: dataclasses.Field, val):
    typ = f.type if not isinstance(f.type, str) else f.type
    # Nested dataclasses are detected from the default value's type.
    default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
    if is_dataclass(default):
        return _build(type(default), val)
    if isinstance(default, tuple) and isinstance(val, (list, tuple)):
        return tuple(tuple(x) if isinstance(x, (list, tuple)) else x for x in val)
    if val is not None and isinstance(default, tuple) is False and isinstance(val, list):
        return tuple(val)
    return val


def from_plain(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return from_plain(raw)


def save_config(cfg, path) -> None:
    Path(path).write_text(yaml.safe_dump(to_plain(cfg), sort_keys=True))


def config_hash(cfg) -> str:
    blob = json.dumps(to_plain(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _parse_override_value(text: str):
    return yaml.safe_load(text)


def apply_overrides(cfg, overrides) -> ExperimentConfig:
    """Apply dotted-key overrides like train.lr=0.01; keys must already exist."""
    plain = to_plain(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key.path=value")
        key, text = item.split("=", 1)
        parts = key.split(".")
        node = plain
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"override references unknown config key {key!r}")
            node = node[part]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError(f"override references unknown config key {key!r}")
        node[parts[-1]] = _parse_override_value(text)
    return from_plain(plain)
