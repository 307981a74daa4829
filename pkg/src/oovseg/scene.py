"""Synthetic omnidirectional scenes: panoramas, ground-truth masks, spatial audio.

Each scene drops a handful of vehicle emitters into a fixed world backdrop.
Emitters are rendered as class-shaped, class-colored blobs whose angular size
shrinks with distance, and simultaneously synthesized into an 8-channel
waveform through a cardioid gain and inter-channel delay model built on the
same microphone layout the selection logic uses.

The world backdrop encodes absolute azimuth in its colors, so a perspective
crop of it reveals the head rotation; vehicle emitters sit on the ground
plane, so their elevation and angular size follow from distance.  Both
choices keep the panorama segmentation task solvable from a limited view
plus audio: loudness gives distance, inter-pair level ratios give azimuth,
and the spectral band gives the class.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import PAIR_TABLE
from .config import SceneConfig
from .geometry import HeadRotation, direction_vectors, pixel_to_direction, sample_head_rotation

CLASS_NAMES = {0: "background", 1: "car", 2: "tram", 3: "motorcycle"}
VEHICLE_CLASSES = (1, 2, 3)

_BASE_COLORS = {1: (215, 45, 45), 2: (45, 205, 70), 3: (50, 85, 225)}


@dataclass(frozen=True)
class EmitterSpec:
    """A single sound-making vehicle placed in the scene."""

    class_id: int
    azimuth_deg: float
    elevation_deg: float
    distance: float
    source_seed: int

    def __post_init__(self):
        if self.class_id not in VEHICLE_CLASSES:
            raise ValueError(f"class_id must be one of {VEHICLE_CLASSES}, got {self.class_id}")
        if not (-180.0 < self.azimuth_deg <= 180.0):
            raise ValueError(f"azimuth_deg must lie in (-180, 180], got {self.azimuth_deg}")
        if self.distance <= 0:
            raise ValueError(f"distance must be positive, got {self.distance}")


@dataclass
class Sample:
    """One training/evaluation unit of the dataset."""

    panorama: np.ndarray  # H x W x 3 uint8
    audio: np.ndarray  # 8 x T float32
    gt_labels: np.ndarray | None  # H x W uint8 in {0..3}, None for unlabeled data
    rotation: HeadRotation | None
    sample_rate: int
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Microphone geometry
# ---------------------------------------------------------------------------

def mic_gain_axes_deg(ear_axis_offset_deg: float) -> np.ndarray:
    """Cardioid gain axis azimuth for mic ids 1..8 (index id-1).

    Each pair's axes straddle its facing direction by the ear offset, left
    ear toward negative azimuth.
    """
    axes = np.zeros(8)
    for left, right, facing in PAIR_TABLE.values():
        axes[left - 1] = facing - ear_axis_offset_deg
        axes[right - 1] = facing + ear_axis_offset_deg
    return axes


def mic_position_azimuths_deg() -> np.ndarray:
    """Azimuth of each mic on the head circle; ears sit 90 deg off the facing."""
    azs = np.zeros(8)
    for left, right, facing in PAIR_TABLE.values():
        azs[left - 1] = facing - 90.0
        azs[right - 1] = facing + 90.0
    return azs


def cardioid_gain(source_az_deg, axis_az_deg):
    """(1 + cos(angle between source and axis)) / 2."""
    theta = np.radians(np.asarray(source_az_deg) - np.asarray(axis_az_deg))
    return 0.5 * (1.0 + np.cos(theta))


def mic_gains(emitter: EmitterSpec, cfg: SceneConfig) -> np.ndarray:
    """Directional gain of each mic (ids 1..8) for one emitter, incl. 1/distance."""
    axes = mic_gain_axes_deg(cfg.ear_axis_offset_deg)
    return cardioid_gain(emitter.azimuth_deg, axes) / emitter.distance


def mic_delays(emitter: EmitterSpec, cfg: SceneConfig) -> np.ndarray:
    """Far-field arrival time offset per mic in seconds (negative = earlier)."""
    pos_az = np.radians(mic_position_azimuths_deg())
    positions = cfg.head_radius_m * np.stack(
        [np.cos(pos_az), np.sin(pos_az), np.zeros(8)], axis=-1
    )
    d_hat = direction_vectors(emitter.azimuth_deg, emitter.elevation_deg)
    return -(positions @ d_hat) / cfg.speed_of_sound


# ---------------------------------------------------------------------------
# Source signals
# ---------------------------------------------------------------------------

def _band_noise(rng, n, sample_rate, f_lo, f_hi):
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec[(freqs < f_lo) | (freqs > f_hi)] = 0.0
    return np.fft.irfft(spec, n)


def class_source_signal(class_id: int, source_seed: int, n: int, sample_rate: int) -> np.ndarray:
    """Unit-RMS class-characteristic waveform, deterministic in source_seed.

    Car: low-band rumble.  Tram: harmonic tone stack.  Motorcycle: high buzz.
    """
    rng = np.random.default_rng(np.random.SeedSequence([class_id, source_seed]))
    t = np.arange(n) / sample_rate
    if class_id == 1:
        sig = _band_noise(rng, n, sample_rate, 30.0, 250.0)
    elif class_id == 2:
        f0 = rng.uniform(180.0, 320.0)
        sig = np.zeros(n)
        for k in range(1, 6):
            sig += (1.0 / k) * np.sin(2.0 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi))
        sig += 0.05 * _band_noise(rng, n, sample_rate, 100.0, 2000.0)
    elif class_id == 3:
        sig = _band_noise(rng, n, sample_rate, 1500.0, 4500.0)
        # amplitude flutter characteristic of a two-stroke engine
        sig *= 1.0 + 0.5 * np.sin(2.0 * np.pi * rng.uniform(25.0, 45.0) * t)
    else:
        raise ValueError(f"no source model for class {class_id}")
    rms = np.sqrt(np.mean(sig**2))
    return sig / max(rms, 1e-12)


def _fractional_delay_stack(signal: np.ndarray, delays_s: np.ndarray, gains: np.ndarray,
                            sample_rate: int) -> np.ndarray:
    """Delay and scale one source into all 8 channels (circular, RMS-exact)."""
    n = signal.shape[0]
    spec = np.fft.rfft(signal)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    phase = np.exp(-2j * np.pi * freqs[None, :] * delays_s[:, None])
    return np.fft.irfft(gains[:, None] * spec[None, :] * phase, n, axis=-1)


def synthesize_audio(emitters, cfg: SceneConfig, noise_rng: np.random.Generator) -> np.ndarray:
    """8 x T mix of every emitter plus white noise at the configured floor."""
    n = cfg.n_samples_audio
    out = cfg.noise_floor * noise_rng.standard_normal((8, n))
    for em in emitters:
        src = class_source_signal(em.class_id, em.source_seed, n, cfg.sample_rate)
        out += _fractional_delay_stack(src, mic_delays(em, cfg), mic_gains(em, cfg),
                                       cfg.sample_rate)
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# Panorama rendering
# ---------------------------------------------------------------------------

def world_backdrop(pano_hw, rng: np.random.Generator | None = None,
                   noise_amplitude: float = 0.0) -> np.ndarray:
    """Static uint8 backdrop whose colors encode absolute azimuth and elevation."""
    h, w = pano_hw
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    az, el = pixel_to_direction(rows, cols, pano_hw)
    az_r = np.radians(az)
    r = 0.5 + 0.42 * np.sin(az_r)
    g = 0.5 + 0.42 * np.cos(az_r)
    b = 0.25 + 0.5 * (el + 90.0) / 180.0
    img = np.stack([r, g, b], axis=-1)
    img[np.abs(el) < 1.0] *= 0.35  # horizon line
    img[el < -60.0] *= 0.55  # ground shading near nadir
    if rng is not None and noise_amplitude > 0:
        img = img + noise_amplitude * rng.uniform(-1.0, 1.0, size=img.shape)
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def _wrap_deg(a):
    return (np.asarray(a) + 180.0) % 360.0 - 180.0


def blob_half_extent_deg(distance: float, cfg: SceneConfig) -> float:
    return float(np.clip(cfg.blob_size_deg_m / distance, cfg.min_blob_deg, cfg.max_blob_deg))


def _shape_membership(class_id, d_az, d_el, s):
    if class_id == 1:  # car: squat ellipse
        return (d_az / (1.5 * s)) ** 2 + (d_el / (0.8 * s)) ** 2 <= 1.0
    if class_id == 2:  # tram: long rectangle
        return (np.abs(d_az) <= 2.1 * s) & (np.abs(d_el) <= 0.9 * s)
    # motorcycle: diamond
    return np.abs(d_az) / (0.9 * s) + np.abs(d_el) / (0.9 * s) <= 1.0


def emitter_color(em: EmitterSpec) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([em.class_id, em.source_seed, 7]))
    jitter = rng.integers(-18, 19, size=3)
    return np.clip(np.array(_BASE_COLORS[em.class_id], dtype=np.int64) + jitter, 0, 255).astype(
        np.uint8
    )


def render_panorama(emitters, cfg: SceneConfig, backdrop: np.ndarray,
                    drift_offset_deg: float = 0.0):
    """Paint emitters over the backdrop; nearest emitter wins contested pixels.

    Returns (panorama uint8, labels uint8).  Membership is a hard test on
    pixel-center angles, so labels mark exactly the painted pixels.
    """
    h, w = cfg.pano_hw
    pano = backdrop.copy()
    labels = np.zeros((h, w), dtype=np.uint8)
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    az, el = pixel_to_direction(rows, cols, cfg.pano_hw)
    for em in sorted(emitters, key=lambda e: -e.distance):
        s = blob_half_extent_deg(em.distance, cfg)
        d_az = _wrap_deg(az - (em.azimuth_deg + drift_offset_deg))
        d_el = el - em.elevation_deg
        inside = _shape_membership(em.class_id, d_az, d_el, s)
        pano[inside] = emitter_color(em)
        labels[inside] = em.class_id
    return pano, labels


# ---------------------------------------------------------------------------
# Scene assembly
# ---------------------------------------------------------------------------

def _ground_elevation_deg(distance: float, cfg: SceneConfig) -> float:
    return float(-np.degrees(np.arctan2(cfg.camera_height_m, distance)))


def sample_emitters(rng: np.random.Generator, cfg: SceneConfig):
    counts = {1: cfg.car_count, 2: cfg.tram_count, 3: cfg.motorcycle_count}
    emitters = []
    for class_id in VEHICLE_CLASSES:
        lo, hi = counts[class_id]
        n = int(rng.integers(lo, hi + 1))
        for _ in range(n):
            az = float(rng.uniform(*cfg.azimuth_range))
            dist = float(rng.uniform(*cfg.distance_range))
            if cfg.elevation_range is not None:
                el = float(rng.uniform(*cfg.elevation_range))
            else:
                el = _ground_elevation_deg(dist, cfg)
            emitters.append(EmitterSpec(class_id, az, el, dist,
                                        source_seed=int(rng.integers(2**31 - 1))))
    return emitters


def _scene_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([0x5EED, seed]))


def scene_backdrop(seed: int, cfg: SceneConfig) -> np.ndarray:
    """The clean plate of scene `seed`: backdrop plus its static speckle."""
    rng = np.random.default_rng(np.random.SeedSequence([0x5EED, seed, 1]))
    return world_backdrop(cfg.pano_hw, rng, cfg.backdrop_noise)


def generate_scene(seed: int, cfg: SceneConfig) -> Sample:
    """Deterministic scene: same (seed, cfg) gives a bit-identical Sample."""
    rng = _scene_rng(seed)
    emitters = sample_emitters(rng, cfg)
    rotation = sample_head_rotation(
        rng, (cfg.rotation_u_range, cfg.rotation_v_range, cfg.rotation_rot_range)
    )
    backdrop = scene_backdrop(seed, cfg)
    pano, labels = render_panorama(emitters, cfg, backdrop)
    audio = synthesize_audio(emitters, cfg, np.random.default_rng(
        np.random.SeedSequence([0x5EED, seed, 2])))
    meta = {
        "scene_seed": seed,
        "emitters": [
            {"class_id": e.class_id, "azimuth_deg": e.azimuth_deg,
             "elevation_deg": e.elevation_deg, "distance": e.distance,
             "source_seed": e.source_seed}
            for e in emitters
        ],
        "has_labels": True,
    }
    return Sample(panorama=pano, audio=audio, gt_labels=labels, rotation=rotation,
                  sample_rate=cfg.sample_rate, meta=meta)


def generate_burst(seed: int, cfg: SceneConfig):
    """Frames of the scene with emitters drifting linearly in azimuth.

    The middle frame coincides with generate_scene(seed, cfg).panorama.
    """
    rng = _scene_rng(seed)
    emitters = sample_emitters(rng, cfg)
    backdrop = scene_backdrop(seed, cfg)
    mid = cfg.burst_frames // 2
    frames = []
    for k in range(cfg.burst_frames):
        offset = (k - mid) * cfg.drift_deg_per_frame
        pano, _ = render_panorama(emitters, cfg, backdrop, drift_offset_deg=offset)
        frames.append(pano)
    return frames
