"""Head rotations, equirectangular <-> perspective mapping, and view footprint masks.

Conventions used throughout the package:

* Equirectangular panorama: columns map linearly to azimuth, rows to elevation.
  Pixel centers sit at half-integer offsets, so azimuth(col) = (col + 0.5) * 360/W - 180
  and elevation(row) = 90 - (row + 0.5) * 180/H.  Column 0 is the far left
  (azimuth just above -180 deg), row 0 is the top (elevation just below +90 deg).
* World frame: x forward (azimuth 0), y right (azimuth +90), z up.  Positive u
  turns the head right, positive v up, rot rolls in-plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class HeadRotation:
    """Viewing direction in degrees: u horizontal, v vertical, rot in-plane."""

    u: float
    v: float
    rot: float = 0.0

    def __post_init__(self):
        if not (-180.0 < self.u < 180.0):
            raise ValueError(f"u must lie in (-180, 180), got {self.u}")
        if not (-90.0 < self.v < 90.0):
            raise ValueError(f"v must lie in (-90, 90), got {self.v}")
        if not (-180.0 < self.rot < 180.0):
            raise ValueError(f"rot must lie in (-180, 180), got {self.rot}")


@dataclass(frozen=True)
class FovSpec:
    """Angular extent of the perspective view, degrees."""

    h_deg: float
    v_deg: float

    def __post_init__(self):
        if not (0.0 < self.h_deg < 180.0):
            raise ValueError(f"h_deg must lie in (0, 180), got {self.h_deg}")
        if not (0.0 < self.v_deg < 180.0):
            raise ValueError(f"v_deg must lie in (0, 180), got {self.v_deg}")

    def contains(self, other: "FovSpec") -> bool:
        return other.h_deg <= self.h_deg and other.v_deg <= self.v_deg


@dataclass(frozen=True)
class ViewMask:
    """Boolean footprint on the panorama grid, tagged FPV or OOV."""

    mask: np.ndarray
    role: str

    def __post_init__(self):
        if self.role not in ("FPV", "OOV"):
            raise ValueError(f"role must be FPV or OOV, got {self.role!r}")
        if self.mask.dtype != np.bool_ or self.mask.ndim != 2:
            raise ValueError("mask must be a 2-D boolean array")

    def complement(self) -> "ViewMask":
        return ViewMask(~self.mask, "OOV" if self.role == "FPV" else "FPV")


# Full admissible intervals for (u, v, rot).
DEFAULT_ROTATION_RANGES = ((-180.0, 180.0), (-90.0, 90.0), (-180.0, 180.0))


def sample_head_rotation(rng: np.random.Generator, ranges=DEFAULT_ROTATION_RANGES) -> HeadRotation:
    """Draw a uniform head rotation from (u, v, rot) ranges.

    Ranges must be subsets of the admissible open intervals; a collapsed range
    (lo == hi) is allowed and yields that point.
    """
    limits = DEFAULT_ROTATION_RANGES
    vals = []
    for (lo, hi), (llo, lhi), name in zip(ranges, limits, ("u", "v", "rot")):
        if lo > hi:
            raise ValueError(f"empty range for {name}: ({lo}, {hi})")
        if lo < llo or hi > lhi:
            raise ValueError(f"range for {name} exceeds admissible interval ({llo}, {lhi})")
        vals.append(lo if lo == hi else rng.uniform(lo, hi))
    return HeadRotation(*vals)


def pixel_to_direction(row, col, pano_size):
    """Map pixel indices to (azimuth_deg, elevation_deg) at pixel centers.

    Accepts scalars or arrays.  Out-of-range indices raise.
    """
    h, w = pano_size
    row = np.asarray(row)
    col = np.asarray(col)
    if np.any(row < 0) or np.any(row >= h) or np.any(col < 0) or np.any(col >= w):
        raise ValueError(f"pixel index out of range for panorama {pano_size}")
    az = (col + 0.5) * (360.0 / w) - 180.0
    el = 90.0 - (row + 0.5) * (180.0 / h)
    if az.ndim == 0:
        return float(az), float(el)
    return az, el


def direction_to_pixel_continuous(az_deg, el_deg, pano_size):
    """Inverse of pixel_to_direction in continuous pixel coordinates.

    Azimuth wraps; the returned column lies in [-0.5, W - 0.5).
    """
    h, w = pano_size
    az = (np.asarray(az_deg, dtype=np.float64) + 180.0) % 360.0 - 180.0
    el = np.asarray(el_deg, dtype=np.float64)
    col = (az + 180.0) / (360.0 / w) - 0.5
    row = (90.0 - el) / (180.0 / h) - 0.5
    return row, col


def rotation_matrix(rotation: HeadRotation) -> np.ndarray:
    """World-from-camera matrix: yaw(u) about z, pitch(v) about y, roll(rot) about x."""
    u, v, r = (np.radians(rotation.u), np.radians(rotation.v), np.radians(rotation.rot))
    cu, su = np.cos(u), np.sin(u)
    cv, sv = np.cos(v), np.sin(v)
    cr, sr = np.cos(r), np.sin(r)
    yaw = np.array([[cu, -su, 0.0], [su, cu, 0.0], [0.0, 0.0, 1.0]])
    pitch = np.array([[cv, 0.0, -sv], [0.0, 1.0, 0.0], [sv, 0.0, cv]])
    roll = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return yaw @ pitch @ roll


def direction_vectors(az_deg, el_deg):
    """Unit vectors for (azimuth, elevation) degrees in the world frame."""
    az = np.radians(np.asarray(az_deg, dtype=np.float64))
    el = np.radians(np.asarray(el_deg, dtype=np.float64))
    cos_el = np.cos(el)
    return np.stack([cos_el * np.cos(az), cos_el * np.sin(az), np.sin(el)], axis=-1)


def _camera_rays(fov: FovSpec, out_size) -> np.ndarray:
    """Pinhole rays (unnormalized) for each output pixel, camera frame."""
    out_h, out_w = out_size
    tan_h = np.tan(np.radians(fov.h_deg / 2.0))
    tan_v = np.tan(np.radians(fov.v_deg / 2.0))
    ys = (2.0 * (np.arange(out_w) + 0.5) / out_w - 1.0) * tan_h
    zs = (1.0 - 2.0 * (np.arange(out_h) + 0.5) / out_h) * tan_v
    yy, zz = np.meshgrid(ys, zs)
    return np.stack([np.ones_like(yy), yy, zz], axis=-1)


def _bilinear_sample_pano(panorama: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Bilinear sample with horizontal wrap-around and vertical clamp."""
    h, w = panorama.shape[:2]
    img = panorama.astype(np.float64)
    if img.ndim == 2:
        img = img[:, :, None]

    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = rows - r0
    fc = cols - c0

    r0c = np.clip(r0, 0, h - 1)
    r1c = np.clip(r0 + 1, 0, h - 1)
    c0w = c0 % w
    c1w = (c0 + 1) % w

    top = img[r0c, c0w] * (1.0 - fc)[..., None] + img[r0c, c1w] * fc[..., None]
    bot = img[r1c, c0w] * (1.0 - fc)[..., None] + img[r1c, c1w] * fc[..., None]
    out = top * (1.0 - fr)[..., None] + bot * fr[..., None]
    if panorama.ndim == 2:
        out = out[:, :, 0]
    return out


def project_fpv(panorama: np.ndarray, rotation: HeadRotation, fov: FovSpec, out_size) -> np.ndarray:
    """Extract the perspective first-person view from an equirectangular panorama.

    Returns a float array shaped out_size (+ channel axis), bilinearly sampled
    with horizontal wrap.  The optical axis points at (u, v), rolled by rot.
    """
    out_h, out_w = out_size
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"out_size must be positive, got {out_size}")
    rays = _camera_rays(fov, out_size).reshape(-1, 3)
    world = rays @ rotation_matrix(rotation).T
    world /= np.linalg.norm(world, axis=-1, keepdims=True)
    az = np.degrees(np.arctan2(world[:, 1], world[:, 0]))
    el = np.degrees(np.arcsin(np.clip(world[:, 2], -1.0, 1.0)))
    rows, cols = direction_to_pixel_continuous(az, el, panorama.shape[:2])
    sampled = _bilinear_sample_pano(panorama, rows.reshape(out_h, out_w), cols.reshape(out_h, out_w))
    return sampled


def frustum_membership(directions: np.ndarray, rotation: HeadRotation, fov: FovSpec) -> np.ndarray:
    """True where unit direction vectors fall inside the rotated pinhole frustum.

    Boundary directions count as inside.
    """
    cam = directions @ rotation_matrix(rotation)  # R^T applied row-wise
    x, y, z = cam[..., 0], cam[..., 1], cam[..., 2]
    tan_h = np.tan(np.radians(fov.h_deg / 2.0))
    tan_v = np.tan(np.radians(fov.v_deg / 2.0))
    return (x > 0.0) & (np.abs(y) <= x * tan_h) & (np.abs(z) <= x * tan_v)


def fpv_footprint_mask(rotation: HeadRotation, fov: FovSpec, pano_size) -> ViewMask:
    """Per-pixel FPV membership on the panorama grid; complement() gives OOV."""
    h, w = pano_size
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    az, el = pixel_to_direction(rows, cols, pano_size)
    inside = frustum_membership(direction_vectors(az, el), rotation, fov)
    return ViewMask(inside, "FPV")
