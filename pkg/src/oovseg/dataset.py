"""Dataset persistence: documented on-disk layout, manifest, and format adapter.

Layout written by write_dataset::

    root/
      manifest.json                     format version, splits, records, config snapshot
      {split}/{id}/panorama.png         lossless RGB panorama
      {split}/{id}/audio.wav            8-channel float32 WAV
      {split}/{id}/labels.png           single-channel uint8 class ids
      {split}/{id}/meta.json            rotation, scene seed, emitters

External (unlabeled) layout accepted by adapt_external_layout, one directory
per clip holding a middle-frame panorama and eight mono audio clips::

    root/{clip_id}/panorama.png|jpg
    root/{clip_id}/mic1.wav ... mic8.wav

The external naming is provisional: it follows the published description of
the source recordings (middle frame plus eight 2-second clips), not an
authoritative file listing.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.io import wavfile

from .geometry import HeadRotation
from .scene import Sample

FORMAT_VERSION = "1"


class DatasetError(RuntimeError):
    pass


@dataclass
class DatasetManifest:
    root: Path
    format_version: str
    splits: dict  # split -> list of sample ids
    records: list  # dicts: id, split, files
    generator_config: dict = field(default_factory=dict)

    def record_dir(self, record: dict) -> Path:
        return Path(self.root) / record["split"] / record["id"]


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def _rotation_to_plain(rotation):
    if rotation is None:
        return None
    return {"u": rotation.u, "v": rotation.v, "rot": rotation.rot}


def _rotation_from_plain(plain):
    if plain is None:
        return None
    return HeadRotation(plain["u"], plain["v"], plain["rot"])


def write_dataset(samples_by_split: dict, root, generator_config: dict | None = None) -> DatasetManifest:
    """Persist samples and return the manifest (also written to root/manifest.json)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    splits = {}
    records = []
    for split, samples in samples_by_split.items():
        ids = []
        for i, sample in enumerate(samples):
            sample_id = f"{split}-{i:05d}"
            ids.append(sample_id)
            d = root / split / sample_id
            d.mkdir(parents=True, exist_ok=True)
            Image.fromarray(sample.panorama, mode="RGB").save(d / "panorama.png")
            wavfile.write(d / "audio.wav", sample.sample_rate,
                          np.ascontiguousarray(sample.audio.T.astype(np.float32)))
            files = {"panorama": "panorama.png", "audio": "audio.wav", "meta": "meta.json"}
            if sample.gt_labels is not None:
                Image.fromarray(sample.gt_labels, mode="L").save(d / "labels.png")
                files["labels"] = "labels.png"
            meta = dict(sample.meta)
            meta["rotation"] = _rotation_to_plain(sample.rotation)
            meta["sample_rate"] = sample.sample_rate
            _write_json(d / "meta.json", meta)
            records.append({"id": sample_id, "split": split, "files": files})
        splits[split] = ids
    manifest = DatasetManifest(root=root, format_version=FORMAT_VERSION, splits=splits,
                               records=records, generator_config=generator_config or {})
    _write_json(root / "manifest.json", {
        "format_version": manifest.format_version,
        "splits": manifest.splits,
        "records": manifest.records,
        "generator_config": manifest.generator_config,
    })
    return manifest


def load_manifest(root) -> DatasetManifest:
    root = Path(root)
    path = root / "manifest.json"
    if not path.exists():
        raise DatasetError(f"no manifest.json under {root}")
    raw = json.loads(path.read_text())
    version = raw.get("format_version")
    if version != FORMAT_VERSION:
        raise DatasetError(f"manifest format version {version!r} unsupported, "
                           f"expected {FORMAT_VERSION!r}")
    return DatasetManifest(root=root, format_version=version, splits=raw["splits"],
                           records=raw["records"], generator_config=raw.get("generator_config", {}))


def _load_record(manifest: DatasetManifest, record: dict) -> Sample:
    d = manifest.record_dir(record)
    files = record["files"]
    for role, name in files.items():
        if not (d / name).exists():
            raise DatasetError(f"sample {record['id']}: missing {role} file {d / name}")
    panorama = np.asarray(Image.open(d / files["panorama"]).convert("RGB"))
    rate, wav = wavfile.read(d / files["audio"])
    audio = np.asarray(wav, dtype=np.float32).T
    if audio.ndim != 2 or audio.shape[0] != 8:
        raise DatasetError(f"sample {record['id']}: expected 8 audio channels, "
                           f"got shape {audio.shape}")
    meta = json.loads((d / files["meta"]).read_text())
    labels = None
    if "labels" in files:
        labels = np.asarray(Image.open(d / files["labels"]))
    rotation = _rotation_from_plain(meta.pop("rotation", None))
    meta.pop("sample_rate", None)
    return Sample(panorama=panorama, audio=audio, gt_labels=labels, rotation=rotation,
                  sample_rate=int(rate), meta=meta)


def read_dataset(root, split: str | None = None):
    """Yield Samples from a written dataset, optionally restricted to one split."""
    manifest = load_manifest(root)
    for record in manifest.records:
        if split is not None and record["split"] != split:
            continue
        yield _load_record(manifest, record)


def read_split(root, split: str):
    return list(read_dataset(root, split=split))


# ---------------------------------------------------------------------------
# External layout adapter
# ---------------------------------------------------------------------------

def _read_mono_wav(path: Path, clip_id: str):
    rate, data = wavfile.read(path)
    data = np.asarray(data)
    if data.ndim != 1:
        raise DatasetError(f"clip {clip_id}: {path.name} must be mono, got shape {data.shape}")
    if data.dtype == np.int16:
        data = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float32) / 2147483648.0
    else:
        data = data.astype(np.float32)
    return rate, data


def adapt_external_layout(root):
    """Yield unlabeled Samples from the per-clip external directory layout.

    Ground truth and head rotation do not exist in this layout; both are
    flagged absent on the returned samples.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"external layout root {root} is not a directory")
    clip_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not clip_dirs:
        warnings.warn(f"external layout root {root} contains no clip directories")
        return
    for clip in clip_dirs:
        images = [p for ext in ("png", "jpg", "jpeg") for p in clip.glob(f"panorama.{ext}")]
        if len(images) != 1:
            raise DatasetError(f"clip {clip.name}: expected one panorama image, "
                               f"found {len(images)}")
        mic_files = sorted(clip.glob("mic*.wav"))
        expected = [clip / f"mic{i}.wav" for i in range(1, 9)]
        if mic_files != expected:
            raise DatasetError(f"clip {clip.name}: expected 8 audio channels mic1..mic8, "
                               f"found {len(mic_files)}")
        panorama = np.asarray(Image.open(images[0]).convert("RGB"))
        rates, waves = zip(*(_read_mono_wav(p, clip.name) for p in expected))
        if len(set(rates)) != 1 or len({w.shape[0] for w in waves}) != 1:
            raise DatasetError(f"clip {clip.name}: audio channels disagree on rate or length")
        yield Sample(panorama=panorama, audio=np.stack(waves), gt_labels=None, rotation=None,
                     sample_rate=int(rates[0]),
                     meta={"clip_id": clip.name, "has_labels": False, "has_rotation": False})


# ---------------------------------------------------------------------------
# Generation pipeline
# ---------------------------------------------------------------------------

def build_dataset(cfg, root) -> DatasetManifest:
    """Generate train/val/test splits from an ExperimentConfig and persist them.

    Scene seeds are cfg.seed * 10^6 plus a split offset plus the index, so
    regeneration from the manifest's config snapshot is exact.
    """
    from .config import to_plain
    from .scene import generate_scene

    base = cfg.seed * 1_000_000
    plan = {"train": (0, cfg.data.n_train), "val": (100_000, cfg.data.n_val),
            "test": (200_000, cfg.data.n_test)}
    samples = {}
    for split, (offset, count) in plan.items():
        samples[split] = [generate_scene(base + offset + i, cfg.scene) for i in range(count)]
    generator_config = {"scene": to_plain(cfg.scene), "seed": cfg.seed,
                        "counts": {s: n for s, (_, n) in plan.items()}}
    return write_dataset(samples, root, generator_config=generator_config)


# ---------------------------------------------------------------------------
# Spectrogram cache
# ---------------------------------------------------------------------------

def cached_spectrogram(root, sample_id: str, audio: np.ndarray, params) -> np.ndarray:
    """8-channel log-magnitude spectrogram with an on-disk cache keyed by params."""
    from .audio import stft_magnitude

    cache_dir = Path(root) / "cache" / "spectrograms" / params.key()
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"{sample_id}.npz"
    if path.exists():
        with np.load(path) as z:
            return z["spec"]
    spec = stft_magnitude(audio, params)
    np.savez_compressed(path, spec=spec)
    return spec
