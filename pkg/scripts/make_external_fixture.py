"""Regenerate the bundled 4-clip external-layout fixture under tests/fixtures.

The layout mirrors the documented per-clip structure: one middle-frame
panorama image plus eight mono audio clips.  Content is synthetic filler;
only the structure matters to the adapter.
"""

from pathlib import Path

import numpy as np
from PIL import Image
from scipy.io import wavfile

ROOT = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "external_clips"


def main():
    rng = np.random.default_rng(2024)
    for clip_idx in range(1, 5):
        clip = ROOT / f"clip_{clip_idx:04d}"
        clip.mkdir(parents=True, exist_ok=True)
        img = rng.integers(0, 255, (24, 48, 3)).astype(np.uint8)
        Image.fromarray(img, "RGB").save(clip / "panorama.png")
        for mic in range(1, 9):
            wave = (3000 * np.sin(2 * np.pi * (100 + 40 * mic) * np.arange(800) / 8000)
                    + 200 * rng.standard_normal(800)).astype(np.int16)
            wavfile.write(clip / f"mic{mic}.wav", 8000, wave)
    print(f"fixture written under {ROOT}")


if __name__ == "__main__":
    main()
