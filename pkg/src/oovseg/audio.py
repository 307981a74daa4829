"""Microphone pair selection, binaural extraction, and spectrogram transforms.

The eight microphones form four binaural pairs facing front, right, back and
left.  Channel ids are 1-based; the audio array row for mic id ``m`` is
``m - 1``.  Within a pair the lower id is the left ear.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Pair definitions: facing -> (left ear id, right ear id, facing azimuth deg).
PAIR_TABLE = {
    "front": (2, 5, 0.0),
    "right": (4, 7, 90.0),
    "left": (3, 8, -90.0),
    "back": (1, 6, 180.0),
}


@dataclass(frozen=True)
class MicPair:
    ids: frozenset
    facing: str

    def __post_init__(self):
        if self.facing not in PAIR_TABLE:
            raise ValueError(f"unknown facing {self.facing!r}")
        left, right, _ = PAIR_TABLE[self.facing]
        if self.ids != frozenset((left, right)):
            raise ValueError(f"ids {set(self.ids)} inconsistent with facing {self.facing!r}")

    @property
    def left_id(self) -> int:
        return PAIR_TABLE[self.facing][0]

    @property
    def right_id(self) -> int:
        return PAIR_TABLE[self.facing][1]

    @property
    def facing_deg(self) -> float:
        return PAIR_TABLE[self.facing][2]


def _pair(facing: str) -> MicPair:
    left, right, _ = PAIR_TABLE[facing]
    return MicPair(frozenset((left, right)), facing)


ALL_PAIRS = tuple(_pair(f) for f in ("front", "right", "left", "back"))


def select_mic_pair(u: float) -> MicPair:
    """Map horizontal head rotation u (degrees) to its binaural pair.

    Sectors are half-open and left-closed: [-45, 45) front, [45, 135) right,
    [-135, -45) left, and the remaining quarter of the circle maps to the
    back-facing pair.
    """
    if not (-180.0 < u < 180.0):
        raise ValueError(f"u must lie in (-180, 180), got {u}")
    if -45.0 <= u < 45.0:
        return _pair("front")
    if 45.0 <= u < 135.0:
        return _pair("right")
    if -135.0 <= u < -45.0:
        return _pair("left")
    return _pair("back")


def extract_binaural(audio: np.ndarray, pair: MicPair) -> np.ndarray:
    """Return the (left, right) channels of the pair, samples untouched."""
    if audio.ndim != 2 or audio.shape[0] != 8:
        raise ValueError(f"expected 8xT audio, got shape {audio.shape}")
    return np.stack([audio[pair.left_id - 1], audio[pair.right_id - 1]])


@dataclass(frozen=True)
class StftParams:
    """STFT framing parameters; frames are centered with zero padding."""

    sample_rate: int
    n_fft: int
    hop: int
    window: str = "hann"

    @property
    def n_freqs(self) -> int:
        return self.n_fft // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        return 1 + n_samples // self.hop

    def key(self) -> str:
        return f"sr{self.sample_rate}_fft{self.n_fft}_hop{self.hop}_{self.window}"


# Reproduces a 257 x 601 spectrogram for a 2 s clip.
FULL_STFT = StftParams(sample_rate=48000, n_fft=512, hop=160)
DESK_STFT = StftParams(sample_rate=16000, n_fft=256, hop=128)


@dataclass(frozen=True)
class Spectrogram:
    """Nonnegative log-magnitude time-frequency array, channels x F x Tm."""

    values: np.ndarray
    role: str
    params: StftParams

    def __post_init__(self):
        if self.role not in ("isp", "osp", "dsp"):
            raise ValueError(f"unknown spectrogram role {self.role!r}")

    @property
    def shape(self):
        return self.values.shape


def _window(params: StftParams) -> np.ndarray:
    if params.window != "hann":
        raise ValueError(f"unsupported window {params.window!r}")
    n = params.n_fft
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_magnitude(wave: np.ndarray, params: StftParams) -> np.ndarray:
    """log(1 + |STFT|) of a C x T waveform, shape C x (n_fft/2 + 1) x Tm."""
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim == 1:
        wave = wave[None, :]
    n_ch, n_samples = wave.shape
    if n_samples < params.n_fft:
        raise ValueError(f"clip of {n_samples} samples shorter than n_fft={params.n_fft}")
    pad = params.n_fft // 2
    padded = np.pad(wave, ((0, 0), (pad, pad)))
    n_frames = params.n_frames(n_samples)
    starts = np.arange(n_frames) * params.hop
    idx = starts[:, None] + np.arange(params.n_fft)[None, :]
    frames = padded[:, idx] * _window(params)[None, None, :]
    mag = np.abs(np.fft.rfft(frames, axis=-1))  # C x Tm x F
    return np.log1p(mag).transpose(0, 2, 1).astype(np.float32)


def stft_spectrogram(wave: np.ndarray, params: StftParams, role: str = "isp") -> Spectrogram:
    if role == "dsp":
        raise ValueError("dsp spectrograms come from difference_spectrograms")
    return Spectrogram(stft_magnitude(wave, params), role, params)


def _others_by_min_id(pair: MicPair):
    others = [p for p in ALL_PAIRS if p.facing != pair.facing]
    return sorted(others, key=lambda p: min(p.ids))


def difference_spectrograms(audio: np.ndarray, pair: MicPair, params: StftParams) -> Spectrogram:
    """Per-ear log-magnitude differences against the three other directions.

    Channels 0..2 are left-ear differences, 3..5 right-ear, with the other
    directions ordered by their smaller mic id ascending.
    """
    if audio.ndim != 2 or audio.shape[0] != 8:
        raise ValueError(f"expected 8xT audio, got shape {audio.shape}")
    spec8 = stft_magnitude(audio, params)
    others = _others_by_min_id(pair)
    chans = []
    for side in ("left", "right"):
        own = spec8[getattr(pair, f"{side}_id") - 1]
        for other in others:
            chans.append(own - spec8[getattr(other, f"{side}_id") - 1])
    return Spectrogram(np.stack(chans), "dsp", params)


def eight_channel_spectrogram(audio: np.ndarray, params: StftParams) -> Spectrogram:
    """All eight channels in mic-id order; the auditory teacher's input."""
    if audio.ndim != 2 or audio.shape[0] != 8:
        raise ValueError(f"expected 8xT audio, got shape {audio.shape}")
    return Spectrogram(stft_magnitude(audio, params), "isp", params)


def drop_ear(binaural: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Replace one ear, chosen uniformly, with a copy of the other."""
    if binaural.ndim != 2 or binaural.shape[0] != 2:
        raise ValueError(f"expected 2xT binaural audio, got shape {binaural.shape}")
    out = binaural.copy()
    dropped = int(rng.integers(2))
    out[dropped] = out[1 - dropped]
    return out
