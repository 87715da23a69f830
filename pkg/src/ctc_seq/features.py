"""Log-spectrogram features and time-axis max-pool downsampling."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import AudioClip
from .errors import CorruptFileError, TooShortError

FEATURE_MAGIC = b"FTRS"


@dataclass(frozen=True)
class FeatureConfig:
    window_ms: float = 20.0
    hop_ms: float = 10.0
    fft_size: int = 512
    log_floor: float = 1e-10
    normalize: bool = True

    def window_len(self, sample_rate_hz: int) -> int:
        return int(round(self.window_ms * 1e-3 * sample_rate_hz))

    def hop_len(self, sample_rate_hz: int) -> int:
        return int(round(self.hop_ms * 1e-3 * sample_rate_hz))

    def validate(self, sample_rate_hz: int) -> None:
        if self.hop_ms <= 0 or self.hop_ms > self.window_ms:
            raise ValueError(f"need 0 < hop_ms <= window_ms, got {self.hop_ms}, {self.window_ms}")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")
        win = self.window_len(sample_rate_hz)
        if win < 1 or self.hop_len(sample_rate_hz) < 1:
            raise ValueError("window and hop must span at least one sample")
        if self.fft_size < win:
            raise ValueError(f"fft_size {self.fft_size} < window length {win} samples")


@dataclass
class FeatureMatrix:
    frames: np.ndarray
    frame_rate_hz: float
    config: FeatureConfig = field(default_factory=FeatureConfig)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_bins(self) -> int:
        return self.frames.shape[1]


def num_frames(num_samples: int, window_len: int, hop_len: int) -> int:
    if num_samples < window_len:
        return 0
    return (num_samples - window_len) // hop_len + 1


def power_spectrogram(samples: np.ndarray, window_len: int, hop_len: int, fft_size: int) -> np.ndarray:
    """|rfft(hann * segment)|^2 for each frame, shape (T, fft_size // 2 + 1)."""
    samples = np.asarray(samples, dtype=np.float64)
    n = num_frames(len(samples), window_len, hop_len)
    idx = np.arange(window_len)[None, :] + hop_len * np.arange(n)[:, None]
    # periodic Hann
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(window_len) / window_len)
    spectrum = np.fft.rfft(samples[idx] * window, n=fft_size, axis=1)
    return spectrum.real ** 2 + spectrum.imag ** 2


def log_spectrogram(clip: AudioClip, cfg: FeatureConfig | None = None) -> FeatureMatrix:
    """Compute log power spectrogram frames for one clip.

    Window and hop lengths are derived from ``cfg`` in milliseconds and the
    clip's own sample rate, so clips at any rate are handled. With
    ``cfg.normalize`` each frequency bin is standardized over the utterance.

    Raises
    ------
    TooShortError
        If the clip holds fewer samples than one window.
    """
    cfg = cfg or FeatureConfig()
    rate = clip.sample_rate_hz
    cfg.validate(rate)
    win, hop = cfg.window_len(rate), cfg.hop_len(rate)
    if len(clip.samples) < win:
        raise TooShortError(
            f"clip has {len(clip.samples)} samples, shorter than one {win}-sample window"
        )
    power = power_spectrogram(clip.samples, win, hop, cfg.fft_size)
    frames = np.log(np.maximum(power, cfg.log_floor))
    if cfg.normalize:
        frames = (frames - frames.mean(axis=0)) / (frames.std(axis=0) + 1e-8)
    return FeatureMatrix(frames, rate / hop, cfg)


def downsample_time(feat: FeatureMatrix, factor: int) -> FeatureMatrix:
    """Max-pool frames in non-overlapping groups of ``factor`` along time.

    A trailing partial group is pooled on its own, so the output has
    ``ceil(T / factor)`` rows.
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return replace(feat, frames=feat.frames.copy())
    frames = feat.frames
    t_in, n_bins = frames.shape
    t_out = -(-t_in // factor)
    pad = t_out * factor - t_in
    if pad:
        frames = np.concatenate([frames, np.full((pad, n_bins), -np.inf)], axis=0)
    pooled = frames.reshape(t_out, factor, n_bins).max(axis=1)
    return FeatureMatrix(pooled, feat.frame_rate_hz / factor, feat.config)


def encode_features(frames: np.ndarray) -> bytes:
    frames = np.asarray(frames)
    t, f = frames.shape
    return FEATURE_MAGIC + struct.pack("<II", t, f) + frames.astype("<f4").tobytes()


def decode_features(data: bytes) -> np.ndarray:
    if data[:4] != FEATURE_MAGIC or len(data) < 12:
        raise CorruptFileError("not a feature dump (bad magic)")
    t, f = struct.unpack_from("<II", data, 4)
    body = data[12:]
    if len(body) != 4 * t * f:
        raise CorruptFileError(f"feature dump body is {len(body)} bytes, expected {4 * t * f}")
    return np.frombuffer(body, dtype="<f4").reshape(t, f).astype(np.float32)


def write_features(path, frames: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_features(frames))


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_features(fh.read())
