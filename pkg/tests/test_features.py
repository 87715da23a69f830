import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctc_seq.corpus import AudioClip
from ctc_seq.errors import CorruptFileError, TooShortError
from ctc_seq.features import (FeatureConfig, FeatureMatrix, decode_features, downsample_time,
                              encode_features, log_spectrogram, num_frames, read_features,
                              write_features)


def direct_power(segment, fft_size):
    """O(N^2) DFT of a Hann-windowed, zero-padded segment."""
    n = len(segment)
    window = np.array([0.5 - 0.5 * math.cos(2 * math.pi * i / n) for i in range(n)])
    x = np.zeros(fft_size)
    x[:n] = segment * window
    k = np.arange(fft_size // 2 + 1)[:, None]
    m = np.arange(fft_size)[None, :]
    basis = np.exp(-2j * np.pi * k * m / fft_size)
    return np.abs(basis @ x) ** 2


def test_one_second_defaults():
    cfg = FeatureConfig()
    assert cfg.window_len(22050) == 441
    assert cfg.hop_len(22050) == 220
    feat = log_spectrogram(AudioClip(np.random.default_rng(0).uniform(-1, 1, 22050), 22050))
    assert feat.frames.shape == (99, 257)
    assert feat.frame_rate_hz == pytest.approx(22050 / 220)
    assert np.all(np.isfinite(feat.frames))


def test_zero_clip_hits_floor():
    cfg = FeatureConfig(normalize=False)
    feat = log_spectrogram(AudioClip(np.zeros(4000), 16000), cfg)
    assert np.all(feat.frames == math.log(1e-10))


def test_normalized_zero_clip_is_finite():
    feat = log_spectrogram(AudioClip(np.zeros(4000), 16000))
    assert np.all(np.abs(feat.frames) < 1e-6)


def test_bin_centered_sine_peaks_in_its_bin():
    rate, fft_size, k = 16000, 512, 37
    t = np.arange(rate) / rate
    sine = 0.5 * np.sin(2 * np.pi * (k * rate / fft_size) * t)
    feat = log_spectrogram(AudioClip(sine, rate), FeatureConfig(fft_size=fft_size, normalize=False))
    assert np.all(np.argmax(feat.frames, axis=1) == k)


def test_matches_direct_dft_oracle(rng):
    for n_samples, rate, fft_size in [(2048, 16000, 512), (1000, 8000, 256), (441, 22050, 512)]:
        x = rng.uniform(-1, 1, n_samples)
        cfg = FeatureConfig(fft_size=fft_size, normalize=False, log_floor=1e-300)
        feat = log_spectrogram(AudioClip(x, rate), cfg)
        win, hop = cfg.window_len(rate), cfg.hop_len(rate)
        for t in range(feat.num_frames):
            want = direct_power(x[t * hop:t * hop + win], fft_size)
            got = np.exp(feat.frames[t])
            np.testing.assert_allclose(got, want, rtol=1e-6)


def test_normalization_standardizes_each_bin(rng):
    feat = log_spectrogram(AudioClip(rng.uniform(-1, 1, 8000), 8000))
    np.testing.assert_allclose(feat.frames.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(feat.frames.std(axis=0), 1.0, atol=1e-6)


def test_too_short():
    with pytest.raises(TooShortError):
        log_spectrogram(AudioClip(np.zeros(100), 22050))


def test_bad_configs():
    with pytest.raises(ValueError):
        log_spectrogram(AudioClip(np.zeros(22050), 22050), FeatureConfig(fft_size=256))
    with pytest.raises(ValueError):
        log_spectrogram(AudioClip(np.zeros(22050), 22050), FeatureConfig(hop_ms=30))


@settings(max_examples=1000, deadline=None)
@given(st.floats(0.02, 0.5), st.sampled_from([8000, 11025, 16000, 22050]),
       st.sampled_from([(20.0, 10.0), (25.0, 10.0), (20.0, 20.0), (32.0, 8.0)]))
def test_frame_count_formula(duration, rate, framing):
    window_ms, hop_ms = framing
    cfg = FeatureConfig(window_ms=window_ms, hop_ms=hop_ms, fft_size=1024, normalize=False)
    n = int(duration * rate)
    win, hop = cfg.window_len(rate), cfg.hop_len(rate)
    if n < win:
        with pytest.raises(TooShortError):
            log_spectrogram(AudioClip(np.zeros(n), rate), cfg)
        return
    feat = log_spectrogram(AudioClip(np.zeros(n), rate), cfg)
    assert feat.num_frames == (n - win) // hop + 1 == num_frames(n, win, hop)
    assert feat.num_bins == 513


def matrix(rows):
    return FeatureMatrix(np.asarray(rows, dtype=float).reshape(len(rows), -1), 100.0)


def test_downsample_identity():
    feat = matrix(np.arange(10))
    out = downsample_time(feat, 1)
    np.testing.assert_array_equal(out.frames, feat.frames)
    assert out.frame_rate_hz == 100.0


def test_downsample_examples():
    out = downsample_time(matrix(np.arange(8)), 4)
    assert out.frames[:, 0].tolist() == [3, 7]
    assert out.frame_rate_hz == 25.0
    assert downsample_time(matrix(np.arange(9)), 4).num_frames == 3
    assert downsample_time(matrix([5, 1, 2, 9, 0]), 4).frames[:, 0].tolist() == [9, 0]


def test_downsample_rejects_zero():
    with pytest.raises(ValueError):
        downsample_time(matrix([1]), 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 5), st.integers(0, 2 ** 31))
def test_downsample_composes(a, b, groups, seed):
    frames = np.random.default_rng(seed).standard_normal((a * b * groups, 3))
    feat = FeatureMatrix(frames, 100.0)
    twice = downsample_time(downsample_time(feat, a), b)
    once = downsample_time(feat, a * b)
    np.testing.assert_array_equal(twice.frames, once.frames)
    assert twice.frame_rate_hz == pytest.approx(once.frame_rate_hz)


@given(st.integers(1, 40), st.integers(1, 7))
def test_downsample_length_is_ceiling(T, factor):
    assert downsample_time(matrix(np.arange(T)), factor).num_frames == -(-T // factor)


def test_feature_dump_round_trip(tmp_path, rng):
    frames = rng.standard_normal((7, 5)).astype(np.float32)
    data = encode_features(frames)
    assert data[:4] == b"FTRS" and len(data) == 12 + 4 * 35
    np.testing.assert_array_equal(decode_features(data), frames)
    write_features(tmp_path / "x.ftrs", frames)
    np.testing.assert_array_equal(read_features(tmp_path / "x.ftrs"), frames)
    with pytest.raises(CorruptFileError):
        decode_features(data[:-4])
    with pytest.raises(CorruptFileError):
        decode_features(b"XXXX" + data[4:])
