"""STFT and log-mel spectrograms for the audio pathway.

Spectrograms are (bins, frames) arrays. Frame ``k`` covers samples
``[k*hop, k*hop + n_fft)``; there is no centring or padding.
"""

from __future__ import annotations

import numpy as np


def _check(samples, n_fft, hop):
    if n_fft < 16 or n_fft & (n_fft - 1):
        raise ValueError(f"n_fft must be a power of two >= 16, got {n_fft}")
    if not 0 < hop <= n_fft:
        raise ValueError(f"hop must satisfy 0 < hop <= n_fft, got {hop}")
    if len(samples) < n_fft:
        raise ValueError(f"signal too short: {len(samples)} samples < n_fft={n_fft}")


def n_frames(n_samples: int, n_fft: int, hop: int) -> int:
    return (n_samples - n_fft) // hop + 1


def min_samples(n_out_frames: int, n_fft: int, hop: int) -> int:
    """Smallest signal length that yields ``n_out_frames`` STFT frames."""
    return n_fft + (n_out_frames - 1) * hop


def _frames(samples, n_fft, hop):
    x = np.asarray(samples, dtype=np.float64)
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames(len(x), n_fft, hop))[:, None]
    return x[idx]


def window_fn(name: str, n: int) -> np.ndarray:
    if name == "hann":
        # periodic Hann
        return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
    if name == "rect":
        return np.ones(n)
    raise ValueError(f"unknown window {name!r}")


def power_stft(samples, n_fft: int = 512, hop: int = 256, window: str = "hann") -> np.ndarray:
    _check(samples, n_fft, hop)
    spec = np.fft.rfft(_frames(samples, n_fft, hop) * window_fn(window, n_fft), axis=1)
    return (spec.real**2 + spec.imag**2).T


def stft(samples, n_fft: int = 512, hop: int = 256, window: str = "hann") -> np.ndarray:
    """Magnitude spectrogram with ``n_fft // 2 + 1`` bins."""
    _check(samples, n_fft, hop)
    spec = np.fft.rfft(_frames(samples, n_fft, hop) * window_fn(window, n_fft), axis=1)
    return np.abs(spec).T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sr: float) -> np.ndarray:
    """Triangular HTK-mel filterbank of shape (n_mels, n_fft // 2 + 1).

    Filter edges are snapped to FFT bins so every row has contiguous,
    non-empty support.
    """
    if not 4 <= n_mels <= n_fft // 2:
        raise ValueError(f"n_mels must satisfy 4 <= n_mels <= n_fft/2, got {n_mels}")
    n_bins = n_fft // 2 + 1
    edges_hz = mel_to_hz(np.linspace(0.0, hz_to_mel(sr / 2.0), n_mels + 2))
    edges = np.floor(edges_hz / sr * n_fft).astype(int)
    # strictly increasing edges keep each triangle at least one bin wide; the
    # last edge may sit one past Nyquist, where it only truncates the final ramp
    for i in range(1, len(edges)):
        edges[i] = max(edges[i], edges[i - 1] + 1)
    edges[-1] = min(edges[-1], n_bins)
    for i in range(len(edges) - 2, -1, -1):
        edges[i] = min(edges[i], edges[i + 1] - 1)
    k = np.arange(n_bins)[None, :]
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    return np.maximum(0.0, np.minimum((k - lo) / (mid - lo), (hi - k) / (hi - mid)))


def mel_spectrogram(samples, n_fft: int = 512, hop: int = 256, n_mels: int = 64, sr: float = 16000,
                    window: str = "hann") -> np.ndarray:
    """``log(1 + mel_filterbank @ power_stft)`` of shape (n_mels, frames)."""
    bank = mel_filterbank(n_mels, n_fft, sr)
    return np.log1p(bank @ power_stft(samples, n_fft, hop, window))
