"""STFT front end and the magnitude-compressing amplitude transform.

Waveforms are plain 1-D float64 arrays at ``SAMPLE_RATE``. Spectrograms are
wrapped in :class:`Spectrogram` so that the compression state travels with the
data and double (de)compression is caught.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .errors import DataError

SAMPLE_RATE = 16000
WINDOW_LENGTH = 510
HOP_LENGTH = 128
N_FREQ = WINDOW_LENGTH // 2 + 1  # 256


def hann_window(n=WINDOW_LENGTH):
    """Periodic Hann window (the DFT-even variant used for spectral analysis)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


_WINDOW = hann_window()


@dataclass(frozen=True)
class TransformParams:
    alpha: float = 0.5
    beta: float = 0.15

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.beta > 0.0:
            raise ValueError(f"beta must be positive, got {self.beta}")


@dataclass(frozen=True)
class Spectrogram:
    """Complex T-F grid of shape ``(N_FREQ, n_frames)``."""

    bins: np.ndarray
    compressed: bool = False

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.complex128)
        if bins.ndim != 2 or bins.shape[0] != N_FREQ:
            raise DataError(f"spectrogram must have shape ({N_FREQ}, frames), got {bins.shape}")
        object.__setattr__(self, "bins", bins)

    @property
    def n_frames(self):
        return self.bins.shape[1]

    def replace(self, bins, compressed=None):
        return Spectrogram(bins, self.compressed if compressed is None else compressed)


def n_frames_for(n_samples):
    """Frame count under centre padding: ``1 + n_samples // HOP_LENGTH``."""
    return 1 + n_samples // HOP_LENGTH


def check_waveform(w):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1:
        raise DataError(f"waveform must be one-dimensional, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise DataError("waveform contains non-finite samples")
    return w


def stft(w):
    w = check_waveform(w)
    if len(w) < WINDOW_LENGTH:
        raise DataError(f"waveform too short for STFT: {len(w)} < {WINDOW_LENGTH} samples")
    pad = WINDOW_LENGTH // 2
    padded = np.pad(w, pad, mode="reflect")
    frames = sliding_window_view(padded, WINDOW_LENGTH)[::HOP_LENGTH]
    spec = np.fft.rfft(frames * _WINDOW, n=WINDOW_LENGTH, axis=-1)
    return Spectrogram(spec.T.copy(), compressed=False)


def istft(s, target_len):
    """Weighted overlap-add inverse, trimmed or zero-padded to ``target_len``."""
    if s.compressed:
        raise DataError("istft needs an uncompressed spectrogram; decompress first")
    n = s.n_frames
    if n < 1:
        raise DataError("spectrogram has no frames")
    frames = np.fft.irfft(s.bins.T, n=WINDOW_LENGTH, axis=-1) * _WINDOW
    signal = kernels.overlap_add(np.ascontiguousarray(frames), HOP_LENGTH)
    wsum = kernels.overlap_add(np.ascontiguousarray(np.tile(_WINDOW**2, (n, 1))), HOP_LENGTH)
    nonzero = wsum > 1e-11
    signal[nonzero] /= wsum[nonzero]
    pad = WINDOW_LENGTH // 2
    out = signal[pad:pad + target_len]
    if len(out) < target_len:
        out = np.concatenate([out, np.zeros(target_len - len(out))])
    return out


def compress(s, p=TransformParams()):
    if s.compressed:
        raise DataError("spectrogram is already compressed")
    c = s.bins
    mag = np.abs(c)
    gain = np.zeros_like(mag)
    nz = mag > 0
    # scaling by a positive real keeps the phase; angle(0) := 0
    gain[nz] = p.beta * mag[nz] ** (p.alpha - 1.0)
    return Spectrogram(c * gain, compressed=True)


def decompress(s, p=TransformParams()):
    if not s.compressed:
        raise DataError("spectrogram is not compressed")
    c = s.bins
    mag = np.abs(c)
    gain = np.zeros_like(mag)
    nz = mag > 0
    gain[nz] = (mag[nz] / p.beta) ** (1.0 / p.alpha) / mag[nz]
    return Spectrogram(c * gain, compressed=False)


def to_compressed(w, p=TransformParams()):
    """Waveform to compressed spectrogram bins."""
    return compress(stft(w), p).bins


def from_compressed(bins, n_samples, p=TransformParams()):
    return istft(decompress(Spectrogram(bins, compressed=True), p), n_samples)
