"""Training loop over waveform pairs: random crops of compressed spectrograms."""

import numpy as np

from .errors import DataError
from .score import training_step
from .spectral import TransformParams, to_compressed

SMOOTH_WINDOW = 50


def spectrogram_pairs(pairs, tp=TransformParams()):
    """Compressed ``(clean, corrupted)`` spectrogram stacks from waveform pairs."""
    if not pairs:
        raise DataError("no training pairs")
    X0, Y = [], []
    for clean, noisy in pairs:
        if len(clean) != len(noisy):
            raise DataError(f"pair length mismatch: {len(clean)} vs {len(noisy)}")
        X0.append(to_compressed(clean, tp))
        Y.append(to_compressed(noisy, tp))
    return X0, Y


def crop_batch(X0, Y, batch_size, crop, rng):
    """Random ``crop``-frame windows from random pairs, shape ``(B, F, crop)``."""
    idx = rng.integers(0, len(X0), batch_size)
    xs, ys = [], []
    for i in idx:
        n = X0[i].shape[1]
        if n < crop:
            raise DataError(f"pair {i} has {n} frames, fewer than crop={crop}")
        s = rng.integers(0, n - crop + 1)
        xs.append(X0[i][:, s:s + crop])
        ys.append(Y[i][:, s:s + crop])
    return np.stack(xs), np.stack(ys)


def train(net, X0, Y, steps, p, rng, lr=1e-4, batch_size=16, crop=8, on_step=None):
    """Run ``steps`` DSM updates and return the per-step losses."""
    losses = []
    for step in range(steps):
        batch = crop_batch(X0, Y, batch_size, crop, rng)
        losses.append(training_step(net, batch, p, rng, lr))
        if on_step is not None:
            on_step(step, losses)
    return np.asarray(losses)


def smoothed(losses, window=SMOOTH_WINDOW):
    """``(initial, final)`` means over the first and last ``window`` steps."""
    losses = np.asarray(losses)
    w = min(window, len(losses))
    if w == 0:
        raise DataError("no losses to smooth")
    return float(np.mean(losses[:w])), float(np.mean(losses[-w:]))
