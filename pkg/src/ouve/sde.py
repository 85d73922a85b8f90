"""The OUVE forward process: mean-reverting drift towards the corrupted
spectrogram ``y`` combined with a variance-exploding noise schedule.

All functions take complex arrays of any shape. ``t`` may be a scalar or a
1-D array with one entry per leading (batch) item.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeMismatchError
from .spectral import TransformParams, compress, decompress, istft, stft, check_waveform

NOISE_CONVENTIONS = ("split-half", "per-part-unit")
SNR_CAP_DB = 99.0


@dataclass(frozen=True)
class SdeParams:
    gamma: float = 1.5
    sigma_min: float = 0.05
    sigma_max: float = 0.5
    t_horizon: float = 1.0
    t_eps: float = 0.03
    noise_convention: str = "split-half"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError(
                f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}"
            )
        if not 0 < self.t_eps < self.t_horizon:
            raise ValueError(f"need 0 < t_eps < t_horizon, got {self.t_eps}, {self.t_horizon}")
        if self.noise_convention not in NOISE_CONVENTIONS:
            raise ValueError(
                f"noise_convention must be one of {NOISE_CONVENTIONS}, got {self.noise_convention!r}"
            )

    @property
    def log_ratio(self):
        return np.log(self.sigma_max / self.sigma_min)

    @property
    def noise_power(self):
        """E|z|^2 of one standard complex draw under the active convention."""
        return 1.0 if self.noise_convention == "split-half" else 2.0


def _check_same_shape(a, b, what="x and y"):
    if np.shape(a) != np.shape(b):
        raise ShapeMismatchError(f"{what} must have the same shape, got {np.shape(a)} and {np.shape(b)}")


def _check_t(t, p, lower=0.0):
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < lower) or np.any(t_arr > p.t_horizon) or not np.all(np.isfinite(t_arr)):
        raise DataError(f"process time out of range [{lower}, {p.t_horizon}]: {t}")
    return t_arr


def _bcast(t_arr, ndim):
    """Reshape per-item times so they broadcast over trailing axes."""
    t_arr = np.asarray(t_arr)
    if t_arr.ndim == 0 or ndim <= 1:
        return t_arr
    return t_arr.reshape(t_arr.shape + (1,) * (ndim - t_arr.ndim))


def drift(x, y, p):
    _check_same_shape(x, y)
    return p.gamma * (np.asarray(y) - np.asarray(x))


def diffusion_coeff(t, p):
    t = _check_t(t, p)
    return p.sigma_min * (p.sigma_max / p.sigma_min) ** t * np.sqrt(2.0 * p.log_ratio)


def mean_weight(t, p):
    """Weight of the clean signal in the process mean, ``exp(-gamma t)``."""
    return np.exp(-p.gamma * _check_t(t, p))


def mean(x0, y, t, p):
    _check_same_shape(x0, y, "x0 and y")
    w = _bcast(mean_weight(t, p), np.ndim(x0))
    return w * np.asarray(x0) + (1.0 - w) * np.asarray(y)


def variance(t, p):
    t = _check_t(t, p)
    lr = p.log_ratio
    ratio = p.sigma_max / p.sigma_min
    return (
        p.sigma_min**2 * (ratio ** (2.0 * t) - np.exp(-2.0 * p.gamma * t)) * lr / (p.gamma + lr)
    )


def std(t, p):
    return np.sqrt(variance(t, p))


def sample_complex_gaussian(shape, scale, rng, convention="split-half"):
    """Circularly-symmetric complex Gaussian draws.

    ``split-half`` gives each of the real and imaginary parts variance
    ``scale**2 / 2``; ``per-part-unit`` gives each part variance ``scale**2``.
    """
    if scale < 0:
        raise ValueError(f"scale must be non-negative, got {scale}")
    part = np.sqrt(0.5) if convention == "split-half" else 1.0
    if convention not in NOISE_CONVENTIONS:
        raise ValueError(f"unknown noise convention {convention!r}")
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (scale * part) * (re + 1j * im)


def standard_noise(shape, p, rng):
    return sample_complex_gaussian(shape, 1.0, rng, p.noise_convention)


def perturb(x0, y, t, p, rng):
    """Draw ``x_t = mean(x0, y, t) + std(t) z``; returns ``(x_t, z)``."""
    _check_same_shape(x0, y, "x0 and y")
    _check_t(t, p, lower=p.t_eps)
    z = standard_noise(np.shape(x0), p, rng)
    s = _bcast(std(t, p), np.ndim(x0))
    return mean(x0, y, t, p) + s * z, z


def sample_prior(y, p, rng):
    y = np.asarray(y, dtype=np.complex128)
    return y + std(p.t_horizon, p) * standard_noise(y.shape, p, rng)


def kernel_score(x_t, x0, y, t, p):
    """Score of the perturbation kernel, ``-(x_t - mean) / std(t)**2``."""
    _check_same_shape(x_t, x0, "x_t and x0")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < p.t_eps):
        raise DataError(f"kernel score needs t >= t_eps={p.t_eps}, got {t}")
    var = _bcast(variance(t_arr, p), np.ndim(x_t))
    return -(np.asarray(x_t) - mean(x0, y, t_arr, p)) / var


def prior_mismatch(x0, y, p):
    """Norm of the gap between the forward mean at T and the reverse-process start."""
    return float(np.linalg.norm(mean(x0, y, p.t_horizon, p) - np.asarray(y)))


def forward_paths(x0, y, t_grid, n_paths, p, rng):
    """Sample paths of the scalar forward process on ``t_grid`` (starting at ``x0``).

    Uses the exact Gaussian transition between grid points, so there is no
    discretisation error. Returns an array of shape ``(len(t_grid), n_paths)``.
    """
    t_grid = np.asarray(t_grid, dtype=np.float64)
    out = np.empty((len(t_grid), n_paths), dtype=np.complex128)
    x = np.full(n_paths, mean(np.asarray(x0), np.asarray(y), t_grid[0], p), dtype=np.complex128)
    x = x + std(t_grid[0], p) * standard_noise(n_paths, p, rng)
    out[0] = x
    for k in range(1, len(t_grid)):
        h = t_grid[k] - t_grid[k - 1]
        decay = np.exp(-p.gamma * h)
        var_step = variance(t_grid[k], p) - decay**2 * variance(t_grid[k - 1], p)
        x = decay * x + (1.0 - decay) * y + np.sqrt(max(var_step, 0.0)) * standard_noise(n_paths, p, rng)
        out[k] = x
    return out


def snr_of_mean(x0, y, t_grid, p, tp=TransformParams()):
    """Time-domain SNR of the process mean for a clean/corrupted waveform pair.

    The mean is formed in the compressed spectral domain, mapped back to a
    waveform, and compared against the clean signal; whatever differs from the
    clean waveform counts as noise. Returns a list of ``(t, snr_db)``; exact
    agreement is reported as ``SNR_CAP_DB``.
    """
    x0 = check_waveform(x0)
    y = check_waveform(y)
    if len(x0) != len(y):
        raise DataError(f"length mismatch: {len(x0)} vs {len(y)}")
    X0 = compress(stft(x0), tp)
    Y = compress(stft(y), tp)
    p_speech = np.mean(x0**2)
    curve = []
    for t in np.asarray(t_grid, dtype=np.float64):
        mu = X0.replace(mean(X0.bins, Y.bins, t, p))
        mu_wave = istft(decompress(mu, tp), len(x0))
        p_noise = np.mean((mu_wave - x0) ** 2)
        if p_noise <= 0 or p_speech <= 0:
            snr = SNR_CAP_DB
        else:
            snr = min(10.0 * np.log10(p_speech / p_noise), SNR_CAP_DB)
        curve.append((float(t), float(snr)))
    return curve
