"""Scale-invariant SDR/SIR/SAR and plain SNR.

No mean removal is applied; pipeline signals are zero-mean by construction.
Every dB value is clipped to +/-``DB_CAP`` so CSV output stays finite.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError

DB_CAP = 100.0


@dataclass(frozen=True)
class MetricReport:
    si_sdr: float
    snr: float | None = None
    si_sir: float | None = None
    si_sar: float | None = None


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


def ratio_db(num, den):
    """``10 log10(num / den)`` clipped to the dB cap (0/0 counts as the cap)."""
    if den <= 0:
        return DB_CAP
    if num <= 0:
        return -DB_CAP
    return float(np.clip(10.0 * np.log10(num / den), -DB_CAP, DB_CAP))


def _project(v, onto):
    return (np.dot(v, onto) / np.dot(onto, onto)) * onto


def decompose(est, ref, noise):
    """Split ``est`` into target, interference and artifact components.

    ``e_target`` is the projection of ``est`` on ``ref``. The residual is
    projected on the part of ``noise`` orthogonal to ``ref`` to give
    ``e_interf``; what remains is ``e_artif``. All three are mutually
    orthogonal.
    """
    est, ref = _pair(est, ref)
    _, noise = _pair(est, noise)
    if not np.any(ref):
        raise DataError("reference signal is all zeros")
    e_target = _project(est, ref)
    residual = est - e_target
    noise_perp = noise - _project(noise, ref)
    if np.dot(noise_perp, noise_perp) <= 1e-30 * np.dot(noise, noise) or not np.any(noise):
        raise DataError("noise reference is zero or collinear with the target")
    e_interf = _project(residual, noise_perp)
    return e_target, e_interf, residual - e_interf


def si_sdr(est, ref):
    est, ref = _pair(est, ref)
    ref_energy = np.dot(ref, ref)
    if ref_energy <= 0:
        raise DataError("reference signal is all zeros")
    target = (np.dot(est, ref) / ref_energy) * ref
    resid = target - est
    return ratio_db(np.dot(target, target), np.dot(resid, resid))


def si_sir(est, ref, noise):
    e_target, e_interf, _ = decompose(est, ref, noise)
    return ratio_db(np.dot(e_target, e_target), np.dot(e_interf, e_interf))


def si_sar(est, ref, noise):
    e_target, _, e_artif = decompose(est, ref, noise)
    return ratio_db(np.dot(e_target, e_target), np.dot(e_artif, e_artif))


def snr_db(signal, noise):
    signal, noise = _pair(signal, noise)
    p_noise = np.mean(noise**2)
    if p_noise <= 0:
        raise DataError("noise signal is all zeros")
    return 10.0 * np.log10(np.mean(signal**2) / p_noise)


def report(est, ref, noise=None):
    if noise is None:
        return MetricReport(si_sdr=si_sdr(est, ref))
    return MetricReport(
        si_sdr=si_sdr(est, ref),
        snr=snr_db(ref, noise),
        si_sir=si_sir(est, ref, noise),
        si_sar=si_sar(est, ref, noise),
    )
