"""Desk-scale data: WAV I/O, synthetic clean and noise signals, SNR-exact
mixing, and an exponential-decay reverb surrogate.

A dataset is described by a manifest of ``seed,kind,snr_db,duration_s,t60_s``
lines; regenerating from the same manifest is bit-exact.
"""

import logging
import os
import wave
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import AudioFormatError, DataError, ManifestError
from .metrics import snr_db
from .spectral import SAMPLE_RATE

log = logging.getLogger(__name__)

PEAK = 0.99
CLEAN_KINDS = ("harmonic", "chirp", "speech")
NOISE_KINDS = ("white", "pink", "babble", "none")
FFT_CONV_MIN_TAPS = 512
BABBLE_TALKERS = 6
# per-sample std of the reverb tail; gives a DRR near -9 dB at T60 = 0.5 s
RIR_TAIL_STD = 0.117


@dataclass(frozen=True)
class MixSpec:
    snr_db: float
    seed: int = 0
    noise_kind: str = "white"
    duration_s: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        if not self.duration_s > 0:
            raise ValueError("duration_s must be positive")
        if self.noise_kind not in NOISE_KINDS:
            raise ValueError(f"noise_kind must be one of {NOISE_KINDS}")


@dataclass(frozen=True)
class ReverbSpec:
    t60_s: float
    seed: int = 0

    def __post_init__(self):
        if not 0.1 <= self.t60_s <= 2.0:
            raise ValueError(f"t60_s must lie in [0.1, 2.0], got {self.t60_s}")


class Mix(NamedTuple):
    mixture: np.ndarray
    noise: np.ndarray
    clean: np.ndarray
    gain: float


def _peak_normalize(w, peak=PEAK):
    m = np.max(np.abs(w))
    return w * (peak / m) if m > 0 else w


def _envelope(n, rng, rate_hz=(2.5, 5.0)):
    """Smooth syllable-like amplitude modulation between ~0.05 and 1."""
    t = np.arange(n) / SAMPLE_RATE
    rate = rng.uniform(*rate_hz)
    phase = rng.uniform(0, 2 * np.pi)
    env = 0.5 * (1 - np.cos(2 * np.pi * rate * t + phase))
    return 0.05 + 0.95 * env**1.5


def _harmonic_source(n, rng, f0=None, vibrato=0.0):
    t = np.arange(n) / SAMPLE_RATE
    f0 = rng.uniform(110.0, 260.0) if f0 is None else f0
    n_harm = int(rng.integers(3, 9))
    inst_f0 = f0 * (1.0 + vibrato * np.sin(2 * np.pi * rng.uniform(3, 6) * t))
    phase = 2 * np.pi * np.cumsum(inst_f0) / SAMPLE_RATE
    amps = rng.uniform(0.3, 1.0, n_harm) / np.arange(1, n_harm + 1)
    offsets = rng.uniform(0, 2 * np.pi, n_harm)
    src = sum(a * np.sin((k + 1) * phase + o) for k, (a, o) in enumerate(zip(amps, offsets)))
    return src, f0, n_harm


def _formant_filter(x, rng):
    """Two time-varying resonators with slowly drifting centre frequencies."""
    n = len(x)
    t = np.arange(n) / SAMPLE_RATE
    out = np.zeros(n)
    for lo, hi, bw in ((300.0, 900.0, 90.0), (900.0, 2500.0, 140.0)):
        centre = rng.uniform(lo, hi)
        drift_rate = rng.uniform(0.5, 2.0)
        freq = np.clip(centre * (1 + 0.25 * np.sin(2 * np.pi * drift_rate * t + rng.uniform(0, 6.3))), lo, hi)
        radius = np.exp(-np.pi * bw / SAMPLE_RATE)
        a1 = -2 * radius * np.cos(2 * np.pi * freq / SAMPLE_RATE)
        a2 = np.full(n, radius**2)
        b0 = np.full(n, 1 - radius)
        out += kernels.resonator(np.ascontiguousarray(x), b0, np.ascontiguousarray(a1), a2)
    return out


def synth_clean(kind="harmonic", duration=1.0, seed=0):
    """Deterministic synthetic 'clean speech' at ``SAMPLE_RATE``, peak 0.9."""
    if duration < 0.5:
        raise DataError(f"duration must be at least 0.5 s, got {duration}")
    if kind not in CLEAN_KINDS:
        raise DataError(f"unknown clean kind {kind!r}; expected one of {CLEAN_KINDS}")
    rng = np.random.default_rng(seed)
    n = int(round(duration * SAMPLE_RATE))
    if kind == "harmonic":
        src, _, _ = _harmonic_source(n, rng)
        w = src * _envelope(n, rng)
    elif kind == "chirp":
        t = np.arange(n) / SAMPLE_RATE
        f_start, f_end = rng.uniform(150, 400), rng.uniform(1200, 3000)
        inst = f_start + (f_end - f_start) * t / duration
        w = np.sin(2 * np.pi * np.cumsum(inst) / SAMPLE_RATE) * _envelope(n, rng)
    else:
        src, _, _ = _harmonic_source(n, rng, vibrato=0.03)
        w = _formant_filter(src, rng) * _envelope(n, rng)
    return _peak_normalize(w, 0.9)


def synth_noise(kind, n, seed=0):
    """Unit-power noise of ``n`` samples."""
    rng = np.random.default_rng(seed)
    if kind == "white":
        w = rng.standard_normal(n)
    elif kind == "pink":
        spec = np.fft.rfft(rng.standard_normal(n))
        f = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
        f[0] = f[1]
        w = np.fft.irfft(spec / np.sqrt(f), n)
    elif kind == "babble":
        dur = max(n / SAMPLE_RATE, 0.5)
        seeds = rng.integers(0, 2**31, BABBLE_TALKERS)
        talkers = [synth_clean("speech", dur, int(s))[:n] for s in seeds]
        w = sum(tk / np.sqrt(np.mean(tk**2)) for tk in talkers)
    else:
        raise DataError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS[:-1]}")
    w = w - np.mean(w)
    return w / np.sqrt(np.mean(w**2))


def mix_at_snr(clean, noise, snr):
    """Scale ``noise`` so that ``snr_db(clean, noise) == snr`` and add.

    If the mixture would clip, clean, noise and mixture share one gain so the
    SNR is untouched; the gain is returned with the result.
    """
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if clean.shape != noise.shape:
        raise DataError(f"length mismatch: {clean.shape} vs {noise.shape}")
    p_clean, p_noise = np.mean(clean**2), np.mean(noise**2)
    if p_clean <= 0 or p_noise <= 0:
        raise DataError("clean and noise must both be nonzero")
    scaled = noise * np.sqrt(p_clean / (p_noise * 10.0 ** (snr / 10.0)))
    mixture = clean + scaled
    gain = 1.0
    peak = np.max(np.abs(mixture))
    if peak > PEAK:
        gain = PEAK / peak
        clean, scaled, mixture = clean * gain, scaled * gain, mixture * gain
    return Mix(mixture, scaled, clean, gain)


def make_rir(t60, seed=0):
    """Direct path at lag 0 plus white noise decaying by 60 dB over ``t60``."""
    if not t60 > 0:
        raise DataError(f"t60 must be positive, got {t60}")
    rng = np.random.default_rng(seed)
    n = max(int(np.ceil(1.5 * t60 * SAMPLE_RATE)), 2)
    t = np.arange(n) / SAMPLE_RATE
    rir = RIR_TAIL_STD * rng.standard_normal(n) * np.exp(-6.91 * t / t60)
    rir[0] = 1.0
    return rir


def convolve(x, h):
    """Causal linear convolution truncated to ``len(x)``."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if len(h) < FFT_CONV_MIN_TAPS:
        return np.convolve(x, h)[:len(x)]
    n = len(x) + len(h) - 1
    nfft = 1 << (n - 1).bit_length()
    return np.fft.irfft(np.fft.rfft(x, nfft) * np.fft.rfft(h, nfft), nfft)[:len(x)]


def synth_reverb(clean, spec):
    return convolve(clean, make_rir(spec.t60_s, spec.seed))


def energy_decay_curve(h):
    """Schroeder backward integral in dB, normalised to 0 dB at lag 0."""
    e = np.cumsum((np.asarray(h) ** 2)[::-1])[::-1]
    return 10.0 * np.log10(e / e[0])


# WAV I/O ---------------------------------------------------------------


def read_wav(path):
    try:
        with wave.open(os.fspath(path), "rb") as fh:
            channels, width, rate = fh.getnchannels(), fh.getsampwidth(), fh.getframerate()
            if fh.getcomptype() != "NONE":
                raise AudioFormatError(f"{path}: compressed WAV ({fh.getcomptype()}) is not supported")
            if channels != 1:
                raise AudioFormatError(f"{path}: expected mono audio, found {channels} channels")
            if width != 2:
                raise AudioFormatError(f"{path}: expected 16-bit PCM, found {8 * width}-bit samples")
            if rate != SAMPLE_RATE:
                raise AudioFormatError(f"{path}: expected {SAMPLE_RATE} Hz, found {rate} Hz")
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise AudioFormatError(f"{path}: not a PCM RIFF/WAVE file ({exc})") from None
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path, w):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1:
        raise AudioFormatError(f"expected a mono waveform, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise DataError("waveform contains non-finite samples")
    if np.any(np.abs(w) > 1.0):
        log.warning("%s: clipping %d samples outside [-1, 1]", path, int(np.sum(np.abs(w) > 1.0)))
    pcm = np.clip(np.round(w * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(os.fspath(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(SAMPLE_RATE)
        fh.writeframes(pcm.tobytes())


# Manifests -------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    seed: int
    clean_kind: str
    noise_kind: str
    snr_db: float
    duration_s: float
    t60_s: float

    @property
    def name(self):
        return f"s{self.seed}_{self.clean_kind}_{self.noise_kind}"

    def line(self):
        return f"{self.seed},{self.clean_kind}:{self.noise_kind},{self.snr_db:g},{self.duration_s:g},{self.t60_s:g}"


def parse_manifest_line(line, lineno=0):
    fields = [f.strip() for f in line.split(",")]
    if len(fields) != 5:
        raise ManifestError(f"manifest line {lineno}: expected 5 fields, got {len(fields)}: {line!r}")
    seed_s, kind, snr_s, dur_s, t60_s = fields
    clean_kind, _, noise_kind = kind.rpartition(":")
    clean_kind = clean_kind or "harmonic"
    if clean_kind not in CLEAN_KINDS or noise_kind not in NOISE_KINDS:
        raise ManifestError(f"manifest line {lineno}: unknown kind {kind!r}")
    try:
        entry = ManifestEntry(int(seed_s), clean_kind, noise_kind, float(snr_s), float(dur_s), float(t60_s))
    except ValueError:
        raise ManifestError(f"manifest line {lineno}: malformed numbers in {line!r}") from None
    if entry.duration_s < 0.5 or not np.isfinite(entry.snr_db):
        raise ManifestError(f"manifest line {lineno}: need duration >= 0.5 s and finite SNR")
    if entry.t60_s != 0 and not 0.1 <= entry.t60_s <= 2.0:
        raise ManifestError(f"manifest line {lineno}: t60 must be 0 (dry) or within [0.1, 2.0]")
    if entry.noise_kind == "none" and entry.t60_s == 0:
        raise ManifestError(f"manifest line {lineno}: entry has neither noise nor reverb")
    return entry


def read_manifest(path):
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if line:
                entries.append(parse_manifest_line(line, lineno))
    if not entries:
        raise ManifestError(f"{path}: manifest has no entries")
    return entries


def make_manifest(seeds, snr_range=(0.0, 20.0), clean_kind="harmonic", noise_kinds=("white", "pink"),
                  duration_s=1.0, t60_s=0.0, seed=0):
    """Entries with SNRs drawn uniformly from ``snr_range``."""
    rng = np.random.default_rng(seed)
    return [
        ManifestEntry(int(s), clean_kind, noise_kinds[i % len(noise_kinds)],
                      round(float(rng.uniform(*snr_range)), 3), duration_s, t60_s)
        for i, s in enumerate(seeds)
    ]


def generate_pair(entry):
    """Return ``(clean, corrupted, interference)`` with ``corrupted = clean + interference``."""
    ss = np.random.SeedSequence(entry.seed)
    clean_seed, noise_seed, rir_seed = (int(c.generate_state(1)[0]) for c in ss.spawn(3))
    clean = synth_clean(entry.clean_kind, entry.duration_s, clean_seed)
    target = synth_reverb(clean, ReverbSpec(entry.t60_s, rir_seed)) if entry.t60_s > 0 else clean
    if entry.noise_kind == "none":
        corrupted = target
    else:
        noise = synth_noise(entry.noise_kind, len(clean), noise_seed)
        mix = mix_at_snr(target, noise, entry.snr_db)
        clean = clean * mix.gain
        corrupted = mix.mixture
    peak = np.max(np.abs(corrupted))
    if peak > PEAK:
        clean, corrupted = clean * PEAK / peak, corrupted * PEAK / peak
    return clean, corrupted, corrupted - clean
