import numpy as np
import pytest

from ouve.audio import (
    CLEAN_KINDS, ManifestEntry, ReverbSpec, convolve, energy_decay_curve, generate_pair,
    make_manifest, make_rir, mix_at_snr, parse_manifest_line, read_manifest, read_wav,
    synth_clean, synth_noise, synth_reverb, write_wav,
)
from ouve.errors import AudioFormatError, DataError, ManifestError
from ouve.metrics import snr_db


@pytest.mark.parametrize("kind", CLEAN_KINDS)
def test_synth_clean_deterministic(kind):
    a = synth_clean(kind, 0.6, seed=12)
    b = synth_clean(kind, 0.6, seed=12)
    np.testing.assert_array_equal(a, b)
    assert len(a) == 9600
    assert np.max(np.abs(a)) <= 0.99
    assert not np.array_equal(a, synth_clean(kind, 0.6, seed=13))


def test_synth_clean_errors():
    with pytest.raises(DataError):
        synth_clean("harmonic", 0.4)
    with pytest.raises(DataError):
        synth_clean("violin", 1.0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_harmonic_peaks_are_multiples(seed):
    w = synth_clean("harmonic", 2.0, seed=seed)
    spec = np.abs(np.fft.rfft(w))
    freqs = np.fft.rfftfreq(len(w), 1 / 16000)  # 0.5 Hz bins
    # peak picking: local maxima over +/-20 Hz above -20 dB of the global max
    half = 40
    peaks = [k for k in range(half, len(spec) - half)
             if spec[k] == spec[k - half:k + half + 1].max() and spec[k] > 0.1 * spec.max()]
    assert len(peaks) >= 2
    f0 = freqs[peaks[0]]
    for k in peaks:
        harmonic = round(freqs[k] / f0)
        assert abs(freqs[k] - harmonic * f0) <= harmonic * (freqs[1] - freqs[0]) + (freqs[1] - freqs[0])


@pytest.mark.parametrize("kind", ["white", "pink", "babble"])
def test_noise_unit_power(kind):
    n = synth_noise(kind, 8000, seed=3)
    assert np.mean(n**2) == pytest.approx(1.0, rel=1e-9)
    np.testing.assert_array_equal(n, synth_noise(kind, 8000, seed=3))


def test_pink_noise_slope():
    n = synth_noise("pink", 2**16, seed=1)
    p = np.abs(np.fft.rfft(n)) ** 2
    f = np.fft.rfftfreq(len(n), 1 / 16000)
    low = p[(f > 100) & (f < 200)].mean()
    high = p[(f > 1000) & (f < 2000)].mean()
    assert 10 * np.log10(low / high) == pytest.approx(10.0, abs=1.5)


def test_mix_at_snr(rng):
    clean = 0.3 * rng.standard_normal(4000)
    noise = rng.standard_normal(4000)
    mix = mix_at_snr(clean, noise, 0.0)
    assert np.mean(mix.clean**2) == pytest.approx(np.mean(mix.noise**2), rel=1e-12)
    np.testing.assert_allclose(mix.mixture, mix.clean + mix.noise, atol=1e-15)
    assert snr_db(mix.clean, mix.noise) == pytest.approx(0.0, abs=1e-9)


def test_mix_joint_normalisation(rng):
    clean = 0.9 * np.sin(np.linspace(0, 100, 4000))
    noise = rng.standard_normal(4000)
    mix = mix_at_snr(clean, noise, -5.0)
    assert mix.gain < 1
    assert np.max(np.abs(mix.mixture)) == pytest.approx(0.99)
    assert snr_db(mix.clean, mix.noise) == pytest.approx(-5.0, abs=1e-9)
    np.testing.assert_allclose(mix.clean, clean * mix.gain)


def test_mix_errors(rng):
    with pytest.raises(DataError):
        mix_at_snr(np.zeros(10), rng.standard_normal(10), 0)
    with pytest.raises(DataError):
        mix_at_snr(rng.standard_normal(10), np.zeros(10), 0)
    with pytest.raises(DataError):
        mix_at_snr(rng.standard_normal(10), rng.standard_normal(11), 0)


def test_rir_vanishing_t60(rng):
    x = rng.standard_normal(2000)
    out = convolve(x, make_rir(1e-5, seed=1))
    assert np.linalg.norm(out - x) / np.linalg.norm(x) <= 1e-3


@pytest.mark.parametrize("t60", [0.1, 0.4, 1.0, 2.0])
def test_rir_schroeder_t60(t60):
    edc = energy_decay_curve(make_rir(t60, seed=5))
    crossing = np.argmax(edc < -60.0) / 16000
    assert crossing == pytest.approx(t60, rel=0.05)


def test_reverb_is_causal_convolution(rng):
    x = rng.standard_normal(3000)
    for t60 in (0.1, 0.5):
        h = make_rir(t60, seed=2)
        direct = np.array([sum(h[k] * x[n - k] for k in range(min(n + 1, len(h)))) for n in range(0, 3000, 97)])
        out = synth_reverb(x, ReverbSpec(t60, seed=2))
        assert len(out) == len(x)
        np.testing.assert_allclose(out[::97], direct, atol=1e-9)


def test_reverb_spec_bounds():
    with pytest.raises(ValueError):
        ReverbSpec(0.05)
    with pytest.raises(ValueError):
        ReverbSpec(2.5)


def test_wav_round_trip(tmp_path, rng):
    w = np.clip(0.5 * rng.standard_normal(5000), -1, 1)
    path = tmp_path / "a.wav"
    write_wav(path, w)
    back = read_wav(path)
    assert back.shape == w.shape
    assert np.max(np.abs(back - w)) <= 2.0**-15


def test_wav_clips_with_warning(tmp_path, caplog):
    path = tmp_path / "c.wav"
    with caplog.at_level("WARNING"):
        write_wav(path, np.array([0.0, 1.5, -2.0]))
    assert "clipping" in caplog.text
    assert np.max(np.abs(read_wav(path))) <= 1.0


def _raw_wav(path, channels, rate, width=2):
    import wave

    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(channels)
        fh.setsampwidth(width)
        fh.setframerate(rate)
        fh.writeframes(b"\x00" * (100 * channels * width))


def test_wav_rejects_formats(tmp_path):
    _raw_wav(tmp_path / "s.wav", 2, 16000)
    with pytest.raises(AudioFormatError, match="2 channels"):
        read_wav(tmp_path / "s.wav")
    _raw_wav(tmp_path / "r.wav", 1, 44100)
    with pytest.raises(AudioFormatError, match="44100"):
        read_wav(tmp_path / "r.wav")
    _raw_wav(tmp_path / "b.wav", 1, 16000, width=1)
    with pytest.raises(AudioFormatError, match="8-bit"):
        read_wav(tmp_path / "b.wav")
    (tmp_path / "junk.wav").write_bytes(b"not a wav file at all")
    with pytest.raises(AudioFormatError):
        read_wav(tmp_path / "junk.wav")


def test_manifest_parsing(tmp_path):
    text = "# seed,kind,snr,dur,t60\n3,white,5,1.0,0\n4,speech:babble,10,0.5,0.4  # reverb\n\n5,none,0,1,0.6\n"
    path = tmp_path / "m.txt"
    path.write_text(text)
    entries = read_manifest(path)
    assert [e.seed for e in entries] == [3, 4, 5]
    assert entries[0].clean_kind == "harmonic"
    assert entries[1].clean_kind == "speech" and entries[1].t60_s == 0.4
    assert parse_manifest_line(entries[1].line()) == entries[1]
    for bad in ["1,white,5,1.0", "x,white,5,1,0", "1,violin,5,1,0", "1,white,5,0.2,0", "1,white,5,1,3.0",
                "1,none,5,1,0"]:
        with pytest.raises(ManifestError):
            parse_manifest_line(bad)


def test_generate_pair_reproducible():
    for entry in [ManifestEntry(7, "harmonic", "white", 5.0, 1.0, 0.0),
                  ManifestEntry(8, "speech", "pink", 3.0, 0.5, 0.5),
                  ManifestEntry(9, "chirp", "none", 0.0, 0.5, 0.3)]:
        a = generate_pair(entry)
        b = generate_pair(entry)
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u, v)
        clean, corrupted, interference = a
        np.testing.assert_allclose(corrupted, clean + interference, atol=1e-15)
        assert np.max(np.abs(corrupted)) <= 0.99
    clean, _, noise = generate_pair(ManifestEntry(7, "harmonic", "white", 5.0, 1.0, 0.0))
    assert snr_db(clean, noise) == pytest.approx(5.0, abs=1e-9)


def test_make_manifest_range():
    entries = make_manifest(range(20), snr_range=(0, 20))
    assert all(0 <= e.snr_db <= 20 for e in entries)
    assert {e.noise_kind for e in entries} == {"white", "pink"}
