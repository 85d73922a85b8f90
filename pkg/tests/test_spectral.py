import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ouve.errors import DataError
from ouve.spectral import (
    HOP_LENGTH, N_FREQ, SAMPLE_RATE, WINDOW_LENGTH, Spectrogram, TransformParams,
    compress, decompress, hann_window, istft, n_frames_for, stft,
)


def dft_frame(frame):
    """Direct O(N^2) one-sided DFT, independent of numpy.fft."""
    n = len(frame)
    k = np.arange(n // 2 + 1)[:, None]
    return np.exp(-2j * np.pi * k * np.arange(n)[None, :] / n) @ frame


def test_geometry():
    assert N_FREQ == 256
    s = stft(np.zeros(SAMPLE_RATE))
    assert s.bins.shape == (256, 126)
    assert n_frames_for(SAMPLE_RATE) == 126
    assert not s.compressed


def test_periodic_hann():
    w = hann_window()
    assert w[0] == 0.0
    assert len(w) == WINDOW_LENGTH
    # periodic: symmetric about N/2 rather than (N-1)/2
    np.testing.assert_allclose(w[1:], w[1:][::-1], atol=1e-15)


def test_matches_direct_dft(rng):
    w = rng.standard_normal(4000)
    s = stft(w)
    padded = np.pad(w, WINDOW_LENGTH // 2, mode="reflect")
    for m in (0, 7, s.n_frames - 1):
        frame = padded[m * HOP_LENGTH:m * HOP_LENGTH + WINDOW_LENGTH] * hann_window()
        np.testing.assert_allclose(s.bins[:, m], dft_frame(frame), atol=1e-9)


def test_dc_energy_in_lowest_bins():
    s = stft(np.full(SAMPLE_RATE, 0.1))
    mag = np.abs(s.bins)
    # a Hann-windowed constant occupies bins 0 and 1 only (|X1| = |X0| / 2)
    assert np.max(mag[2:]) < 1e-10 * np.max(mag[0])
    np.testing.assert_allclose(mag[1], 0.5 * mag[0], rtol=1e-10)
    np.testing.assert_allclose(mag[0], 0.1 * WINDOW_LENGTH / 2, rtol=1e-10)


def test_silence():
    assert not np.any(stft(np.zeros(2000)).bins)
    assert not np.any(istft(Spectrogram(np.zeros((256, 20))), 2000))


def test_errors():
    with pytest.raises(DataError):
        stft(np.zeros(WINDOW_LENGTH - 1))
    bad = np.zeros(1000)
    bad[3] = np.nan
    with pytest.raises(DataError):
        stft(bad)
    with pytest.raises(DataError):
        istft(Spectrogram(np.zeros((256, 5)), compressed=True), 100)
    with pytest.raises(DataError):
        Spectrogram(np.zeros((255, 5)))


def test_round_trip_white_noise(rng):
    w = rng.standard_normal(2 * SAMPLE_RATE)
    back = istft(stft(w), len(w))
    assert np.linalg.norm(back - w) / np.linalg.norm(w) <= 1e-6
    assert np.max(np.abs(back - w)) <= 1e-6


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.integers(WINDOW_LENGTH, 3000),
              elements=st.floats(-1, 1, allow_nan=False)))
def test_round_trip_property(w):
    np.testing.assert_allclose(istft(stft(w), len(w)), w, atol=1e-6, rtol=0)


def test_istft_pads_and_trims(rng):
    w = rng.standard_normal(1000)
    s = stft(w)
    assert len(istft(s, 900)) == 900
    longer = istft(s, 5000)
    assert len(longer) == 5000
    assert not np.any(longer[1000 + WINDOW_LENGTH:])


def test_linearity_energy(rng):
    w = rng.standard_normal(3000)
    e1 = np.sum(np.abs(stft(w).bins) ** 2)
    e3 = np.sum(np.abs(stft(3.0 * w).bins) ** 2)
    np.testing.assert_allclose(e3, 9.0 * e1, rtol=1e-12)


@pytest.mark.parametrize("c, expected", [(0j, 0j), (1 + 0j, 0.15 + 0j), (4j, 0.3j)])
def test_compress_scalars(c, expected):
    bins = np.full((256, 1), c)
    out = compress(Spectrogram(bins), TransformParams(0.5, 0.15))
    assert out.compressed
    np.testing.assert_allclose(out.bins[0, 0], expected, atol=1e-15)


@pytest.mark.parametrize("c, expected", [(0.15 + 0j, 1 + 0j), (0j, 0j)])
def test_decompress_scalars(c, expected):
    out = decompress(Spectrogram(np.full((256, 1), c), compressed=True), TransformParams(0.5, 0.15))
    assert not out.compressed
    np.testing.assert_allclose(out.bins[0, 0], expected, atol=1e-14)


def test_compress_flags():
    s = Spectrogram(np.ones((256, 2)))
    with pytest.raises(DataError):
        compress(compress(s))
    with pytest.raises(DataError):
        decompress(s)


@pytest.mark.parametrize("alpha, beta", [(0.5, 0.15), (1.0, 1.0), (0.3, 2.0)])
def test_compress_round_trip_and_phase(rng, alpha, beta):
    tp = TransformParams(alpha, beta)
    bins = (rng.standard_normal((256, 50)) + 1j * rng.standard_normal((256, 50))) * 10 ** rng.uniform(-3, 2, (256, 50))
    c = compress(Spectrogram(bins), tp)
    back = decompress(c, tp).bins
    assert np.max(np.abs(back - bins) / np.abs(bins)) <= 1e-9
    # phase kept up to the rounding of one real scaling
    np.testing.assert_allclose(np.angle(c.bins), np.angle(bins), rtol=0, atol=4 * np.finfo(float).eps * np.pi)
    np.testing.assert_allclose(np.abs(c.bins), beta * np.abs(bins) ** alpha, rtol=1e-12)


def test_transform_params_validation():
    for a, b in [(0.0, 0.1), (1.5, 0.1), (0.5, 0.0)]:
        with pytest.raises(ValueError):
            TransformParams(a, b)
