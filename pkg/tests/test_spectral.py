import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from freqadapt import spectral
from freqadapt.errors import ConfigError, DimensionError, FormatError

from conftest import numeric_grad, rel_err

pow2 = st.sampled_from([1, 2, 4, 8, 16, 32, 64, 128])


@given(pow2, st.integers(0, 2**32 - 1))
def test_fft_matches_naive_dft(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, n)) + 1j * rng.standard_normal((3, n))
    assert np.max(np.abs(spectral.fft(x) - spectral.dft_naive(x))) < 1e-9 * max(n, 1)


@given(pow2, st.integers(0, 2**32 - 1))
def test_ifft_inverts_fft(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    np.testing.assert_allclose(spectral.ifft(spectral.fft(x)), x, atol=1e-12)


def test_fft_against_numpy(rng):
    x = rng.standard_normal((4, 64))
    np.testing.assert_allclose(spectral.fft(x), np.fft.fft(x), atol=1e-12)


def test_non_power_of_two_falls_back(rng):
    x = rng.standard_normal(12)
    np.testing.assert_allclose(spectral.fft(x), np.fft.fft(x), atol=1e-12)


def test_fft_impulse_and_constant():
    n = 16
    np.testing.assert_allclose(spectral.fft(np.eye(n)[0]), np.ones(n), atol=1e-15)
    spec = spectral.fft(np.ones(n))
    assert spec[0] == pytest.approx(n)
    assert np.max(np.abs(spec[1:])) < 1e-12


def test_fftshift_places_dc_at_center():
    x = np.arange(8)
    assert spectral.fftshift(x)[4] == 0
    np.testing.assert_array_equal(spectral.ifftshift(spectral.fftshift(x)), x)
    y = np.arange(7)
    np.testing.assert_array_equal(spectral.fftshift(y), np.fft.fftshift(y))
    np.testing.assert_array_equal(spectral.ifftshift(y), np.fft.ifftshift(y))


@pytest.mark.parametrize("n", [4, 8, 16, 6])
def test_rfft_irfft_round_trip(n, rng):
    x = rng.standard_normal((2, n))
    spec = spectral.rfft(x)
    assert spec.shape == (2, n // 2 + 1)
    np.testing.assert_allclose(spectral.irfft(spec, n), x, atol=1e-12)


def test_irfft_bin_mismatch():
    with pytest.raises(DimensionError):
        spectral.irfft(np.zeros(4, dtype=complex), 16)


def _complex_inner(a, b):
    return float(np.sum(a.real * b.real + a.imag * b.imag))


@pytest.mark.parametrize("n", [8, 16])
def test_rfft_backward_is_adjoint(n, rng):
    x = rng.standard_normal(n)
    g = rng.standard_normal(n // 2 + 1) + 1j * rng.standard_normal(n // 2 + 1)
    lhs = _complex_inner(spectral.rfft(x), g)
    assert lhs == pytest.approx(float(x @ spectral.rfft_backward(g, n)), rel=1e-12)


@pytest.mark.parametrize("n", [8, 16])
def test_irfft_backward_matches_fd(n, rng):
    spec = rng.standard_normal(n // 2 + 1) + 1j * rng.standard_normal(n // 2 + 1)
    g = rng.standard_normal(n)
    analytic = spectral.irfft_backward(g, n)
    re, im = spec.real.copy(), spec.imag.copy()

    def loss():
        return float(spectral.irfft(re + 1j * im, n) @ g)

    np.testing.assert_allclose(analytic.real, numeric_grad(loss, re), atol=1e-8)
    # imaginary parts of DC and Nyquist are discarded by irfft
    np.testing.assert_allclose(analytic.imag, numeric_grad(loss, im), atol=1e-8)


def test_hann_window():
    w = spectral.hann_window(8)
    np.testing.assert_allclose(w, 0.5 * (1 - np.cos(2 * np.pi * np.arange(8) / 8)), atol=1e-15)
    assert w[0] == 0.0
    with pytest.raises(ConfigError):
        spectral.hann_window(1)


@pytest.mark.parametrize("length,expected", [(16, (8, 2)), (32, (16, 4)), (64, (32, 8)), (128, (32, 8))])
def test_default_stft_params(length, expected):
    assert spectral.default_stft_params(length) == expected


def test_stft_shape(rng):
    frames = spectral.stft(rng.standard_normal((3, 32)))
    assert frames.data.shape == (3, 9, 9)
    assert (frames.n_fft, frames.hop, frames.length) == (16, 4, 32)
    assert frames.bins == 9 and frames.frames == 9


@given(st.sampled_from([(16, 8, 2), (32, 16, 4), (64, 32, 8), (32, 8, 2), (16, 4, 1)]),
       st.integers(0, 2**32 - 1))
def test_stft_perfect_reconstruction(case, seed):
    length, n_fft, hop = case
    x = np.random.default_rng(seed).standard_normal((2, length))
    y = spectral.istft(spectral.stft(x, n_fft, hop))
    assert np.linalg.norm(y - x) / np.linalg.norm(x) < 1e-8


def test_stft_pure_tone(rng):
    t = np.arange(64)
    frames = spectral.stft(np.cos(2 * np.pi * 4 * t / 32), 32, 8)
    mag = np.abs(frames.data)
    assert np.all(np.argmax(mag[:, 2:-2], axis=0) == 4)


def test_stft_adjoints(rng):
    length, n_fft, hop = 32, 16, 4
    x = rng.standard_normal(length)
    frames = spectral.stft(x, n_fft, hop)
    g = rng.standard_normal(frames.data.shape) + 1j * rng.standard_normal(frames.data.shape)
    lhs = _complex_inner(frames.data, g)
    rhs = float(x @ spectral.stft_backward(g, n_fft, hop, length))
    assert lhs == pytest.approx(rhs, rel=1e-12)
    z = frames.with_data(g)
    y = rng.standard_normal(length)
    lhs = float(spectral.istft(z) @ y)
    rhs = _complex_inner(g, spectral.istft_backward(y, n_fft, hop, length))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_stft_rejects_bad_params(rng):
    with pytest.raises(ConfigError):
        spectral.stft(rng.standard_normal(16), n_fft=12, hop=3)
    with pytest.raises(ConfigError):
        spectral.stft(rng.standard_normal(16), n_fft=8, hop=3)


# -- video spectrum -------------------------------------------------------------


def test_fft3d_matches_numpy(rng):
    v = rng.standard_normal((8, 4, 16))
    np.testing.assert_allclose(spectral.fft3d_shifted(v), np.fft.fftshift(np.fft.fftn(v)), atol=1e-10)


def test_fft3d_errors():
    with pytest.raises(DimensionError):
        spectral.fft3d_shifted(np.zeros((4, 4)))
    with pytest.raises(ConfigError):
        spectral.fft3d_shifted(np.zeros((0, 4, 4)))


def test_constant_volume_remove_dc_is_zero():
    smap = spectral.spectrum_map(np.full((8, 8, 4), 3.0), remove_dc=True)
    assert np.max(np.abs(smap.values)) < 1e-12
    assert smap.metadata()["dc_removed"] is True and smap.metadata()["whitened"] is False


def test_planted_spatial_sinusoid_peak():
    h = w = 32
    rows = np.arange(h)[:, None, None]
    vol = np.cos(2 * np.pi * 5 * rows / h) * np.ones((h, w, 16))
    smap = spectral.spectrum_map(vol, remove_dc=True)
    peak = np.unravel_index(np.argmax(smap.values), smap.values.shape)
    assert peak in {(h // 2 + 5, w // 2), (h // 2 - 5, w // 2)}


def test_whitening_divides_by_radius(rng):
    v = rng.standard_normal((8, 8, 4))
    raw = spectral.spectrum_magnitude(v)
    white = spectral.spectrum_magnitude(v, whiten=True)
    rows, cols = np.meshgrid(np.arange(8) - 4, np.arange(8) - 4, indexing="ij")
    radius = np.hypot(rows, cols)
    radius[4, 4] = 1.0
    np.testing.assert_allclose(white, raw / radius, rtol=1e-14)


def test_class_means_average_before_log(rng):
    a, b = rng.standard_normal((4, 4, 4)), 10 * rng.standard_normal((4, 4, 4))
    means = spectral.class_mean_spectra([a, b], [0, 0])
    expected = np.log1p((spectral.spectrum_magnitude(a) + spectral.spectrum_magnitude(b)) / 2)
    np.testing.assert_allclose(means[0].values, expected, rtol=1e-14)


def test_class_means_warn_on_empty_class(rng):
    with pytest.warns(UserWarning, match="class 1"):
        means = spectral.class_mean_spectra([rng.standard_normal((4, 4, 2))], [0], classes=[0, 1])
    assert list(means) == [0]


def test_pgm_round_trip(tmp_path, rng):
    smap = spectral.spectrum_map(rng.standard_normal((6, 5, 4)), whiten=True)
    path = tmp_path / "m.pgm"
    spectral.write_pgm(smap, path)
    text = path.read_text()
    assert text.startswith("P2\n# dc_removed=0 whitened=1\n5 6\n65535\n")
    img = spectral.read_pgm(path)
    assert img.shape == (6, 5) and img.min() == 0 and img.max() == 65535
    with pytest.raises(FormatError):
        (tmp_path / "x.pgm").write_text("P5 1 1 255")
        spectral.read_pgm(tmp_path / "x.pgm")
