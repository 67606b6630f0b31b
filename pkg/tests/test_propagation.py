import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffuserptycho.fields import ComplexField, energy
from diffuserptycho.propagation import make_kernel, propagate, transfer_function

from .oracles import asm_bruteforce, band_limited_spectrum_field, gaussian_width, rms, second_moment_radius

WL = 0.532
PITCH = 1.67 / 3


def band_limited_field(rng, n, pitch, cutoff):
    return ComplexField(band_limited_spectrum_field(rng, n, pitch, cutoff), pitch, WL)


def test_zero_distance_is_identity(rng):
    f = band_limited_field(rng, 32, PITCH, 0.5)
    assert np.array_equal(propagate(f, 0.0).data, f.data)


def test_plane_wave_is_eigenfunction():
    f = ComplexField(np.ones((64, 64)), PITCH, WL)
    out = propagate(f, 500.0).data
    assert np.max(np.abs(np.abs(out) - 1)) < 1e-10
    expected = np.exp(2j * np.pi * 500.0 / WL)
    assert np.max(np.abs(out - expected)) < 1e-9


@pytest.mark.parametrize("z", [100.0, 300.0, 600.0])
def test_gaussian_beam_width(z):
    n, pitch, w0 = 512, 0.5, 5.0
    y = (np.arange(n) - n / 2) * pitch
    r2 = y[:, None] ** 2 + y[None, :] ** 2
    f = ComplexField(np.exp(-r2 / w0**2), pitch, WL)
    out = propagate(f, z)
    w_meas = second_moment_radius(np.abs(out.data) ** 2, pitch)
    assert w_meas == pytest.approx(gaussian_width(w0, z, WL), rel=0.01)


def test_matches_bruteforce_angular_spectrum(rng):
    f = ComplexField(rng.normal(size=(12, 10)) + 1j * rng.normal(size=(12, 10)), 0.3, WL)
    ours = propagate(f, 40.0, band_limit=False).data
    assert rms(ours, asm_bruteforce(f.data, 0.3, WL, 40.0)) < 1e-12 * rms(ours) + 1e-14


@pytest.mark.parametrize("d", [100.0, 500.0, 1000.0])
def test_round_trip(rng, d):
    n = 256
    lim = 1 / (WL * np.sqrt((2 * d / (n * PITCH)) ** 2 + 1))
    f = band_limited_field(rng, n, PITCH, 0.95 * lim)
    back = propagate(propagate(f, d), -d)
    assert rms(back.data, f.data) < 1e-8 * rms(f.data)


def test_kernel_properties():
    k_pos = make_kernel((64, 48), PITCH, WL, 700.0)
    k_neg = make_kernel((64, 48), PITCH, WL, -700.0)
    assert np.allclose(k_neg.transfer, np.conj(k_pos.transfer), atol=0, rtol=0)
    assert np.all(np.abs(k_pos.transfer) <= 1 + 1e-15)
    assert k_pos.reversed().distance_um == -700.0


def test_evanescent_cutoff():
    # pitch well below lambda/2 leaves frequencies beyond 1/lambda on the grid
    t = transfer_function((32, 32), 0.1, WL, 10.0, band_limit=False)
    f = np.fft.fftfreq(32, d=0.1)
    beyond = np.hypot(f[:, None], f[None, :]) >= 1 / WL
    assert beyond.any() and np.all(t[beyond] == 0)
    assert np.all(np.abs(np.abs(t[~beyond]) - 1) < 1e-12)


def test_cached_kernel_matches_direct(rng):
    f = band_limited_field(rng, 64, PITCH, 0.4)
    k = make_kernel(f.shape, PITCH, WL, 321.0)
    assert np.array_equal(k(f).data, propagate(f, 321.0).data)
    assert make_kernel(f.shape, PITCH, WL, 321.0).transfer is k.transfer


@pytest.mark.parametrize("kw", [{"pitch_um": 0}, {"pitch_um": -1}, {"wavelength_um": 0}])
def test_make_kernel_rejects_bad_sampling(kw):
    args = {"shape": (8, 8), "pitch_um": 0.5, "wavelength_um": WL, "distance_um": 10.0}
    args.update(kw)
    with pytest.raises(ValueError):
        make_kernel(**args)


def test_kernel_rejects_wrong_shape():
    k = make_kernel((8, 8), 0.5, WL, 10.0)
    with pytest.raises(ValueError):
        k.apply(np.ones((4, 4)))


@settings(max_examples=20, deadline=None)
@given(
    a=st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False),
    b=st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False),
    d=st.floats(-800, 800),
)
def test_linearity(a, b, d):
    r = np.random.default_rng(7)
    f = band_limited_field(r, 32, PITCH, 0.5)
    g = band_limited_field(r, 32, PITCH, 0.5)
    lhs = propagate(f.with_data(a * f.data + b * g.data), d).data
    rhs = a * propagate(f, d).data + b * propagate(g, d).data
    assert rms(lhs, rhs) <= 1e-10 * max(1.0, rms(rhs))


@settings(max_examples=20, deadline=None)
@given(d1=st.floats(-500, 500), d2=st.floats(-500, 500))
def test_composition_and_energy(d1, d2):
    r = np.random.default_rng(11)
    n = 64
    # inside the clamp of every distance up to 1000 um on this grid
    f = band_limited_field(r, n, PITCH, 0.9 / (WL * np.sqrt((2 * 1000 / (n * PITCH)) ** 2 + 1)))
    two = propagate(propagate(f, d1), d2)
    one = propagate(f, d1 + d2)
    assert rms(two.data, one.data) < 1e-8 * rms(f.data)
    assert abs(energy(two) - energy(f)) <= 1e-8 * energy(f)


def test_padding_suppresses_wrap_around():
    n, pitch = 128, 0.5
    y = (np.arange(n) - n / 2) * pitch
    r2 = y[:, None] ** 2 + (y[None, :] - 25) ** 2
    f = ComplexField(np.exp(-r2 / 1.0**2), pitch, WL)
    periodic = propagate(f, 300.0)
    padded = propagate(f, 300.0, pad_fraction=0.5)
    assert padded.shape == f.shape
    # light leaving the right edge wraps onto the left edge only without padding
    left = slice(0, 8)
    assert np.sum(np.abs(padded.data[:, left]) ** 2) < 0.2 * np.sum(np.abs(periodic.data[:, left]) ** 2)
