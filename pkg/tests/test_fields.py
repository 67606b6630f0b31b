import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffuserptycho.exceptions import DimensionError
from diffuserptycho.fields import (
    ComplexField,
    Geometry,
    RealImage,
    bin_intensity,
    energy,
    load_cfld,
    save_cfld,
    subpixel_shift,
    upsample_nn,
)

from .oracles import block_sum, rms, trig_shift


def test_complex_field_is_read_only_copy(rng):
    src = rng.normal(size=(4, 5)) + 0j
    f = ComplexField(src, 0.5, 0.532)
    src[0, 0] = 99
    assert f.data[0, 0] != 99
    with pytest.raises(ValueError):
        f.data[0, 0] = 1
    assert f.shape == (4, 5) and f.height == 4 and f.width == 5
    assert f.data.dtype == np.complex128


@pytest.mark.parametrize(
    "data, pitch, wl",
    [
        (np.ones((2, 2)), 0.0, 0.5),
        (np.ones((2, 2)), 0.5, -1.0),
        (np.array([[np.nan, 1]]), 0.5, 0.5),
        (np.ones(3), 0.5, 0.5),
        (np.ones((0, 3)), 0.5, 0.5),
    ],
)
def test_complex_field_rejects_bad_input(data, pitch, wl):
    with pytest.raises((ValueError, DimensionError)):
        ComplexField(data, pitch, wl)


def test_real_image_rejects_negative():
    with pytest.raises(ValueError):
        RealImage(np.array([[1.0, -0.1]]), 1.0)


def test_geometry_derived_pitch():
    g = Geometry(sensor_pitch_um=1.67, upsample_m=3)
    assert g.recon_pitch_um == pytest.approx(1.67 / 3)
    assert g.total_distance_um == 1000.0


@pytest.mark.parametrize("kw", [{"d1_um": -1}, {"d2_um": 0}, {"upsample_m": 0}, {"wavelength_um": 0}])
def test_geometry_invariants(kw):
    with pytest.raises(ValueError):
        Geometry(**kw)


def test_geometry_fresnel_number_is_large_at_paper_scale():
    # 6.4 mm sensor side at ~1 mm total distance
    assert Geometry().fresnel_number(6400.0) > 5e4


def test_shift_zero_is_exact_copy(rng):
    f = ComplexField(rng.normal(size=(8, 8)) + 1j, 0.5, 0.5)
    out = subpixel_shift(f, 0, 0)
    assert np.array_equal(out.data, f.data)


def test_integer_shift_equals_roll(rng):
    a = rng.normal(size=(9, 12)) + 1j * rng.normal(size=(9, 12))
    out = subpixel_shift(a, 3, -2)
    assert np.array_equal(out, np.roll(a, (-2, 3), axis=(0, 1)))


def test_fractional_shift_matches_trig_interpolant(rng):
    a = rng.normal(size=(10, 7)) + 1j * rng.normal(size=(10, 7))
    assert rms(subpixel_shift(a, 0.3, -1.7), trig_shift(a, 0.3, -1.7)) < 1e-12


def test_fractional_shift_inverse(rng):
    a = rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16))
    back = subpixel_shift(subpixel_shift(a, 0.5, 0.25), -0.5, -0.25)
    assert rms(back, a) < 1e-9


def test_shift_rejects_non_finite():
    with pytest.raises(ValueError):
        subpixel_shift(np.ones((4, 4)), np.nan, 0)


def test_shift_keeps_container_metadata():
    f = ComplexField(np.ones((4, 4)), 0.7, 0.6)
    out = subpixel_shift(f, 0.5, 0)
    assert isinstance(out, ComplexField) and out.pitch_um == 0.7 and out.wavelength_um == 0.6


@settings(max_examples=40, deadline=None)
@given(
    dx=st.floats(-20, 20, allow_nan=False),
    dy=st.floats(-20, 20, allow_nan=False),
    seed=st.integers(0, 2**31 - 1),
)
def test_shift_is_unitary(dx, dy, seed):
    r = np.random.default_rng(seed)
    a = r.normal(size=(12, 10)) + 1j * r.normal(size=(12, 10))
    out = subpixel_shift(a, dx, dy)
    assert abs(energy(out) - energy(a)) <= 1e-10 * energy(a)


@settings(max_examples=30, deadline=None)
@given(dx=st.integers(-30, 30), dy=st.integers(-30, 30))
def test_integer_shift_property(dx, dy):
    a = np.arange(48.0).reshape(6, 8) * (1 + 0.5j)
    assert rms(subpixel_shift(a, float(dx), float(dy)), np.roll(a, (dy, dx), axis=(0, 1))) < 1e-12


def test_bin_examples(rng):
    assert np.array_equal(bin_intensity(np.array([[1.0, 2.0], [3.0, 4.0]]), 2), [[10.0]])
    x = rng.random((6, 6))
    assert np.array_equal(bin_intensity(x, 1), x)
    assert np.allclose(bin_intensity(x, 3), block_sum(x, 3), rtol=1e-14, atol=0)


def test_bin_pitch_and_errors():
    img = RealImage(np.ones((6, 6)), 0.5)
    assert bin_intensity(img, 3).pitch_um == pytest.approx(1.5)
    with pytest.raises(DimensionError):
        bin_intensity(np.ones((5, 6)), 3)


def test_upsample_examples():
    assert np.array_equal(upsample_nn(np.array([[5.0]]), 3), np.full((3, 3), 5.0))
    x = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(upsample_nn(x, 1), x)
    assert upsample_nn(RealImage(x, 1.5), 3).pitch_um == pytest.approx(0.5)
    with pytest.raises(ValueError):
        upsample_nn(x, 0)


@settings(max_examples=30, deadline=None)
@given(m=st.integers(1, 4), h=st.integers(1, 5), w=st.integers(1, 5), seed=st.integers(0, 10_000))
def test_bin_of_upsample_is_m_squared(m, h, w, seed):
    x = np.random.default_rng(seed).random((h, w))
    out = bin_intensity(upsample_nn(x, m), m)
    assert np.allclose(out, m * m * x, rtol=1e-12, atol=0)


def test_cfld_round_trip(tmp_path, rng):
    f = ComplexField(rng.normal(size=(5, 7)) + 1j * rng.normal(size=(5, 7)), 0.557, 0.532)
    p = tmp_path / "f.cfld"
    save_cfld(p, f)
    raw = p.read_bytes()
    magic, h, w, _ = struct.unpack_from("<4sIII", raw, 0)
    assert (magic, h, w) == (b"CFLD", 5, 7)
    assert struct.unpack_from("<dd", raw, 16) == (0.557, 0.532)
    assert len(raw) == 32 + 16 * 35
    # payload is row-major interleaved little-endian float64 (re, im)
    first = struct.unpack_from("<dd", raw, 32)
    assert first == (f.data[0, 0].real, f.data[0, 0].imag)
    g = load_cfld(p)
    assert np.array_equal(g.data, f.data) and g.pitch_um == 0.557 and g.wavelength_um == 0.532


def test_cfld_rejects_bad_files(tmp_path):
    p = tmp_path / "bad.cfld"
    p.write_bytes(b"XXXX" + bytes(28))
    with pytest.raises(ValueError):
        load_cfld(p)
    p.write_bytes(struct.pack("<4sIII", b"CFLD", 2, 2, 1) + struct.pack("<dd", 1, 1) + bytes(10))
    with pytest.raises(DimensionError):
        load_cfld(p)
