"""Field containers and grid arithmetic.

Every array-level routine here accepts either a bare ndarray or one of the
containers below; containers come back out as containers with the sampling
metadata carried along.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .exceptions import DimensionError
from .validation import (
    check_array_2d,
    check_divisible,
    check_finite_scalar,
    check_int,
    check_positive,
)

__all__ = [
    "ComplexField",
    "RealImage",
    "Geometry",
    "subpixel_shift",
    "bin_intensity",
    "upsample_nn",
    "energy",
    "save_cfld",
    "load_cfld",
]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ComplexField:
    """Complex amplitude sampled on a square grid.

    Parameters
    ----------
    data : array_like, shape (height, width)
        Complex amplitudes. Stored as a read-only ``complex128`` copy.
    pitch_um : float
        Sampling pitch in micrometres.
    wavelength_um : float
        Illumination wavelength in micrometres.
    """

    data: np.ndarray
    pitch_um: float
    wavelength_um: float

    def __post_init__(self):
        data = check_array_2d(self.data, "field data", dtype=np.complex128)
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "pitch_um", check_positive(self.pitch_um, "pitch_um"))
        object.__setattr__(
            self, "wavelength_um", check_positive(self.wavelength_um, "wavelength_um")
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def amplitude(self) -> np.ndarray:
        return np.abs(self.data)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.data)

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.data) ** 2

    def with_data(self, data) -> "ComplexField":
        return replace(self, data=data)

    @classmethod
    def ones(cls, shape, pitch_um, wavelength_um) -> "ComplexField":
        return cls(np.ones(shape, dtype=np.complex128), pitch_um, wavelength_um)


@dataclass(frozen=True, eq=False)
class RealImage:
    """Non-negative intensity image, e.g. one sensor frame."""

    data: np.ndarray
    pitch_um: float

    def __post_init__(self):
        data = check_array_2d(self.data, "image data", dtype=np.float64)
        if np.any(data < 0):
            raise ValueError("intensity image has negative values")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "pitch_um", check_positive(self.pitch_um, "pitch_um"))

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def with_data(self, data) -> "RealImage":
        return replace(self, data=data)


@dataclass(frozen=True)
class Geometry:
    """Acquisition geometry.

    ``d1_um`` is the object-to-diffuser distance and ``d2_um`` the
    diffuser-to-sensor distance. Reconstruction happens on a grid
    ``upsample_m`` times finer than the sensor.
    """

    wavelength_um: float = 0.532
    sensor_pitch_um: float = 1.67
    d1_um: float = 300.0
    d2_um: float = 700.0
    upsample_m: int = 3

    def __post_init__(self):
        check_positive(self.wavelength_um, "wavelength_um")
        check_positive(self.sensor_pitch_um, "sensor_pitch_um")
        if check_finite_scalar(self.d1_um, "d1_um") < 0:
            raise ValueError(f"d1_um must be >= 0, got {self.d1_um}")
        check_positive(self.d2_um, "d2_um")
        check_int(self.upsample_m, "upsample_m", minimum=1)

    @property
    def recon_pitch_um(self) -> float:
        return self.sensor_pitch_um / self.upsample_m

    @property
    def total_distance_um(self) -> float:
        return self.d1_um + self.d2_um

    def fresnel_number(self, extent_um: float) -> float:
        """Imaging area over (distance x wavelength) for a square of side ``extent_um``."""
        return extent_um**2 / (self.total_distance_um * self.wavelength_um)

    def to_dict(self) -> dict:
        return {
            "wavelength_um": self.wavelength_um,
            "sensor_pitch_um": self.sensor_pitch_um,
            "d1_um": self.d1_um,
            "d2_um": self.d2_um,
            "upsample_m": self.upsample_m,
        }


def _unwrap(f):
    if isinstance(f, (ComplexField, RealImage)):
        return f.data
    return np.asarray(f)


def _rewrap(template, data, **changes):
    if isinstance(template, (ComplexField, RealImage)):
        return replace(template, data=data, **changes)
    return data


def subpixel_shift(f, dx_px: float, dy_px: float):
    """Translate ``f`` by ``(dx_px, dy_px)`` pixels with periodic boundaries.

    ``dx_px`` moves content along columns, ``dy_px`` along rows, so that
    an integer shift is ``np.roll(f, (dy, dx), axis=(0, 1))``. Fractional
    shifts apply the Fourier shift theorem and are exactly unitary.
    """
    dx = check_finite_scalar(dx_px, "dx_px")
    dy = check_finite_scalar(dy_px, "dy_px")
    arr = _unwrap(f)
    if dx == 0.0 and dy == 0.0:
        return _rewrap(f, arr.copy())
    if dx.is_integer() and dy.is_integer():
        return _rewrap(f, np.roll(arr, (int(dy), int(dx)), axis=(0, 1)))
    h, w = arr.shape
    ramp_y = np.exp(-2j * np.pi * sfft.fftfreq(h) * dy)
    ramp_x = np.exp(-2j * np.pi * sfft.fftfreq(w) * dx)
    spec = sfft.fft2(arr)
    spec *= ramp_y[:, None]
    spec *= ramp_x[None, :]
    out = sfft.ifft2(spec)
    if not np.iscomplexobj(arr):
        out = out.real
    if isinstance(f, RealImage):
        # ringing from the spectral shift may dip just below zero
        out = np.clip(out, 0.0, None)
    return _rewrap(f, out)


def bin_intensity(hi, m: int):
    """Sum every ``m x m`` block of ``hi``; the output pitch grows by ``m``.

    >>> bin_intensity(np.array([[1.0, 2.0], [3.0, 4.0]]), 2)
    array([[10.]])
    """
    m = check_int(m, "m")
    arr = _unwrap(hi)
    check_divisible(arr.shape, m, "image")
    h, w = arr.shape
    out = arr.reshape(h // m, m, w // m, m).sum(axis=(1, 3))
    if isinstance(hi, RealImage):
        return replace(hi, data=out, pitch_um=hi.pitch_um * m)
    return out


def upsample_nn(lo, m: int):
    """Nearest-neighbour up-sampling: each pixel becomes an ``m x m`` block."""
    m = check_int(m, "m")
    arr = _unwrap(lo)
    out = np.repeat(np.repeat(arr, m, axis=0), m, axis=1)
    if isinstance(lo, RealImage):
        return replace(lo, data=out, pitch_um=lo.pitch_um / m)
    return out


def energy(f) -> float:
    """Total power ``sum |f|**2``."""
    arr = _unwrap(f)
    return float(np.sum(np.abs(arr) ** 2))


_CFLD_MAGIC = b"CFLD"
_CFLD_VERSION = 1
_CFLD_HEADER = struct.Struct("<4sIII")
_CFLD_META = struct.Struct("<dd")


def save_cfld(path, f: ComplexField) -> None:
    """Write ``f`` in the CFLD binary layout (little-endian throughout).

    Layout: ``b"CFLD"``, u32 height, u32 width, u32 version (16 bytes),
    f64 pitch_um, f64 wavelength_um, then row-major interleaved f64
    (re, im) pairs.
    """
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_CFLD_HEADER.pack(_CFLD_MAGIC, f.height, f.width, _CFLD_VERSION))
        fh.write(_CFLD_META.pack(f.pitch_um, f.wavelength_um))
        fh.write(np.ascontiguousarray(f.data, dtype="<c16").tobytes())


def load_cfld(path) -> ComplexField:
    raw = Path(path).read_bytes()
    head = _CFLD_HEADER.size + _CFLD_META.size
    if len(raw) < head:
        raise DimensionError(f"{path}: truncated CFLD header")
    magic, h, w, _version = _CFLD_HEADER.unpack_from(raw, 0)
    if magic != _CFLD_MAGIC:
        raise ValueError(f"{path}: not a CFLD file (magic {magic!r})")
    pitch, wavelength = _CFLD_META.unpack_from(raw, _CFLD_HEADER.size)
    expected = head + 16 * h * w
    if len(raw) != expected:
        raise DimensionError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<c16", offset=head).reshape(h, w)
    if not math.isfinite(pitch) or not math.isfinite(wavelength):
        raise ValueError(f"{path}: non-finite sampling metadata")
    return ComplexField(data, pitch, wavelength)
