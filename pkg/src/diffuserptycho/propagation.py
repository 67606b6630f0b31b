"""Angular-spectrum free-space propagation."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .fields import ComplexField
from .validation import check_finite_scalar, check_positive

__all__ = ["PropagationKernel", "make_kernel", "propagate", "transfer_function"]


def transfer_function(
    shape: tuple[int, int],
    pitch_um: float,
    wavelength_um: float,
    distance_um: float,
    band_limit: bool = True,
) -> np.ndarray:
    """Angular-spectrum transfer function in unshifted FFT order.

    ``exp(i 2 pi d sqrt(1/lambda**2 - fx**2 - fy**2))``, zero for evanescent
    frequencies. With ``band_limit`` the spectrum is additionally clipped
    to ``|f| < 1 / (lambda sqrt((2 df d)**2 + 1))`` per axis, which keeps the
    sampled chirp free of aliasing.
    """
    h, w = shape
    fy = sfft.fftfreq(h, d=pitch_um)
    fx = sfft.fftfreq(w, d=pitch_um)
    arg = 1.0 / wavelength_um**2 - fx[None, :] ** 2 - fy[:, None] ** 2
    propagating = arg > 0
    kz = np.sqrt(np.where(propagating, arg, 0.0))
    transfer = np.where(propagating, np.exp(2j * np.pi * distance_um * kz), 0.0)
    if band_limit and distance_um != 0:
        d = abs(distance_um)
        lim_x = 1.0 / (wavelength_um * math.sqrt((2.0 * d / (w * pitch_um)) ** 2 + 1.0))
        lim_y = 1.0 / (wavelength_um * math.sqrt((2.0 * d / (h * pitch_um)) ** 2 + 1.0))
        inside = (np.abs(fx)[None, :] < lim_x) & (np.abs(fy)[:, None] < lim_y)
        transfer = np.where(inside, transfer, 0.0)
    return transfer


@functools.lru_cache(maxsize=64)
def _cached_transfer(shape, pitch_um, wavelength_um, distance_um, band_limit):
    transfer = transfer_function(shape, pitch_um, wavelength_um, distance_um, band_limit)
    transfer.setflags(write=False)
    return transfer


def _pad_widths(shape: tuple[int, int], pad_fraction: float) -> tuple[int, int]:
    return (int(round(shape[0] * pad_fraction)), int(round(shape[1] * pad_fraction)))


@dataclass(frozen=True, eq=False)
class PropagationKernel:
    """Reusable propagator for one grid, wavelength and distance.

    The transfer array covers the padded grid when ``pad_px`` is nonzero;
    :meth:`apply` pads, filters and crops back to the input shape.
    """

    transfer: np.ndarray
    distance_um: float
    pitch_um: float
    wavelength_um: float
    band_limited: bool
    shape: tuple[int, int]
    pad_px: tuple[int, int] = (0, 0)

    def apply(self, arr: np.ndarray) -> np.ndarray:
        arr = np.asarray(arr)
        if arr.shape != self.shape:
            raise ValueError(f"kernel built for {self.shape}, got field {arr.shape}")
        if self.distance_um == 0:
            return arr.astype(np.complex128, copy=True)
        py, px = self.pad_px
        if py or px:
            arr = np.pad(arr, ((py, py), (px, px)))
        out = sfft.ifft2(sfft.fft2(arr) * self.transfer)
        if py or px:
            out = out[py : py + self.shape[0], px : px + self.shape[1]]
        return out

    def __call__(self, f):
        if isinstance(f, ComplexField):
            return f.with_data(self.apply(f.data))
        return self.apply(f)

    def reversed(self) -> "PropagationKernel":
        """Kernel for the opposite distance (the complex conjugate transfer)."""
        return make_kernel(
            self.shape,
            self.pitch_um,
            self.wavelength_um,
            -self.distance_um,
            band_limit=self.band_limited,
            pad_px=self.pad_px,
        )


def make_kernel(
    shape: tuple[int, int],
    pitch_um: float,
    wavelength_um: float,
    distance_um: float,
    *,
    band_limit: bool = True,
    pad_fraction: float = 0.0,
    pad_px: tuple[int, int] | None = None,
) -> PropagationKernel:
    """Build (or fetch from cache) the kernel for a grid and distance.

    Parameters
    ----------
    shape : (int, int)
        Shape of the fields the kernel will be applied to.
    pitch_um, wavelength_um : float
        Sampling pitch and wavelength, both > 0.
    distance_um : float
        Signed propagation distance.
    band_limit : bool
        Clip the spectrum against chirp aliasing.
    pad_fraction : float
        Zero padding added on every side, as a fraction of the field size.
        Ignored when ``pad_px`` is given.
    """
    pitch_um = check_positive(pitch_um, "pitch_um")
    wavelength_um = check_positive(wavelength_um, "wavelength_um")
    distance_um = check_finite_scalar(distance_um, "distance_um")
    shape = (int(shape[0]), int(shape[1]))
    if pad_px is None:
        if check_finite_scalar(pad_fraction, "pad_fraction") < 0:
            raise ValueError("pad_fraction must be >= 0")
        pad_px = _pad_widths(shape, pad_fraction)
    pad_px = (int(pad_px[0]), int(pad_px[1]))
    padded = (shape[0] + 2 * pad_px[0], shape[1] + 2 * pad_px[1])
    transfer = _cached_transfer(padded, pitch_um, wavelength_um, distance_um, bool(band_limit))
    return PropagationKernel(
        transfer, distance_um, pitch_um, wavelength_um, bool(band_limit), shape, pad_px
    )


def propagate(
    f: ComplexField,
    distance_um: float,
    *,
    band_limit: bool = True,
    pad_fraction: float = 0.0,
) -> ComplexField:
    """Propagate ``f`` over a signed distance with the angular spectrum method.

    With no padding the operation is periodic and, for fields inside the
    kept band, exactly inverted by propagating over ``-distance_um``.
    Padding suppresses wrap-around at the cost of that exact invertibility.
    """
    kernel = make_kernel(
        f.shape,
        f.pitch_um,
        f.wavelength_um,
        distance_um,
        band_limit=band_limit,
        pad_fraction=pad_fraction,
    )
    return kernel(f)
