"""The diffuser-modulated image formation model shared by simulation and recovery."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import ComplexField, Geometry, RealImage, bin_intensity, subpixel_shift
from .propagation import PropagationKernel, make_kernel

__all__ = ["Measurement", "ForwardModel"]


@dataclass(frozen=True)
class Measurement:
    """One captured low-resolution intensity frame."""

    index: int
    image: RealImage

    @property
    def data(self) -> np.ndarray:
        return self.image.data


class ForwardModel:
    """Frame synthesis ``I_j = bin(|P_d2[P_d1(O) . D_j]|**2, M)``.

    ``D_j = subpixel_shift(D, -x_j, -y_j)``. Propagation is periodic over
    the reconstruction grid so that back-propagation inverts it exactly;
    ``band_limit`` and ``pad_fraction`` are forwarded to the kernels.

    Parameters
    ----------
    shape : (int, int)
        High-resolution grid shape, divisible by ``geometry.upsample_m``.
    geometry : Geometry
    band_limit : bool, default False
    pad_fraction : float, default 0.0
    """

    def __init__(self, shape, geometry: Geometry, band_limit=False, pad_fraction=0.0):
        self.shape = (int(shape[0]), int(shape[1]))
        self.geometry = geometry
        m = geometry.upsample_m
        if self.shape[0] % m or self.shape[1] % m:
            raise ValueError(f"grid {self.shape} is not divisible by M={m}")
        opts = dict(band_limit=band_limit, pad_fraction=pad_fraction)
        pitch, wl = geometry.recon_pitch_um, geometry.wavelength_um
        self.to_diffuser: PropagationKernel = make_kernel(self.shape, pitch, wl, geometry.d1_um, **opts)
        self.from_diffuser: PropagationKernel = make_kernel(self.shape, pitch, wl, -geometry.d1_um, **opts)
        self.to_sensor: PropagationKernel = make_kernel(self.shape, pitch, wl, geometry.d2_um, **opts)
        self.from_sensor: PropagationKernel = make_kernel(self.shape, pitch, wl, -geometry.d2_um, **opts)

    @property
    def sensor_shape(self) -> tuple[int, int]:
        m = self.geometry.upsample_m
        return (self.shape[0] // m, self.shape[1] // m)

    @staticmethod
    def shifted_diffuser(diffuser: np.ndarray, pose) -> np.ndarray:
        return subpixel_shift(diffuser, -pose.x_px, -pose.y_px)

    def sensor_field(self, object_at_diffuser: np.ndarray, diffuser: np.ndarray, pose) -> np.ndarray:
        """High-resolution complex field on the sensor for one pose."""
        exit_wave = object_at_diffuser * self.shifted_diffuser(diffuser, pose)
        return self.to_sensor.apply(exit_wave)

    def frame(self, object_at_diffuser: np.ndarray, diffuser: np.ndarray, pose) -> np.ndarray:
        psi = self.sensor_field(object_at_diffuser, diffuser, pose)
        return bin_intensity(np.abs(psi) ** 2, self.geometry.upsample_m)

    def object_at_diffuser(self, obj) -> np.ndarray:
        return self.to_diffuser.apply(getattr(obj, "data", obj))

    def object_from_diffuser(self, object_at_diffuser) -> np.ndarray:
        return self.from_diffuser.apply(getattr(object_at_diffuser, "data", object_at_diffuser))

    def as_field(self, data) -> ComplexField:
        return ComplexField(data, self.geometry.recon_pitch_um, self.geometry.wavelength_um)
