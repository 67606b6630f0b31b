"""Independent reference implementations used as test oracles.

Everything here is written with explicit loops or explicit DFT matrices so
that it shares no code path with the package under test.
"""
import numpy as np


def rms(a, b=None):
    a = np.asarray(a)
    d = a if b is None else a - np.asarray(b)
    return float(np.sqrt(np.mean(np.abs(d) ** 2)))


def block_sum(hi, m):
    h, w = hi.shape
    out = np.zeros((h // m, w // m), dtype=hi.dtype)
    for p in range(h // m):
        for q in range(w // m):
            total = 0.0
            for i in range(m):
                for k in range(m):
                    total += hi[p * m + i, q * m + k]
            out[p, q] = total
    return out


def dft_matrix(n):
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n)


def signed_freq(n, d=1.0):
    k = np.arange(n)
    return np.where(k < (n + 1) // 2, k, k - n) / (n * d)


def trig_shift(f, dx, dy):
    """Evaluate the periodic trigonometric interpolant of ``f`` at (x - dx, y - dy)."""
    h, w = f.shape
    wy, wx = dft_matrix(h), dft_matrix(w)
    spec = wy @ f @ wx.T
    ky, kx = signed_freq(h), signed_freq(w)
    ramp = np.exp(-2j * np.pi * (ky[:, None] * dy + kx[None, :] * dx))
    return (np.conj(wy) @ (spec * ramp) @ np.conj(wx).T) / (h * w)


def asm_bruteforce(f, pitch, wavelength, d):
    """Angular-spectrum propagation (no band-limit clamp) via DFT matrices and loops."""
    h, w = f.shape
    wy, wx = dft_matrix(h), dft_matrix(w)
    spec = wy @ f @ wx.T
    fy, fx = signed_freq(h, pitch), signed_freq(w, pitch)
    for i in range(h):
        for k in range(w):
            arg = 1.0 / wavelength**2 - fx[k] ** 2 - fy[i] ** 2
            spec[i, k] *= np.exp(2j * np.pi * d * np.sqrt(arg)) if arg > 0 else 0.0
    return (np.conj(wy) @ spec @ np.conj(wx).T) / (h * w)


def eq1_frame(obj, dif, x_shift, y_shift, d1, d2, m, pitch, wavelength):
    """One sensor frame evaluated step by step: propagate, modulate, propagate, square, bin."""
    o_d = asm_bruteforce(obj, pitch, wavelength, d1)
    d_j = trig_shift(dif, -x_shift, -y_shift)
    psi = asm_bruteforce(o_d * d_j, pitch, wavelength, d2)
    return block_sum(np.abs(psi) ** 2, m)


def gaussian_width(w0, z, wavelength):
    z_r = np.pi * w0**2 / wavelength
    return w0 * np.sqrt(1 + (z / z_r) ** 2)


def second_moment_radius(intensity, pitch):
    """``w`` such that a Gaussian ``exp(-2 r^2 / w^2)`` intensity has this second moment."""
    h, w = intensity.shape
    y = (np.arange(h) - h / 2) * pitch
    x = (np.arange(w) - w / 2) * pitch
    r2 = y[:, None] ** 2 + x[None, :] ** 2
    return float(np.sqrt(2 * np.sum(r2 * intensity) / np.sum(intensity)))


def fwhm_1d(profile, spacing):
    """Full width at half maximum of a centred, peaked profile (linear interpolation)."""
    p = np.asarray(profile, dtype=float)
    c = int(np.argmax(p))
    half = p[c] / 2
    right = c
    while right + 1 < len(p) and p[right + 1] > half:
        right += 1
    left = c
    while left - 1 >= 0 and p[left - 1] > half:
        left -= 1
    # interpolate crossings
    xr = right + (p[right] - half) / (p[right] - p[right + 1])
    xl = left - (p[left] - half) / (p[left] - p[left - 1])
    return (xr - xl) * spacing


def band_limited_spectrum_field(rng, n, pitch, cutoff):
    """Random complex ``n x n`` array whose spectrum is zero at radial frequency >= ``cutoff``."""
    spec = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    f = np.fft.fftfreq(n, d=pitch)
    spec[np.hypot(f[:, None], f[None, :]) >= cutoff] = 0
    return np.fft.ifft2(spec)
