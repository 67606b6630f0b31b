"""Quality metrics that compare recoveries against ground truth.

Blind recovery fixes the object only up to one global complex constant
(``(c O_D, D / c)`` predicts the same frames), so every comparison first
removes that constant.
"""
from __future__ import annotations

import numpy as np

from .validation import check_same_shape

__all__ = [
    "gauge_scale",
    "remove_gauge",
    "phase_rmse",
    "disk_background_phase",
    "michelson_contrast",
    "folded_contrast",
    "pose_error",
    "count_error",
]


def _arr(f):
    return np.asarray(getattr(f, "data", f))


def gauge_scale(estimate, reference, mask=None) -> complex:
    """Least-squares ``c`` minimising ``|reference - c * estimate|`` (on ``mask``)."""
    est, ref = _arr(estimate), _arr(reference)
    check_same_shape(est, ref, "estimate and reference")
    if mask is not None:
        est, ref = est[mask], ref[mask]
    den = np.vdot(est, est)
    if den == 0:
        raise ValueError("estimate is identically zero; gauge is undefined")
    return complex(np.vdot(est, ref) / den)


def remove_gauge(estimate, reference, mask=None) -> np.ndarray:
    """``c * estimate`` with ``c`` from :func:`gauge_scale`."""
    return gauge_scale(estimate, reference, mask) * _arr(estimate)


def phase_rmse(estimate, reference, mask=None) -> float:
    """RMS of the wrapped phase difference after gauge removal, in radians."""
    aligned = remove_gauge(estimate, reference, mask)
    diff = np.angle(aligned * np.conj(_arr(reference)))
    if mask is not None:
        diff = diff[mask]
    return float(np.sqrt(np.mean(diff**2)))


def disk_background_phase(estimate, reference, inside, outside) -> float:
    """Mean recovered phase on ``inside`` minus the mean on ``outside``."""
    ph = np.angle(remove_gauge(estimate, reference))
    return float(ph[inside].mean() - ph[outside].mean())


def michelson_contrast(profile) -> float:
    """``(max - min) / (max + min)`` of a non-negative profile."""
    p = np.asarray(profile, dtype=float)
    hi, lo = p.max(), p.min()
    return float((hi - lo) / (hi + lo)) if hi + lo > 0 else 0.0


def folded_contrast(image, period: int, axis: int = 1) -> float:
    """Michelson contrast of the line profile folded onto one ``period``.

    The image is averaged along the other axis, then samples are averaged
    per phase ``k mod period``; this keeps the contrast of a periodic
    pattern and averages out everything that is not locked to it.
    """
    prof = np.asarray(image, dtype=float).mean(axis=1 - axis)
    folded = np.array([prof[k::period].mean() for k in range(period)])
    return michelson_contrast(folded)


def pose_error(estimated, truth, *, align_first: bool = True) -> float:
    """Max Euclidean pose error in high-res pixels.

    With ``align_first`` both trajectories are referenced to their first
    frame, since blind registration only recovers relative motion.
    """
    est = np.array([[p.x_px, p.y_px] for p in estimated], dtype=float)
    ref = np.array([[p.x_px, p.y_px] for p in truth], dtype=float)
    if est.shape != ref.shape:
        raise ValueError(f"{len(est)} estimated poses vs {len(ref)} true poses")
    if align_first and len(est):
        est = est - est[0]
        ref = ref - ref[0]
    return float(np.hypot(*(est - ref).T).max()) if len(est) else 0.0


def count_error(n_found: int, n_true: int) -> float:
    """Relative count error ``|found - true| / true``."""
    if n_true <= 0:
        raise ValueError("true count must be positive")
    return abs(int(n_found) - int(n_true)) / int(n_true)
