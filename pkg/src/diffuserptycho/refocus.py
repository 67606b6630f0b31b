"""Digital refocusing of a recovered exit wave and autofocus scans."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import NumericalFailure
from .fields import ComplexField
from .propagation import make_kernel, propagate
from .validation import check_finite_scalar, check_int

__all__ = [
    "FocusScan",
    "refocus",
    "autofocus",
    "sharpness",
    "METRIC_KINDS",
    "Refocuser",
]

METRIC_KINDS = ("normalized_variance", "tamura")


def sharpness(amplitude: np.ndarray, kind: str = "normalized_variance") -> float:
    """Focus metric of an amplitude image.

    ``normalized_variance`` is ``var(A) / mean(A)**2``; ``tamura`` is
    ``sqrt(std(A) / mean(A))``. Both are scale invariant.
    """
    a = np.asarray(amplitude, dtype=float)
    if kind not in METRIC_KINDS:
        raise ValueError(f"metric_kind must be one of {METRIC_KINDS}, got {kind!r}")
    with np.errstate(over="ignore", invalid="ignore"):
        mean = a.mean()
        if mean <= 0:
            return 0.0
        if kind == "normalized_variance":
            return float(a.var() / mean**2)
        return float(np.sqrt(a.std() / mean))


@dataclass
class FocusScan:
    """Sharpness metric evaluated over a uniform axial grid."""

    z_values_um: list
    metric_values: list
    best_z_um: float
    metric_kind: str = "normalized_variance"
    planes: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        z = np.asarray(self.z_values_um, dtype=float)
        if len(z) != len(self.metric_values):
            raise ValueError("z_values_um and metric_values differ in length")
        if len(z) > 1 and np.any(np.diff(z) <= 0):
            raise ValueError("z_values_um must be strictly increasing")
        if self.best_z_um not in list(self.z_values_um):
            raise ValueError("best_z_um must be one of z_values_um")

    @property
    def step_um(self) -> float:
        z = self.z_values_um
        return float(z[1] - z[0]) if len(z) > 1 else 0.0

    def local_maxima(self, n: int | None = None) -> list[float]:
        """Depths of interior local maxima, strongest first.

        Plateaus count once; endpoints are never reported.
        """
        vals = np.asarray(self.metric_values, dtype=float)
        # runs of equal values, reported at their centre
        starts = np.flatnonzero(np.r_[True, vals[1:] != vals[:-1]])
        ends = np.r_[starts[1:], len(vals)] - 1
        idx = [
            (a + b) // 2
            for a, b in zip(starts, ends)
            if a > 0 and b < len(vals) - 1 and vals[a - 1] < vals[a] > vals[b + 1]
        ]
        idx.sort(key=lambda i: -vals[i])
        z = [float(self.z_values_um[i]) for i in idx]
        return z if n is None else z[:n]

    def to_dict(self) -> dict:
        return {
            "z_values_um": [float(z) for z in self.z_values_um],
            "metric_values": [float(v) for v in self.metric_values],
            "best_z_um": float(self.best_z_um),
            "metric_kind": self.metric_kind,
            "local_maxima_um": self.local_maxima(),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "FocusScan":
        return cls(list(d["z_values_um"]), list(d["metric_values"]), float(d["best_z_um"]), d["metric_kind"])


def refocus(obj: ComplexField, z_um: float, *, band_limit: bool = True, pad_fraction: float = 0.0) -> ComplexField:
    """Propagate the recovered exit wave to the plane ``z_um`` (signed)."""
    return propagate(obj, check_finite_scalar(z_um, "z_um"), band_limit=band_limit, pad_fraction=pad_fraction)


def autofocus(
    obj: ComplexField,
    z_min: float,
    z_max: float,
    n_steps: int,
    metric_kind: str = "normalized_variance",
    *,
    band_limit: bool = True,
    pad_fraction: float = 0.0,
    roi=None,
    keep_planes: bool = False,
    n_jobs: int = 1,
) -> FocusScan:
    """Scan ``n_steps`` uniformly spaced planes in ``[z_min, z_max]``.

    The metric is evaluated on ``|refocus(obj, z)|`` (optionally inside the
    ``roi`` slice tuple) and ``best_z_um`` is its argmax, first one on ties.
    """
    z_min = check_finite_scalar(z_min, "z_min")
    z_max = check_finite_scalar(z_max, "z_max")
    n_steps = check_int(n_steps, "n_steps", minimum=3)
    if not z_min < z_max:
        raise ValueError(f"need z_min < z_max, got {z_min} and {z_max}")
    if metric_kind not in METRIC_KINDS:
        raise ValueError(f"metric_kind must be one of {METRIC_KINDS}, got {metric_kind!r}")
    zs = np.linspace(z_min, z_max, n_steps)
    data = obj.data
    roi = roi if roi is not None else (slice(None), slice(None))

    def one(z):
        kernel = make_kernel(obj.shape, obj.pitch_um, obj.wavelength_um, z, band_limit=band_limit, pad_fraction=pad_fraction)
        plane = kernel.apply(data)
        return sharpness(np.abs(plane)[roi], metric_kind), (plane if keep_planes else None)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(one, zs))
    else:
        results = [one(z) for z in zs]
    values = [r[0] for r in results]
    if not np.all(np.isfinite(values)):
        raise NumericalFailure("focus metric is not finite on some planes")
    best = int(np.argmax(values))
    planes = {float(z): obj.with_data(r[1]) for z, r in zip(zs, results) if r[1] is not None}
    return FocusScan([float(z) for z in zs], values, float(zs[best]), metric_kind, planes)


class Refocuser(BaseEstimator):
    """Autofocus as an estimator: ``fit(field)`` scans, ``transform`` refocuses.

    After fitting, ``scan_`` holds the :class:`FocusScan` and ``best_z_um_``
    the chosen plane. ``transform(field)`` propagates to ``best_z_um_``.
    """

    def __init__(self, z_min=-100.0, z_max=100.0, n_steps=41, metric_kind="normalized_variance", band_limit=True):
        self.z_min = z_min
        self.z_max = z_max
        self.n_steps = n_steps
        self.metric_kind = metric_kind
        self.band_limit = band_limit

    def fit(self, X, y=None):
        self.scan_ = autofocus(X, self.z_min, self.z_max, self.n_steps, self.metric_kind, band_limit=self.band_limit)
        self.best_z_um_ = self.scan_.best_z_um
        return self

    def transform(self, X):
        return refocus(X, self.best_z_um_, band_limit=self.band_limit)
