"""Blind recovery of the diffuser trajectory from raw frames.

Each frame is registered against an anchor by normalised cross-correlation,
refined to sub-pixel precision with a locally up-sampled DFT of the
cross-power spectrum (matrix-multiply DFT evaluated only around the coarse
peak).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import DegenerateInputError, DimensionError
from .fields import subpixel_shift
from .validation import check_array_2d, check_fraction, check_int, check_positive

log = logging.getLogger(__name__)

__all__ = [
    "ScanPose",
    "estimate_shift",
    "estimate_trajectory",
    "TrajectoryRegistrar",
    "poses_to_json",
    "poses_from_json",
    "poses_to_array",
]


@dataclass(frozen=True)
class ScanPose:
    """Diffuser shift for one frame, in high-resolution pixels.

    The diffuser seen by frame ``j`` is ``subpixel_shift(D, -x_px, -y_px)``.
    """

    frame_index: int
    x_px: float
    y_px: float
    confidence: float = 1.0
    flagged: bool = False

    def to_dict(self) -> dict:
        out = {
            "frame": self.frame_index,
            "x_px": self.x_px,
            "y_px": self.y_px,
            "confidence": self.confidence,
        }
        if self.flagged:
            out["flagged"] = True
        return out


def poses_to_array(poses) -> np.ndarray:
    return np.array([[p.x_px, p.y_px] for p in poses], dtype=float).reshape(-1, 2)


def poses_to_json(poses) -> list[dict]:
    return [p.to_dict() for p in poses]


def poses_from_json(items) -> list[ScanPose]:
    return [
        ScanPose(
            int(d["frame"]),
            float(d["x_px"]),
            float(d["y_px"]),
            float(d.get("confidence", 1.0)),
            bool(d.get("flagged", False)),
        )
        for d in items
    ]


def _edge_window(shape: tuple[int, int], fraction: float = 0.125) -> np.ndarray:
    """Separable raised-cosine taper over ``fraction`` of each edge."""

    def taper(n):
        w = np.ones(n)
        k = max(1, int(round(n * fraction)))
        ramp = 0.5 * (1 - np.cos(np.pi * (np.arange(k) + 0.5) / k))
        w[:k] = ramp
        w[n - k :] = ramp[::-1]
        return w

    return np.outer(taper(shape[0]), taper(shape[1]))


def _band_mask(shape: tuple[int, int], highpass: float, lowpass: float) -> np.ndarray:
    """Radial band-pass; both cut-offs are fractions of the Nyquist radius."""
    fy = sfft.fftfreq(shape[0])
    fx = sfft.fftfreq(shape[1])
    radius = np.hypot(fy[:, None], fx[None, :]) / 0.5
    mask = (radius >= highpass).astype(float)
    if lowpass < 1:
        mask *= np.exp(-0.5 * (radius / lowpass) ** 2)
    return mask


def _prepare(img: np.ndarray, window: bool, highpass_fraction: float, lowpass_fraction: float) -> np.ndarray:
    """Mean-removed, tapered, band-passed spectrum of ``img``."""
    img = img - img.mean()
    if window:
        img = img * _edge_window(img.shape)
        img = img - img.mean()
    spec = sfft.fft2(img)
    if highpass_fraction > 0 or lowpass_fraction < 1:
        spec = spec * _band_mask(img.shape, highpass_fraction, lowpass_fraction)
    return spec


def _upsampled_dft(data: np.ndarray, region: int, factor: int, offset: tuple[float, float]):
    """Inverse DFT of ``data`` on a ``region x region`` patch sampled at 1/factor px.

    ``offset`` is the patch origin in up-sampled pixel units, so pixel
    ``(i, k)`` of the result sits at ``(offset + (i, k)) / factor``.
    """
    h, w = data.shape
    rows = (np.arange(region) - offset[0])[:, None]
    cols = (np.arange(region) - offset[1])[None, :]
    fy = sfft.ifftshift(np.arange(h) - h // 2)[None, :]
    fx = sfft.ifftshift(np.arange(w) - w // 2)[:, None]
    row_kernel = np.exp(2j * np.pi / (h * factor) * rows * fy)
    col_kernel = np.exp(2j * np.pi / (w * factor) * fx * cols)
    return row_kernel @ data @ col_kernel


def estimate_shift(
    ref,
    moving,
    subpx_factor: int = 20,
    *,
    window: bool = False,
    highpass_fraction: float = 0.05,
    lowpass_fraction: float = 1.0,
) -> tuple[float, float, float]:
    """Displacement of ``moving`` relative to ``ref``.

    Returns ``(dx, dy, confidence)`` such that ``moving`` is approximately
    ``subpixel_shift(ref, dx, dy)``. ``confidence`` is the normalised
    cross-correlation peak, clipped to [0, 1].

    Raises
    ------
    DegenerateInputError
        If either image has no variance left after pre-processing.
    """
    ref = check_array_2d(getattr(ref, "data", ref), "ref", dtype=float)
    moving = check_array_2d(getattr(moving, "data", moving), "moving", dtype=float)
    if ref.shape != moving.shape:
        raise DimensionError(f"shape mismatch: {ref.shape} vs {moving.shape}")
    subpx_factor = check_int(subpx_factor, "subpx_factor")
    highpass_fraction = check_fraction(highpass_fraction, "highpass_fraction")
    lowpass_fraction = check_positive(lowpass_fraction, "lowpass_fraction")

    f_ref = _prepare(ref, window, highpass_fraction, lowpass_fraction)
    f_mov = _prepare(moving, window, highpass_fraction, lowpass_fraction)
    norm = math.sqrt(np.sum(np.abs(f_ref) ** 2) * np.sum(np.abs(f_mov) ** 2)) / ref.size
    if norm <= 1e-300 * ref.size or not np.isfinite(norm):
        raise DegenerateInputError("cannot register a flat (zero-variance) image")

    cross = f_mov * np.conj(f_ref)
    cc = sfft.ifft2(cross).real
    peak = np.unravel_index(np.argmax(cc), cc.shape)
    h, w = cc.shape
    shift = np.array(
        [peak[0] - h if peak[0] > h // 2 else peak[0], peak[1] - w if peak[1] > w // 2 else peak[1]],
        dtype=float,
    )
    peak_value = cc[peak]

    if subpx_factor > 1:
        region = int(math.ceil(subpx_factor * 1.5))
        center = region // 2
        offset = (center - shift[0] * subpx_factor, center - shift[1] * subpx_factor)
        fine = _upsampled_dft(cross, region, subpx_factor, offset).real / (h * w)
        i, k = np.unravel_index(np.argmax(fine), fine.shape)
        shift = shift + (np.array([i, k]) - center) / subpx_factor
        peak_value = max(peak_value, fine[i, k])

    confidence = float(np.clip(peak_value / norm, 0.0, 1.0))
    dy, dx = shift
    return float(dx), float(dy), confidence


def _frame_stack(frames) -> np.ndarray:
    arrs = []
    for fr in frames:
        img = getattr(fr, "image", fr)
        arrs.append(np.asarray(getattr(img, "data", img), dtype=float))
    if not arrs:
        raise ValueError("no frames given")
    shape = arrs[0].shape
    for a in arrs:
        if a.shape != shape:
            raise DimensionError(f"frames differ in shape: {shape} vs {a.shape}")
    return np.stack(arrs)


def _frame_indices(frames) -> list[int]:
    return [int(getattr(fr, "index", j)) for j, fr in enumerate(frames)]


def _separate_static(stack, shifts, n_inner=3, static=None):
    """Split frames into a static image and one moving pattern.

    Model: ``frame_j = static + subpixel_shift(moving, -shifts[j])`` with
    ``shifts`` in sensor pixels. Alternates the two least-squares averages.
    """
    if static is None:
        static = stack.mean(axis=0)
    for _ in range(n_inner):
        moving = np.mean([subpixel_shift(f - static, x, y) for f, (x, y) in zip(stack, shifts)], axis=0)
        static = np.mean([f - subpixel_shift(moving, -x, -y) for f, (x, y) in zip(stack, shifts)], axis=0)
    return static, moving


def _coarse_shifts(stack, strategy, subpx_factor, opts):
    """Diffuser shifts (sensor px) and confidences from frame-to-frame correlation."""
    shifts = np.zeros((len(stack), 2))
    conf = np.ones(len(stack))
    for j in range(1, len(stack)):
        ref = stack[0] if strategy == "anchored" else stack[j - 1]
        dx, dy, conf[j] = estimate_shift(ref, stack[j], subpx_factor, **opts)
        # speckle displaced by d on the sensor means the diffuser sits at -d
        shifts[j] = (-dx, -dy)
        if strategy == "chained":
            shifts[j] += shifts[j - 1]
    return shifts, conf


def estimate_trajectory(
    frames,
    *,
    upsample_m: int = 3,
    subpx_factor: int = 20,
    strategy: str = "anchored",
    window: bool = False,
    highpass_fraction: float = 0.05,
    flatfield: bool = True,
    refine_rounds: int = 3,
    refine_lowpass: float = 0.5,
    min_confidence: float = 0.2,
    on_low_confidence: str = "flag",
    max_shift_px: float = 50.0,
) -> list[ScanPose]:
    """Register every frame and return diffuser poses in high-res pixels.

    Stage one correlates each frame with frame 0 (``strategy="anchored"``)
    or with its predecessor, accumulating (``"chained"``). Frames are first
    divided by the mean frame when ``flatfield`` is set, which suppresses
    the static object pattern.

    Stage two (``refine_rounds > 0``) fits the frames as a static image plus
    one translating speckle pattern, then re-registers every frame, static
    part removed, against that pattern with a Gaussian low-pass at
    ``refine_lowpass`` of Nyquist. Coarse sensor sampling biases raw speckle
    correlation toward whole-pixel shifts; the low-pass removes most of that
    bias and the static fit keeps the object out of the correlation. Poses
    stay anchored to frame 0.

    Frames whose correlation peak falls below ``min_confidence`` (or whose
    pose exceeds ``max_shift_px``) are handled per ``on_low_confidence``:
    ``"flag"`` keeps them with ``flagged=True``, ``"drop"`` removes them,
    ``"raise"`` aborts. The reported confidence is the lower of the two
    stages.

    ``window`` tapers frame edges before correlation; leave it off for
    periodic (simulated) frames, where it biases shifts toward zero.
    """
    stack = _frame_stack(frames)
    if len(stack) < 2:
        raise ValueError("trajectory estimation needs at least 2 frames")
    upsample_m = check_int(upsample_m, "upsample_m")
    refine_rounds = check_int(refine_rounds, "refine_rounds", minimum=0)
    max_shift_px = check_positive(max_shift_px, "max_shift_px")
    if strategy not in ("anchored", "chained"):
        raise ValueError(f"unknown strategy {strategy!r}")
    if on_low_confidence not in ("flag", "drop", "raise"):
        raise ValueError(f"unknown on_low_confidence {on_low_confidence!r}")
    indices = _frame_indices(frames)
    for j, f in enumerate(stack):
        if f.std() == 0:
            raise DegenerateInputError(f"frame {indices[j]} is flat")

    coarse = stack
    if flatfield:
        mean = stack.mean(axis=0)
        coarse = stack / np.maximum(mean, 1e-12 * mean.max() + 1e-300)
    opts = dict(window=window, highpass_fraction=highpass_fraction)
    shifts, conf = _coarse_shifts(coarse, strategy, subpx_factor, opts)

    if refine_rounds:
        # frames that failed stage one stay out of the pattern fit and keep their low score
        good = conf >= min_confidence
        good[0] = True
        norm = stack / stack.mean()
        static = None
        refined = conf.copy()
        for _ in range(refine_rounds):
            static, moving = _separate_static(norm[good], shifts[good], static=static)
            for j in range(len(norm)):
                dx, dy, refined[j] = estimate_shift(
                    moving,
                    norm[j] - static,
                    subpx_factor,
                    window=window,
                    highpass_fraction=0.0,
                    lowpass_fraction=refine_lowpass,
                )
                shifts[j] = (-dx, -dy)
            shifts -= shifts[0]
        conf = np.minimum(conf, refined)

    poses = []
    for j, (x, y) in enumerate(shifts * upsample_m):
        x, y = float(x), float(y)
        bad = conf[j] < min_confidence or max(abs(x), abs(y)) > max_shift_px
        if bad:
            msg = f"frame {indices[j]}: confidence {conf[j]:.3f}, pose ({x:.2f}, {y:.2f}) px"
            if on_low_confidence == "raise":
                raise DegenerateInputError("registration rejected " + msg)
            log.warning("low-confidence registration, %s", msg)
            if on_low_confidence == "drop":
                continue
        poses.append(ScanPose(indices[j], x, y, float(conf[j]), bool(bad)))
    return poses


class TrajectoryRegistrar(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`estimate_trajectory`.

    ``fit`` registers the frames and stores ``poses_``; ``transform`` returns
    the poses as an ``(n_frames, 2)`` array of ``(x_px, y_px)``.
    """

    def __init__(
        self,
        upsample_m=3,
        subpx_factor=20,
        strategy="anchored",
        window=False,
        highpass_fraction=0.05,
        flatfield=True,
        refine_rounds=3,
        refine_lowpass=0.5,
        min_confidence=0.2,
        on_low_confidence="flag",
        max_shift_px=50.0,
    ):
        self.upsample_m = upsample_m
        self.subpx_factor = subpx_factor
        self.strategy = strategy
        self.window = window
        self.highpass_fraction = highpass_fraction
        self.flatfield = flatfield
        self.refine_rounds = refine_rounds
        self.refine_lowpass = refine_lowpass
        self.min_confidence = min_confidence
        self.on_low_confidence = on_low_confidence
        self.max_shift_px = max_shift_px

    def fit(self, X, y=None):
        self.poses_ = estimate_trajectory(X, **self.get_params())
        self.confidences_ = np.array([p.confidence for p in self.poses_])
        return self

    def transform(self, X=None):
        if not hasattr(self, "poses_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("TrajectoryRegistrar is not fitted yet")
        return poses_to_array(self.poses_)
