"""Cell segmentation of quantitative phase maps.

Four steps: histogram threshold, seed extraction from local maxima,
marker watershed, and re-processing of regions that are much larger than
the average cell.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage as ndi
from skimage.filters import threshold_otsu
from skimage.morphology import h_maxima
from skimage.segmentation import flood, watershed
from sklearn.base import BaseEstimator

from .exceptions import DegenerateInputError
from .validation import check_array_2d, check_positive

__all__ = [
    "SegmentationParams",
    "LabelMap",
    "binarize_phase",
    "extract_seeds",
    "watershed_segment",
    "refine_oversized",
    "count_and_report",
    "segment_phase",
    "PhaseCellSegmenter",
]

_FOUR = ndi.generate_binary_structure(2, 1)
_EIGHT = ndi.generate_binary_structure(2, 2)


@dataclass(frozen=True)
class SegmentationParams:
    """Knobs of the segmentation pipeline.

    ``threshold_method`` is ``"otsu"`` or ``("fixed", value_rad)``.
    ``min_prominence`` is the height (as a fraction of the phase range in
    the mask) a maximum must rise above its surroundings to seed a cell.
    ``contrast_gain`` divides that prominence inside oversized regions after
    their contrast stretch.
    """

    threshold_method: object = "otsu"
    min_seed_separation_px: float = 3.0
    smoothing_sigma_px: float = 1.0
    min_prominence: float = 0.05
    oversize_factor: float = 2.0
    max_refine_rounds: int = 3
    contrast_gain: float = 4.0
    stretch_percentiles: tuple = (1.0, 99.0)

    def __post_init__(self):
        method = self.threshold_method
        if isinstance(method, (list, tuple)):
            if len(method) != 2 or method[0] != "fixed" or not np.isfinite(float(method[1])):
                raise ValueError(f"threshold_method must be 'otsu' or ('fixed', value), got {method!r}")
        elif method != "otsu":
            raise ValueError(f"threshold_method must be 'otsu' or ('fixed', value), got {method!r}")
        if not self.oversize_factor > 1:
            raise ValueError("oversize_factor must be > 1")
        if not self.min_seed_separation_px >= 1:
            raise ValueError("min_seed_separation_px must be >= 1")
        if self.smoothing_sigma_px < 0 or self.min_prominence < 0:
            raise ValueError("smoothing_sigma_px and min_prominence must be >= 0")
        if int(self.max_refine_rounds) < 0:
            raise ValueError("max_refine_rounds must be >= 0")
        check_positive(self.contrast_gain, "contrast_gain")
        lo, hi = self.stretch_percentiles
        if not 0 <= lo < hi <= 100:
            raise ValueError("stretch_percentiles must satisfy 0 <= lo < hi <= 100")


@dataclass
class LabelMap:
    """Integer label image, 0 = background, cells numbered ``1..n_cells``."""

    labels: np.ndarray
    pitch_um: float | None = None
    areas_px: np.ndarray = field(init=False, repr=False)
    centroids: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or not np.issubdtype(labels.dtype, np.integer):
            raise ValueError("labels must be a 2-D integer array")
        if labels.size and labels.min() < 0:
            raise ValueError("labels must be non-negative")
        labels, n = _relabel(labels)
        self.labels = labels
        idx = np.arange(1, n + 1)
        self.areas_px = np.bincount(labels.ravel(), minlength=n + 1)[1:]
        if n:
            self.centroids = np.array(ndi.center_of_mass(np.ones_like(labels), labels, idx)).reshape(n, 2)
        else:
            self.centroids = np.zeros((0, 2))

    @property
    def n_cells(self) -> int:
        return int(self.areas_px.size)

    @property
    def mean_area_px(self) -> float:
        return float(self.areas_px.mean()) if self.n_cells else 0.0


def _relabel(labels):
    """Renumber ids to ``1..n`` in order of first appearance in sorted ids."""
    ids = np.unique(labels)
    ids = ids[ids > 0]
    lut = np.zeros(int(labels.max(initial=0)) + 1, dtype=np.int32)
    lut[ids] = np.arange(1, ids.size + 1, dtype=np.int32)
    return lut[labels], int(ids.size)


def binarize_phase(phase, params: SegmentationParams | None = None) -> np.ndarray:
    """Foreground mask ``phase > threshold``.

    Otsu's histogram threshold by default. An all-zero map carries no signal
    and yields an empty mask; any other constant map has no threshold.
    """
    params = params or SegmentationParams()
    phase = check_array_2d(getattr(phase, "data", phase), "phase", dtype=float)
    method = params.threshold_method
    if isinstance(method, (list, tuple)):
        return phase > float(method[1])
    if np.all(phase == 0):
        return np.zeros(phase.shape, dtype=bool)
    if phase.min() == phase.max():
        raise DegenerateInputError("phase map is constant; no histogram threshold exists")
    return phase > threshold_otsu(phase)


def _smooth(phase, sigma):
    return ndi.gaussian_filter(phase, sigma, mode="nearest") if sigma > 0 else phase


def _peaks(smoothed, mask, prominence_abs):
    """Regional maxima inside ``mask`` with the given dynamic, one point per plateau."""
    work = np.where(mask, smoothed, smoothed[mask].min() if mask.any() else 0.0)
    if prominence_abs > 0:
        maxima = h_maxima(work, prominence_abs).astype(bool)
    else:
        maxima = work == ndi.maximum_filter(work, footprint=_EIGHT, mode="nearest")
    maxima &= mask
    lab, n = ndi.label(maxima, structure=_EIGHT)
    points = []
    for k, sl in enumerate(ndi.find_objects(lab), start=1):
        ys, xs = np.nonzero(lab[sl] == k)
        ys = ys + sl[0].start
        xs = xs + sl[1].start
        # plateau tie-break: the plateau pixel nearest its centroid
        cy, cx = ys.mean(), xs.mean()
        i = int(np.argmin((ys - cy) ** 2 + (xs - cx) ** 2))
        points.append((int(ys[i]), int(xs[i])))
    if prominence_abs > 0 and len(points) > 1:
        points = _drop_tied(work, mask, points, prominence_abs)
    return points


def _drop_tied(work, mask, points, h):
    """Drop maxima reachable from an equal or higher kept one without descending ``h``.

    h-maxima keeps every copy of a tied peak, since each one counts as a
    global maximum of its basin; this restores one seed per dome.
    """
    order = sorted(range(len(points)), key=lambda i: -work[points[i]])
    kept = np.zeros(work.shape, dtype=bool)
    out = []
    for i in order:
        p = points[i]
        region = flood(mask & (work >= work[p] - h), p, connectivity=1)
        if not (region & kept).any():
            kept[p] = True
            out.append(p)
    return out


def _merge_close(points, heights, min_sep):
    """Greedy suppression: keep higher seeds, drop any within ``min_sep``."""
    order = np.argsort(-np.asarray(heights), kind="stable")
    kept = []
    for i in order:
        p = points[i]
        if all((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 >= min_sep**2 for q in kept):
            kept.append(p)
    return sorted(kept)


def extract_seeds(phase, mask, params: SegmentationParams | None = None, *, prominence_scale: float = 1.0):
    """Seed points ``(row, col)`` at local maxima of the smoothed phase.

    Maxima must rise ``min_prominence`` (times the phase range in the mask)
    above their surroundings; plateaus give one seed; seeds closer than
    ``min_seed_separation_px`` are merged into the higher one. Every mask
    component without a maximum still receives one seed at its peak.
    """
    params = params or SegmentationParams()
    phase = check_array_2d(getattr(phase, "data", phase), "phase", dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != phase.shape:
        raise ValueError(f"mask {mask.shape} does not match phase {phase.shape}")
    if not mask.any():
        return []
    sm = _smooth(phase, params.smoothing_sigma_px)
    span = float(sm[mask].max() - sm[mask].min())
    points = _peaks(sm, mask, params.min_prominence * prominence_scale * span)
    comp, n_comp = ndi.label(mask, structure=_FOUR)
    seeded = {comp[p] for p in points}
    for k in range(1, n_comp + 1):
        if k not in seeded:
            inside = np.flatnonzero(comp.ravel() == k)
            points.append(tuple(int(v) for v in np.unravel_index(inside[np.argmax(sm.ravel()[inside])], sm.shape)))
    heights = [sm[p] for p in points]
    return _merge_close(points, heights, params.min_seed_separation_px)


def watershed_segment(phase, seeds, mask, *, pitch_um: float | None = None) -> LabelMap:
    """Marker watershed of the negated phase restricted to ``mask``.

    Every seed becomes one region; mask pixels not reachable from any seed
    (components without a seed) stay background.
    """
    phase = check_array_2d(getattr(phase, "data", phase), "phase", dtype=float)
    mask = np.asarray(mask, dtype=bool)
    seeds = [tuple(int(v) for v in s) for s in seeds]
    if not seeds:
        raise ValueError("watershed needs at least one seed")
    markers = np.zeros(phase.shape, dtype=np.int32)
    for k, (r, c) in enumerate(seeds, start=1):
        if not (0 <= r < phase.shape[0] and 0 <= c < phase.shape[1]) or not mask[r, c]:
            raise ValueError(f"seed {(r, c)} lies outside the foreground mask")
        markers[r, c] = k
    labels = watershed(-phase, markers, mask=mask, connectivity=1)
    return LabelMap(labels.astype(np.int32), pitch_um)


def _stretch(values, lo_pct, hi_pct):
    lo, hi = np.percentile(values, [lo_pct, hi_pct])
    if hi <= lo:
        return np.zeros_like(values)
    return np.clip((values - lo) / (hi - lo), 0.0, 1.0)


def refine_oversized(labels: LabelMap, phase, params: SegmentationParams | None = None) -> LabelMap:
    """Split regions at least ``oversize_factor`` times the mean cell area.

    Each such region is contrast stretched (linear percentile stretch) and
    re-seeded with ``min_prominence / contrast_gain``; a region is replaced
    only when it yields two or more seeds. Repeats up to
    ``max_refine_rounds`` times or until nothing changes.
    """
    params = params or SegmentationParams()
    phase = check_array_2d(getattr(phase, "data", phase), "phase", dtype=float)
    current = labels
    sm = _smooth(phase, params.smoothing_sigma_px)
    for _ in range(int(params.max_refine_rounds)):
        if current.n_cells == 0:
            break
        big = np.flatnonzero(current.areas_px >= params.oversize_factor * current.mean_area_px) + 1
        out = current.labels.copy()
        next_id = current.n_cells + 1
        changed = False
        for lab in big:
            region = current.labels == lab
            local = np.zeros_like(phase)
            local[region] = _stretch(sm[region], *params.stretch_percentiles)
            sub_params = replace(params, smoothing_sigma_px=0.0)
            seeds = extract_seeds(local, region, sub_params, prominence_scale=1.0 / params.contrast_gain)
            if len(seeds) < 2:
                continue
            sub = watershed_segment(local, seeds, region).labels
            out[region] = np.where(sub[region] > 0, sub[region] + next_id - 1, lab)
            next_id += int(sub.max())
            changed = True
        if not changed:
            break
        current = LabelMap(out, current.pitch_um)
    return current


def count_and_report(labels: LabelMap, *, n_bins: int = 20) -> dict:
    """Cell count, area histogram and (with a pitch) density per mm²."""
    areas = labels.areas_px
    report = {"n_cells": labels.n_cells, "mean_area_px": labels.mean_area_px}
    if labels.n_cells:
        counts, edges = np.histogram(areas, bins=n_bins)
    else:
        counts, edges = np.zeros(0, dtype=int), np.zeros(0)
    report["area_histogram"] = {"counts": counts.tolist(), "bin_edges_px": edges.tolist()}
    if labels.pitch_um is not None:
        field_mm2 = labels.labels.size * (labels.pitch_um * 1e-3) ** 2
        report["pitch_um"] = float(labels.pitch_um)
        report["mean_area_um2"] = labels.mean_area_px * labels.pitch_um**2
        report["density_per_mm2"] = labels.n_cells / field_mm2
    else:
        report["density_per_mm2"] = None
    return report


def segment_phase(phase, params: SegmentationParams | None = None, *, pitch_um: float | None = None) -> LabelMap:
    """Run all four steps; returns an empty map when nothing is foreground."""
    params = params or SegmentationParams()
    pitch_um = getattr(phase, "pitch_um", pitch_um)
    phase = check_array_2d(getattr(phase, "data", phase), "phase", dtype=float)
    mask = binarize_phase(phase, params)
    seeds = extract_seeds(phase, mask, params)
    if not seeds:
        return LabelMap(np.zeros(phase.shape, dtype=np.int32), pitch_um)
    labels = watershed_segment(phase, seeds, mask, pitch_um=pitch_um)
    return refine_oversized(labels, phase, params)


class PhaseCellSegmenter(BaseEstimator):
    """Estimator wrapper: ``fit(phase)`` segments, ``predict`` returns labels.

    Fitted attributes: ``labels_`` (LabelMap), ``n_cells_``, ``report_``.
    """

    def __init__(
        self,
        threshold_method="otsu",
        min_seed_separation_px=3.0,
        smoothing_sigma_px=1.0,
        min_prominence=0.05,
        oversize_factor=2.0,
        max_refine_rounds=3,
        contrast_gain=4.0,
        pitch_um=None,
    ):
        self.threshold_method = threshold_method
        self.min_seed_separation_px = min_seed_separation_px
        self.smoothing_sigma_px = smoothing_sigma_px
        self.min_prominence = min_prominence
        self.oversize_factor = oversize_factor
        self.max_refine_rounds = max_refine_rounds
        self.contrast_gain = contrast_gain
        self.pitch_um = pitch_um

    def _params(self):
        return SegmentationParams(
            threshold_method=self.threshold_method,
            min_seed_separation_px=self.min_seed_separation_px,
            smoothing_sigma_px=self.smoothing_sigma_px,
            min_prominence=self.min_prominence,
            oversize_factor=self.oversize_factor,
            max_refine_rounds=self.max_refine_rounds,
            contrast_gain=self.contrast_gain,
        )

    def fit(self, X, y=None):
        self.labels_ = segment_phase(X, self._params(), pitch_um=self.pitch_um)
        self.n_cells_ = self.labels_.n_cells
        self.report_ = count_and_report(self.labels_)
        return self

    def predict(self, X):
        return segment_phase(X, self._params(), pitch_um=self.pitch_um).labels

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_.labels

    def report_json(self, **kw) -> str:
        return json.dumps(self.report_, **kw)
