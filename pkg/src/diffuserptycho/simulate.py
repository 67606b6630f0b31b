"""Synthetic objects, diffusers, scan trajectories and measurement datasets."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .fields import ComplexField, Geometry, RealImage
from .forward import ForwardModel, Measurement
from .propagation import propagate
from .registration import ScanPose
from .validation import check_fraction, check_int, check_positive

__all__ = [
    "DiffuserSpec",
    "ObjectSpec",
    "NoiseSpec",
    "make_diffuser",
    "make_test_object",
    "simulate_dataset",
    "generate_trajectory",
    "OBJECT_KINDS",
    "BlobField",
    "make_blob_field",
]

OBJECT_KINDS = ("line_pairs", "phase_disks", "siemens_star", "two_layer", "from_file")


@dataclass(frozen=True)
class DiffuserSpec:
    """Bead-coated coverslip: random smooth phase bumps with shallow amplitude dips.

    ``bead_density_per_um2`` counts bead centres per square micrometre.
    """

    bead_diameter_um: float = 1.0
    bead_density_per_um2: float = 0.6
    max_phase_rad: float = 1.5
    amplitude_floor: float = 0.85
    rng_seed: int = 0

    def __post_init__(self):
        check_positive(self.bead_diameter_um, "bead_diameter_um")
        if self.bead_density_per_um2 < 0:
            raise ValueError("bead_density_per_um2 must be >= 0")
        if self.max_phase_rad < 0:
            raise ValueError("max_phase_rad must be >= 0")
        check_fraction(self.amplitude_floor, "amplitude_floor")


@dataclass(frozen=True)
class ObjectSpec:
    """Test-object description; only the fields relevant to ``kind`` are read."""

    kind: str = "phase_disks"
    # line_pairs / siemens_star
    linewidth_um: float | None = None
    linewidth_px: float | None = None
    extent_frac: float = 0.5
    dark_amplitude: float = 0.0
    n_spokes: int = 24
    # phase_disks
    disk_phase_rad: float = 1.0
    disk_radius_um: float = 12.0
    n_disks: int = 1
    # two_layer
    layer_separation_um: float = 60.0
    n_features: int = 6
    feature_size_um: float = 3.0
    # from_file
    path: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in OBJECT_KINDS:
            raise ValueError(f"unknown object kind {self.kind!r}; expected one of {OBJECT_KINDS}")


@dataclass(frozen=True)
class NoiseSpec:
    model: str = "none"
    photons_per_unit: float = 1000.0
    sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.model not in ("none", "poisson", "gaussian"):
            raise ValueError(f"unknown noise model {self.model!r}")
        if self.model == "poisson":
            check_positive(self.photons_per_unit, "photons_per_unit")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


def _bump_kernel(shape, pitch_um, diameter_um) -> np.ndarray:
    """Raised-cosine bump centred on pixel (0, 0), periodic layout.

    The support radius is 0.8 bead diameters, which puts the phase-map
    autocorrelation FWHM at about one bead diameter.
    """
    h, w = shape
    y = sfft.fftfreq(h, d=1.0 / h) * pitch_um
    x = sfft.fftfreq(w, d=1.0 / w) * pitch_um
    r = np.hypot(y[:, None], x[None, :])
    radius = 0.8 * diameter_um
    return np.where(r < radius, 0.5 * (1 + np.cos(np.pi * r / radius)), 0.0)


def make_diffuser(spec: DiffuserSpec, h: int, w: int, pitch_um: float, wavelength_um: float) -> ComplexField:
    """Render a random bead diffuser on an ``h x w`` periodic grid.

    Bead centres are uniform over the grid; each contributes a raised-cosine
    phase bump of height ``max_phase_rad`` and a proportional amplitude dip
    (saturating at ``amplitude_floor``).
    """
    h, w = check_int(h, "h"), check_int(w, "w")
    pitch_um = check_positive(pitch_um, "pitch_um")
    if spec.bead_density_per_um2 == 0:
        return ComplexField.ones((h, w), pitch_um, wavelength_um)
    area = h * w * pitch_um**2
    if min(h, w) * pitch_um < spec.bead_diameter_um or spec.bead_density_per_um2 * area < 1:
        raise ValueError(
            f"grid of {h}x{w} px at {pitch_um} um is too small to hold one bead "
            f"of {spec.bead_diameter_um} um at density {spec.bead_density_per_um2}"
        )
    rng = np.random.default_rng(spec.rng_seed)
    n_beads = max(1, rng.poisson(spec.bead_density_per_um2 * area))
    ys = rng.uniform(0, h, n_beads)
    xs = rng.uniform(0, w, n_beads)
    # bilinear splat of bead centres, then periodic convolution with the bump
    centers = np.zeros((h, w))
    y0, x0 = np.floor(ys).astype(int), np.floor(xs).astype(int)
    fy, fx = ys - y0, xs - x0
    for dy, dx, wt in ((0, 0, (1 - fy) * (1 - fx)), (1, 0, fy * (1 - fx)), (0, 1, (1 - fy) * fx), (1, 1, fy * fx)):
        np.add.at(centers, ((y0 + dy) % h, (x0 + dx) % w), wt)
    bump = _bump_kernel((h, w), pitch_um, spec.bead_diameter_um)
    height = sfft.ifft2(sfft.fft2(centers) * sfft.fft2(bump)).real
    height = np.clip(height, 0.0, None)
    phase = spec.max_phase_rad * height
    dip = np.clip(height, 0.0, 1.0)
    amplitude = 1.0 - (1.0 - spec.amplitude_floor) * dip
    return ComplexField(amplitude * np.exp(1j * phase), pitch_um, wavelength_um)


def _linewidth_px(spec: ObjectSpec, pitch_um: float) -> float:
    if spec.linewidth_px is not None:
        return float(spec.linewidth_px)
    if spec.linewidth_um is not None:
        return spec.linewidth_um / pitch_um
    return 2.0


def _central_box(h, w, frac):
    bh, bw = max(1, int(round(h * frac))), max(1, int(round(w * frac)))
    r0, c0 = (h - bh) // 2, (w - bw) // 2
    box = np.zeros((h, w), dtype=bool)
    box[r0 : r0 + bh, c0 : c0 + bw] = True
    return box


def _line_pairs(spec, h, w, pitch_um):
    lw = _linewidth_px(spec, pitch_um)
    cols = np.arange(w)
    dark_cols = np.floor(cols / lw).astype(int) % 2 == 1
    amp = np.ones((h, w))
    region = _central_box(h, w, spec.extent_frac)
    amp[region & dark_cols[None, :]] = spec.dark_amplitude
    return amp.astype(np.complex128)


def _phase_disks(spec, h, w, pitch_um):
    radius_px = spec.disk_radius_um / pitch_um
    n = check_int(spec.n_disks, "n_disks")
    side = int(math.ceil(math.sqrt(n)))
    yy, xx = np.mgrid[0:h, 0:w]
    phase = np.zeros((h, w))
    for k in range(n):
        cy = (k // side + 0.5) * h / side
        cx = (k % side + 0.5) * w / side
        inside = (yy - cy + 0.5) ** 2 + (xx - cx + 0.5) ** 2 <= radius_px**2
        phase[inside] = spec.disk_phase_rad
    return np.exp(1j * phase)


def _siemens_star(spec, h, w, pitch_um):
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2, (w - 1) / 2
    theta = np.arctan2(yy - cy, xx - cx)
    r = np.hypot(yy - cy, xx - cx)
    spokes = np.floor((theta + np.pi) / (2 * np.pi) * 2 * spec.n_spokes).astype(int) % 2 == 1
    inside = r <= spec.extent_frac * min(h, w) / 2
    amp = np.ones((h, w))
    amp[inside & spokes] = spec.dark_amplitude
    return amp.astype(np.complex128)


def _sparse_absorbers(rng, h, w, pitch_um, n, size_um, cols):
    """``n`` opaque squares with centres inside the column range ``cols``."""
    amp = np.ones((h, w))
    s = max(1, int(round(size_um / pitch_um)))
    margin = s
    for _ in range(n):
        cy = rng.integers(margin, h - margin - s)
        cx = rng.integers(cols[0] + margin, cols[1] - margin - s)
        amp[cy : cy + s, cx : cx + s] = 0.2
    return amp


def _two_layer(spec, h, w, pitch_um, wavelength_um):
    """Exit wave of two thin absorbing layers ``layer_separation_um`` apart.

    The upstream layer holds features in the left half, the downstream
    (exit-plane) layer in the right half; refocusing by
    ``-layer_separation_um`` brings the upstream layer into focus.
    """
    rng = np.random.default_rng(spec.seed)
    left = _sparse_absorbers(rng, h, w, pitch_um, spec.n_features, spec.feature_size_um, (0, w // 2))
    right = _sparse_absorbers(rng, h, w, pitch_um, spec.n_features, spec.feature_size_um, (w // 2, w))
    upstream = ComplexField(left.astype(np.complex128), pitch_um, wavelength_um)
    arrived = propagate(upstream, spec.layer_separation_um, band_limit=False)
    return arrived.data * right


def _from_file(spec, h, w, pitch_um):
    from .fields import load_cfld

    if spec.path is None:
        raise ValueError("from_file object needs a path")
    path = Path(spec.path)
    if path.suffix.lower() == ".cfld":
        data = load_cfld(path).data
    elif path.suffix.lower() == ".npy":
        data = np.load(path)
    else:
        from PIL import Image

        img = np.asarray(Image.open(path), dtype=float)
        if img.ndim == 3:
            img = img[..., :3].mean(axis=-1)
        data = img / max(img.max(), 1e-300)
    if data.shape[0] < h or data.shape[1] < w:
        raise ValueError(f"{path}: {data.shape} is smaller than the requested {(h, w)} grid")
    r0, c0 = (data.shape[0] - h) // 2, (data.shape[1] - w) // 2
    return np.asarray(data[r0 : r0 + h, c0 : c0 + w], dtype=np.complex128)


def make_test_object(spec: ObjectSpec, h: int, w: int, pitch_um: float, wavelength_um: float) -> ComplexField:
    """Deterministic synthetic object described by ``spec``."""
    h, w = check_int(h, "h"), check_int(w, "w")
    pitch_um = check_positive(pitch_um, "pitch_um")
    if spec.kind == "line_pairs":
        data = _line_pairs(spec, h, w, pitch_um)
    elif spec.kind == "phase_disks":
        data = _phase_disks(spec, h, w, pitch_um)
    elif spec.kind == "siemens_star":
        data = _siemens_star(spec, h, w, pitch_um)
    elif spec.kind == "two_layer":
        data = _two_layer(spec, h, w, pitch_um, wavelength_um)
    elif spec.kind == "from_file":
        data = _from_file(spec, h, w, pitch_um)
    else:  # pragma: no cover - rejected by ObjectSpec
        raise ValueError(f"unknown object kind {spec.kind!r}")
    return ComplexField(data, pitch_um, wavelength_um)


def generate_trajectory(
    n_frames: int,
    step_um: float,
    pattern: str = "random_walk",
    seed: int = 0,
    *,
    pitch_um: float = 1.67 / 3,
    step_jitter: float = 1.0 / 3.0,
    max_excursion_um: float = 15.0,
) -> list[ScanPose]:
    """Diffuser poses in high-resolution pixels, starting at the origin.

    ``raster`` walks a square grid with x varying fastest. ``random_walk``
    takes steps of uniform random direction whose length is uniform in
    ``step_um * [1 - step_jitter, 1 + step_jitter]``; a step that would leave
    the disc of radius ``max_excursion_um`` is reflected back toward the
    origin.
    """
    n_frames = check_int(n_frames, "n_frames")
    step_um = check_positive(step_um, "step_um")
    pitch_um = check_positive(pitch_um, "pitch_um")
    if pattern == "raster":
        side = int(math.ceil(math.sqrt(n_frames)))
        pts = [((k % side) * step_um, (k // side) * step_um) for k in range(n_frames)]
    elif pattern == "random_walk":
        rng = np.random.default_rng(seed)
        pts = [(0.0, 0.0)]
        pos = np.zeros(2)
        for _ in range(n_frames - 1):
            length = step_um * rng.uniform(1 - step_jitter, 1 + step_jitter)
            angle = rng.uniform(0, 2 * np.pi)
            step = length * np.array([np.cos(angle), np.sin(angle)])
            if np.hypot(*(pos + step)) > max_excursion_um:
                step = -step
            pos = pos + step
            pts.append((float(pos[0]), float(pos[1])))
    else:
        raise ValueError(f"unknown trajectory pattern {pattern!r}")
    return [ScanPose(j, x / pitch_um, y / pitch_um) for j, (x, y) in enumerate(pts)]


def _add_noise(frame: np.ndarray, noise: NoiseSpec, j: int) -> np.ndarray:
    if noise.model == "none":
        return frame
    # independent stream per frame keeps parallel and sequential runs identical
    rng = np.random.default_rng([noise.rng_seed, j])
    if noise.model == "poisson":
        return rng.poisson(frame * noise.photons_per_unit) / noise.photons_per_unit
    return np.clip(frame + rng.normal(0.0, noise.sigma, frame.shape), 0.0, None)


def simulate_dataset(
    obj: ComplexField,
    diffuser: ComplexField,
    g: Geometry,
    poses,
    noise: NoiseSpec | None = None,
    *,
    band_limit: bool = False,
    n_jobs: int = 1,
) -> list[Measurement]:
    """Synthesize one sensor frame per pose.

    Returns a list of :class:`Measurement` at the sensor pitch. Noise streams
    are seeded from ``(noise.rng_seed, frame index)``, so output does not
    depend on ``n_jobs``.
    """
    poses = list(poses)
    if not poses:
        raise ValueError("pose list is empty")
    if obj.shape != diffuser.shape:
        raise ValueError(f"object {obj.shape} and diffuser {diffuser.shape} grids differ")
    noise = noise or NoiseSpec()
    model = ForwardModel(obj.shape, g, band_limit=band_limit)
    o_d = model.object_at_diffuser(obj)
    d = diffuser.data

    def one(j_pose):
        j, pose = j_pose
        frame = _add_noise(model.frame(o_d, d, pose), noise, pose.frame_index)
        return Measurement(pose.frame_index, RealImage(frame, g.sensor_pitch_um))

    items = list(enumerate(poses))
    if n_jobs == 1:
        return [one(item) for item in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(one, items))


@dataclass
class BlobField:
    """Synthetic cell-like phase map with its ground truth."""

    phase: RealImage
    centers_px: np.ndarray
    radii_px: np.ndarray
    pair_ids: np.ndarray  # -1 for isolated blobs, else the id shared by a touching pair

    @property
    def n_blobs(self) -> int:
        return int(len(self.centers_px))


def make_blob_field(
    n_blobs: int = 1550,
    extent_um: float = 200.0,
    pitch_um: float = 0.5,
    radius_um: tuple = (1.25, 1.75),
    touching_fraction: float = 0.1,
    phase_rad: float = 1.0,
    noise_sigma_rad: float = 0.0,
    gap_px: float = 1.5,
    seed: int = 0,
    max_tries: int = 200_000,
) -> BlobField:
    """Random sequential placement of lens-shaped phase blobs.

    Each blob has the profile ``phase_rad * sqrt(1 - (r/R)**2)``. A fraction
    ``touching_fraction`` of the blobs comes in pairs whose discs overlap by
    under a pixel; all other blobs keep a clearance of ``gap_px``. Overlaps
    take the pixelwise maximum so a touching pair keeps a saddle between
    its two peaks.
    """
    n_blobs = check_int(n_blobs, "n_blobs")
    touching_fraction = check_fraction(touching_fraction, "touching_fraction")
    size = int(round(check_positive(extent_um, "extent_um") / check_positive(pitch_um, "pitch_um")))
    rng = np.random.default_rng(seed)
    r_lo, r_hi = radius_um[0] / pitch_um, radius_um[1] / pitch_um
    n_pairs = int(round(touching_fraction * n_blobs / 2))
    centers, radii, pair_ids = [], [], []
    # groups are placed as units: a pair needs room for both discs
    groups = [2] * n_pairs + [1] * (n_blobs - 2 * n_pairs)
    order = rng.permutation(len(groups))
    tries = 0
    for gi in order:
        k = groups[gi]
        while True:
            tries += 1
            if tries > max_tries:
                raise ValueError(f"could not place {n_blobs} blobs in a {extent_um} um field")
            rs = rng.uniform(r_lo, r_hi, size=k)
            c0 = rng.uniform(r_hi + 1, size - r_hi - 1, size=2)
            if k == 2:
                ang = rng.uniform(0, 2 * np.pi)
                sep = rs[0] + rs[1] - rng.uniform(0.3, 0.8)
                c1 = c0 + sep * np.array([np.sin(ang), np.cos(ang)])
                if not (r_hi + 1 <= c1[0] <= size - r_hi - 1 and r_hi + 1 <= c1[1] <= size - r_hi - 1):
                    continue
                cand = [c0, c1]
            else:
                cand = [c0]
            if centers:
                pts = np.asarray(centers)
                rad = np.asarray(radii)
                ok = all(
                    np.all(np.hypot(*(pts - c).T) >= rad + r + gap_px) for c, r in zip(cand, rs)
                )
                if not ok:
                    continue
            for c, r in zip(cand, rs):
                centers.append(c)
                radii.append(r)
                pair_ids.append(gi if k == 2 else -1)
            break
    centers = np.asarray(centers)
    radii = np.asarray(radii)
    phase = np.zeros((size, size))
    reach = int(math.ceil(r_hi)) + 1
    for (cy, cx), r in zip(centers, radii):
        y0, y1 = max(int(cy) - reach, 0), min(int(cy) + reach + 1, size)
        x0, x1 = max(int(cx) - reach, 0), min(int(cx) + reach + 1, size)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        rr2 = ((yy + 0.5 - cy) ** 2 + (xx + 0.5 - cx) ** 2) / r**2
        bump = phase_rad * np.sqrt(np.clip(1.0 - rr2, 0.0, None))
        np.maximum(phase[y0:y1, x0:x1], bump, out=phase[y0:y1, x0:x1])
    if noise_sigma_rad > 0:
        phase = phase + rng.normal(0.0, noise_sigma_rad, phase.shape)
    # RealImage is non-negative, so the map is stored offset to its minimum
    phase = phase - min(phase.min(), 0.0)
    return BlobField(RealImage(phase, pitch_um), centers, radii, np.asarray(pair_ids))
