"""Dataset directories, label images, previews and JSON helpers.

A dataset directory holds ``manifest.json`` and one 16-bit grayscale PNG per
frame. Frames are stored as ``round(I / intensity_scale)`` so the manifest
records ``intensity_scale`` to map counts back to intensity.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import DatasetLoadError
from .fields import Geometry, RealImage, load_cfld, save_cfld
from .forward import Measurement
from .registration import ScanPose, poses_from_json, poses_to_json

__all__ = [
    "MANIFEST_VERSION",
    "DatasetManifest",
    "save_dataset",
    "load_dataset",
    "load_ground_truth",
    "save_poses",
    "load_poses",
    "save_label_png",
    "load_label_png",
    "save_preview",
    "write_json",
    "read_json",
]

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
_U16_MAX = 65535


@dataclass
class DatasetManifest:
    """Contents of ``manifest.json``."""

    wavelength_nm: float
    sensor_pitch_um: float
    d1_um: float
    d2_um: float
    upsample_m: int
    n_frames: int
    frames: list
    frame_indices: list | None = None
    intensity_scale: float = 1.0
    ground_truth: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    format_version: int = MANIFEST_VERSION

    def __post_init__(self):
        if self.n_frames != len(self.frames):
            raise DatasetLoadError(f"n_frames={self.n_frames} but {len(self.frames)} frame files listed")
        if self.frame_indices is None:
            self.frame_indices = list(range(self.n_frames))
        if len(self.frame_indices) != self.n_frames:
            raise DatasetLoadError("frame_indices length does not match n_frames")
        if not self.intensity_scale > 0:
            raise DatasetLoadError("intensity_scale must be > 0")

    @property
    def geometry(self) -> Geometry:
        return Geometry(self.wavelength_nm * 1e-3, self.sensor_pitch_um, self.d1_um, self.d2_um, self.upsample_m)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        version = d.get("format_version", MANIFEST_VERSION)
        if version != MANIFEST_VERSION:
            raise DatasetLoadError(f"unsupported manifest format_version {version}")
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        missing = {"wavelength_nm", "sensor_pitch_um", "d1_um", "d2_um", "upsample_m", "n_frames", "frames"} - set(known)
        if missing:
            raise DatasetLoadError(f"manifest is missing keys {sorted(missing)}")
        return cls(**known)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def _quantize(frames: np.ndarray) -> tuple[np.ndarray, float]:
    peak = float(frames.max())
    scale = peak / _U16_MAX if peak > 0 else 1.0
    counts = np.clip(np.rint(frames / scale), 0, _U16_MAX).astype(np.uint16)
    return counts, scale


def save_dataset(
    path,
    measurements,
    geometry: Geometry,
    *,
    ground_truth: dict | None = None,
    metadata: dict | None = None,
) -> DatasetManifest:
    """Write frames as 16-bit PNGs plus ``manifest.json``.

    ``ground_truth`` may map ``object``/``diffuser`` to :class:`ComplexField`
    and ``poses`` to a pose list; they are stored next to the frames and
    referenced from the manifest.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    measurements = list(measurements)
    if not measurements:
        raise ValueError("no measurements to save")
    stack = np.stack([np.asarray(getattr(m, "data", m), dtype=float) for m in measurements])
    counts, scale = _quantize(stack)
    names = []
    for k, frame in enumerate(counts):
        name = f"frame_{k:05d}.png"
        Image.fromarray(frame).save(path / name)
        names.append(name)
    refs = {}
    for key, value in (ground_truth or {}).items():
        if key in ("object", "diffuser"):
            save_cfld(path / f"true_{key}.cfld", value)
            refs[key] = f"true_{key}.cfld"
        elif key == "poses":
            save_poses(path / "true_poses.json", value)
            refs[key] = "true_poses.json"
        else:
            refs[key] = value
    manifest = DatasetManifest(
        wavelength_nm=geometry.wavelength_um * 1e3,
        sensor_pitch_um=geometry.sensor_pitch_um,
        d1_um=geometry.d1_um,
        d2_um=geometry.d2_um,
        upsample_m=geometry.upsample_m,
        n_frames=len(names),
        frames=names,
        frame_indices=[int(getattr(m, "index", k)) for k, m in enumerate(measurements)],
        intensity_scale=scale,
        ground_truth=refs,
        metadata=metadata or {},
    )
    write_json(path / "manifest.json", manifest.to_dict())
    return manifest


def _read_frame(file: Path) -> np.ndarray:
    if not file.exists():
        raise DatasetLoadError(f"missing frame file {file}")
    try:
        with Image.open(file) as img:
            mode = img.mode
            arr = np.asarray(img)
    except OSError as exc:
        raise DatasetLoadError(f"cannot decode {file}: {exc}") from exc
    if mode in ("I;16", "I;16B", "I;16L") or (mode == "I" and arr.max(initial=0) <= _U16_MAX):
        return arr.astype(np.float64)
    if mode == "L":
        log.warning("%s is 8-bit; accepted with reduced dynamic range", file.name)
        return arr.astype(np.float64)
    raise DatasetLoadError(f"{file.name}: unsupported image mode {mode!r}; need 16-bit (or 8-bit) grayscale")


def _center_crop(arr: np.ndarray, m: int) -> np.ndarray:
    h, w = arr.shape
    nh, nw = h - h % m, w - w % m
    y0, x0 = (h - nh) // 2, (w - nw) // 2
    return arr[y0 : y0 + nh, x0 : x0 + nw]


def load_dataset(path) -> tuple[DatasetManifest, list[Measurement]]:
    """Read a dataset directory back into measurements.

    Frames are cropped about their centre to a multiple of ``upsample_m``
    (with a logged warning) and scaled by ``intensity_scale``.
    """
    path = Path(path)
    mfile = path / "manifest.json"
    if not mfile.exists():
        raise DatasetLoadError(f"{path} has no manifest.json")
    try:
        manifest = DatasetManifest.from_dict(read_json(mfile))
    except (json.JSONDecodeError, TypeError) as exc:
        raise DatasetLoadError(f"malformed manifest: {exc}") from exc
    m = manifest.upsample_m
    shape = None
    out = []
    for idx, name in zip(manifest.frame_indices, manifest.frames):
        arr = _read_frame(path / name)
        if arr.ndim != 2:
            raise DatasetLoadError(f"{name} is not a single-channel image")
        if shape is None:
            shape = arr.shape
            if arr.shape[0] % m or arr.shape[1] % m:
                log.warning("frames of %s are cropped to a multiple of M=%d", arr.shape, m)
        elif arr.shape != shape:
            raise DatasetLoadError(f"{name} has shape {arr.shape}, expected {shape}")
        out.append(Measurement(int(idx), RealImage(_center_crop(arr, m) * manifest.intensity_scale, manifest.sensor_pitch_um)))
    return manifest, out


def load_ground_truth(path, manifest: DatasetManifest) -> dict:
    """Load whatever ground truth the manifest references."""
    path = Path(path)
    gt = {}
    refs = manifest.ground_truth
    for key in ("object", "diffuser"):
        if key in refs:
            gt[key] = load_cfld(path / refs[key])
    if "poses" in refs:
        gt["poses"] = load_poses(path / refs["poses"])
    for key, value in refs.items():
        gt.setdefault(key, value)
    return gt


def save_poses(path, poses) -> None:
    """Write poses as a JSON array of ``{frame, x_px, y_px, confidence}`` in high-res px."""
    write_json(path, poses_to_json(poses))


def load_poses(path) -> list[ScanPose]:
    doc = read_json(path)
    items = doc["poses"] if isinstance(doc, dict) else doc
    return poses_from_json(items)


def save_label_png(path, labels) -> None:
    """16-bit label image; ids above 65535 are rejected."""
    arr = np.asarray(getattr(labels, "labels", labels))
    if arr.max(initial=0) > _U16_MAX:
        raise ValueError("more than 65535 labels do not fit a 16-bit PNG")
    Image.fromarray(arr.astype(np.uint16)).save(path)


def load_label_png(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img).astype(np.int32)


def save_preview(path, f, kind: str = "phase") -> dict:
    """Render an amplitude or phase preview PNG and return its scale.

    Phase uses the cyclic ``twilight`` colormap over (-pi, pi]; amplitude is
    min-max normalised to 8-bit gray.
    """
    from matplotlib import colormaps

    data = np.asarray(getattr(f, "data", f))
    if kind == "phase":
        ph = np.angle(data) if np.iscomplexobj(data) else np.asarray(data, dtype=float)
        norm = (np.mod(ph + np.pi, 2 * np.pi)) / (2 * np.pi)
        rgb = (colormaps["twilight"](norm)[..., :3] * 255).round().astype(np.uint8)
        Image.fromarray(rgb).save(path)
        return {"kind": "phase", "min": -np.pi, "max": np.pi, "colormap": "twilight"}
    if kind == "amplitude":
        amp = np.abs(data).astype(float)
        lo, hi = float(amp.min()), float(amp.max())
        scaled = (amp - lo) / (hi - lo) if hi > lo else np.zeros_like(amp)
        Image.fromarray((scaled * 255).round().astype(np.uint8)).save(path)
        return {"kind": "amplitude", "min": lo, "max": hi}
    raise ValueError(f"preview kind must be 'phase' or 'amplitude', got {kind!r}")
