"""Joint object / diffuser phase retrieval with up-sampled magnitude projection.

The engine sweeps over frames, projects each modelled sensor field onto its
measured low-resolution intensity (every M x M block of the high-resolution
intensity must sum to the measured pixel) and applies regularised PIE
updates to the object (taken at the diffuser plane) and to the diffuser.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import DegenerateInputError, DimensionError, NumericalFailure
from .fields import ComplexField, Geometry, bin_intensity, subpixel_shift, upsample_nn
from .forward import ForwardModel, Measurement
from .registration import estimate_trajectory
from .validation import check_fraction, check_int

log = logging.getLogger(__name__)

__all__ = [
    "RecoveryParams",
    "RecoveryState",
    "initialize",
    "magnitude_project_upsampled",
    "rpie_update_object",
    "rpie_update_diffuser",
    "run_reconstruction",
    "data_error",
    "BlindPtychoReconstructor",
]


@dataclass(frozen=True)
class RecoveryParams:
    n_iterations: int = 3
    alpha_obj: float = 0.1
    alpha_pt: float = 0.2
    denom_epsilon: float = 1e-12
    frame_order: str = "acquisition"
    shuffle_seed: int = 0
    update_diffuser: bool = True
    band_limit: bool = False
    max_shift_px: float = 50.0

    def __post_init__(self):
        check_int(self.n_iterations, "n_iterations")
        check_fraction(self.alpha_obj, "alpha_obj")
        check_fraction(self.alpha_pt, "alpha_pt")
        if self.denom_epsilon < 0:
            raise ValueError("denom_epsilon must be >= 0")
        if self.frame_order not in ("acquisition", "shuffled"):
            raise ValueError(f"unknown frame_order {self.frame_order!r}")


@dataclass
class RecoveryState:
    """Current estimates: the object propagated to the diffuser plane and the diffuser."""

    object_at_diffuser: ComplexField
    diffuser: ComplexField
    error_history: list[float] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.object_at_diffuser.shape != self.diffuser.shape:
            raise DimensionError("object and diffuser grids differ")


def _frames(measurements) -> tuple[list[int], np.ndarray]:
    measurements = list(measurements)
    if not measurements:
        raise ValueError("measurement list is empty")
    indices, arrs = [], []
    for j, m in enumerate(measurements):
        if isinstance(m, Measurement):
            indices.append(m.index)
            arrs.append(np.asarray(m.image.data, dtype=float))
        else:
            indices.append(j)
            arrs.append(np.asarray(getattr(m, "data", m), dtype=float))
    shape = arrs[0].shape
    for a in arrs:
        if a.shape != shape:
            raise DimensionError(f"frames differ in shape: {shape} vs {a.shape}")
    return indices, np.stack(arrs)


def initialize(measurements, g: Geometry, *, diffuser=None) -> RecoveryState:
    """Starting point: flat-phase object from the mean frame, all-one diffuser.

    The object amplitude is ``sqrt(mean_j I_j / M**2)`` up-sampled by
    nearest neighbour, so that binning its intensity reproduces the mean
    frame. ``diffuser`` optionally replaces the all-one start (e.g. a
    diffuser recovered in an earlier run).
    """
    _, stack = _frames(measurements)
    m = g.upsample_m
    mean = stack.mean(axis=0)
    amp = upsample_nn(np.sqrt(mean / m**2), m)
    pitch, wl = g.recon_pitch_um, g.wavelength_um
    obj = ComplexField(amp.astype(np.complex128), pitch, wl)
    model = ForwardModel(amp.shape, g)
    o_d = ComplexField(model.object_at_diffuser(obj), pitch, wl)
    if diffuser is None:
        d = ComplexField.ones(amp.shape, pitch, wl)
    else:
        d = ComplexField(getattr(diffuser, "data", diffuser), pitch, wl)
        if d.shape != amp.shape:
            raise DimensionError(f"diffuser {d.shape} does not match grid {amp.shape}")
    return RecoveryState(o_d, d)


def _project(psi: np.ndarray, measured: np.ndarray, m: int, eps: float):
    model = bin_intensity(np.abs(psi) ** 2, m)
    # clamp rather than add: blocks above the floor meet their sum exactly
    floor = eps * model.max() + 1e-300
    ratio = np.sqrt(measured) / np.sqrt(np.maximum(model, floor))
    dead = (model == 0) & (measured > 0)
    return psi * upsample_nn(ratio, m), dead


def magnitude_project_upsampled(psi, measured, m: int, eps: float = 1e-12, *, return_dead: bool = False):
    """Rescale ``psi`` so every ``m x m`` block of ``|psi|**2`` sums to ``measured``.

    ``psi' = psi * sqrt(up(I)) / sqrt(max(up(bin(|psi|**2)), eps * max))``. Blocks
    where ``psi`` is identically zero but ``I > 0`` stay zero; with
    ``return_dead=True`` their mask (sensor resolution) is returned too.
    """
    psi = np.asarray(getattr(psi, "data", psi))
    measured = np.asarray(getattr(measured, "data", measured), dtype=float)
    m = check_int(m, "m")
    if psi.shape != (measured.shape[0] * m, measured.shape[1] * m):
        raise DimensionError(f"psi {psi.shape} is not {m}x the frame shape {measured.shape}")
    out, dead = _project(psi, measured, m, eps)
    return (out, dead) if return_dead else out


def _rpie_step(target, probe, residual, alpha):
    """``target + conj(probe) * residual / ((1-a)|probe|^2 + a max|probe|^2)``."""
    weight = np.abs(probe) ** 2
    denom = (1.0 - alpha) * weight + alpha * weight.max()
    if weight.max() == 0:
        raise DegenerateInputError("update weight field is identically zero")
    if alpha == 0 and np.any(denom == 0):
        raise DegenerateInputError("alpha=0 with zeros in the weighting field")
    return target + np.conj(probe) * residual / denom


def rpie_update_object(o_d, d_j, phi, phi_prime, alpha_obj: float):
    """Regularised PIE object update weighted by the shifted diffuser ``d_j``."""
    arrs = [np.asarray(getattr(a, "data", a)) for a in (o_d, d_j, phi, phi_prime)]
    return _rpie_step(arrs[0], arrs[1], arrs[3] - arrs[2], alpha_obj)


def rpie_update_diffuser(d_j, o_d, phi, phi_prime, alpha_pt: float):
    """Mirror of :func:`rpie_update_object` with the object as weighting field."""
    arrs = [np.asarray(getattr(a, "data", a)) for a in (d_j, o_d, phi, phi_prime)]
    return _rpie_step(arrs[0], arrs[1], arrs[3] - arrs[2], alpha_pt)


def _align(indices, poses, max_shift_px):
    poses = list(poses)
    by_index = {p.frame_index: p for p in poses}
    if len(by_index) != len(poses) or set(by_index) != set(indices):
        raise ValueError(
            f"poses cover frames {sorted(by_index)[:5]}... but measurements are "
            f"{sorted(indices)[:5]}...; every frame needs exactly one pose"
        )
    for p in poses:
        if max(abs(p.x_px), abs(p.y_px)) > max_shift_px:
            raise ValueError(f"pose of frame {p.frame_index} exceeds max_shift_px={max_shift_px}")
    return [by_index[i] for i in indices]


def data_error(state: RecoveryState, measurements, poses, g: Geometry, *, model: ForwardModel | None = None) -> float:
    """Normalised L1 misfit ``sum_j |bin(|psi_j|^2) - I_j|_1 / sum_j |I_j|_1``."""
    indices, stack = _frames(measurements)
    ordered = _align(indices, poses, np.inf)
    model = model or ForwardModel(state.diffuser.shape, g)
    o_d, d = state.object_at_diffuser.data, state.diffuser.data
    num = sum(np.abs(model.frame(o_d, d, p) - I).sum() for p, I in zip(ordered, stack))
    den = np.abs(stack).sum()
    return float(num / den) if den > 0 else 0.0


def run_reconstruction(
    measurements,
    poses,
    g: Geometry,
    params: RecoveryParams | None = None,
    *,
    state: RecoveryState | None = None,
    callback=None,
):
    """Run the blind reconstruction loop for ``params.n_iterations`` sweeps.

    Returns ``(object, diffuser, state)``; ``object`` is the exit wave
    back-propagated from the diffuser plane. ``state.error_history`` gets
    one :func:`data_error` value per sweep. ``callback(n, state)`` is
    called after each sweep.

    Raises
    ------
    ValueError
        If poses and measurements do not correspond one to one.
    NumericalFailure
        If a NaN/Inf shows up; the message names the sweep and frame.
    """
    params = params or RecoveryParams()
    indices, stack = _frames(measurements)
    ordered = _align(indices, poses, params.max_shift_px)
    state = state or initialize(measurements, g)
    model = ForwardModel(state.diffuser.shape, g, band_limit=params.band_limit)
    if model.sensor_shape != stack.shape[1:]:
        raise DimensionError(f"grid {state.diffuser.shape} does not match frames {stack.shape[1:]}")
    m = g.upsample_m

    o_d = np.array(state.object_at_diffuser.data)
    d = np.array(state.diffuser.data)
    dead_total = 0
    order = np.arange(len(stack))
    rng = np.random.default_rng(params.shuffle_seed)
    for n in range(params.n_iterations):
        if params.frame_order == "shuffled":
            order = rng.permutation(len(stack))
        for j in order:
            pose = ordered[j]
            d_j = subpixel_shift(d, -pose.x_px, -pose.y_px)
            phi = o_d * d_j
            psi = model.to_sensor.apply(phi)
            psi_new, dead = _project(psi, stack[j], m, params.denom_epsilon)
            dead_total += int(dead.sum())
            phi_new = model.from_sensor.apply(psi_new)
            residual = phi_new - phi
            o_next = _rpie_step(o_d, d_j, residual, params.alpha_obj)
            if params.update_diffuser:
                d_next = _rpie_step(d_j, o_d, residual, params.alpha_pt)
                d = subpixel_shift(d_next, pose.x_px, pose.y_px)
            o_d = o_next
            if not (np.isfinite(o_d.sum()) and np.isfinite(d.sum())):
                raise NumericalFailure(f"non-finite estimate at sweep {n + 1}, frame {indices[j]}")
        state = RecoveryState(
            model.as_field(o_d), model.as_field(d), state.error_history, state.diagnostics
        )
        err = data_error(state, measurements, ordered, g, model=model)
        state.error_history.append(err)
        log.info("sweep %d/%d: data error %.4g", n + 1, params.n_iterations, err)
        if callback is not None:
            callback(n, state)
    state.diagnostics["dead_blocks"] = dead_total
    obj = model.as_field(model.object_from_diffuser(o_d))
    return obj, state.diffuser, state


class BlindPtychoReconstructor(BaseEstimator):
    """Recover object exit wave, diffuser and trajectory from raw frames.

    ``fit(frames)`` registers the frames when no poses are given and then
    runs :func:`run_reconstruction`. Fitted attributes: ``object_``,
    ``diffuser_``, ``poses_``, ``error_history_``, ``state_``.

    ``predict(poses)`` synthesises frames from the fitted model and
    ``score(frames, poses)`` returns the negative data error.
    """

    def __init__(
        self,
        wavelength_um=0.532,
        sensor_pitch_um=1.67,
        d1_um=300.0,
        d2_um=700.0,
        upsample_m=3,
        n_iterations=3,
        alpha_obj=0.1,
        alpha_pt=0.2,
        denom_epsilon=1e-12,
        frame_order="acquisition",
        shuffle_seed=0,
        update_diffuser=True,
        band_limit=False,
        max_shift_px=50.0,
        subpx_factor=20,
        min_confidence=0.2,
        initial_diffuser=None,
    ):
        self.wavelength_um = wavelength_um
        self.sensor_pitch_um = sensor_pitch_um
        self.d1_um = d1_um
        self.d2_um = d2_um
        self.upsample_m = upsample_m
        self.n_iterations = n_iterations
        self.alpha_obj = alpha_obj
        self.alpha_pt = alpha_pt
        self.denom_epsilon = denom_epsilon
        self.frame_order = frame_order
        self.shuffle_seed = shuffle_seed
        self.update_diffuser = update_diffuser
        self.band_limit = band_limit
        self.max_shift_px = max_shift_px
        self.subpx_factor = subpx_factor
        self.min_confidence = min_confidence
        self.initial_diffuser = initial_diffuser

    @property
    def geometry(self) -> Geometry:
        return Geometry(self.wavelength_um, self.sensor_pitch_um, self.d1_um, self.d2_um, self.upsample_m)

    def _params(self) -> RecoveryParams:
        return RecoveryParams(
            n_iterations=self.n_iterations,
            alpha_obj=self.alpha_obj,
            alpha_pt=self.alpha_pt,
            denom_epsilon=self.denom_epsilon,
            frame_order=self.frame_order,
            shuffle_seed=self.shuffle_seed,
            update_diffuser=self.update_diffuser,
            band_limit=self.band_limit,
            max_shift_px=self.max_shift_px,
        )

    def fit(self, X, poses=None):
        g = self.geometry
        frames = list(X)
        if poses is None:
            poses = estimate_trajectory(
                frames,
                upsample_m=g.upsample_m,
                subpx_factor=self.subpx_factor,
                min_confidence=self.min_confidence,
                max_shift_px=self.max_shift_px,
                on_low_confidence="drop",
            )
        poses = list(poses)
        kept = {p.frame_index for p in poses}
        indices, _ = _frames(frames)
        frames = [fr for fr, i in zip(frames, indices) if i in kept]
        state = initialize(frames, g, diffuser=self.initial_diffuser)
        obj, diffuser, state = run_reconstruction(frames, poses, g, self._params(), state=state)
        self.object_ = obj
        self.diffuser_ = diffuser
        self.poses_ = poses
        self.state_ = state
        self.error_history_ = list(state.error_history)
        return self

    def _check_fitted(self):
        if not hasattr(self, "state_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("BlindPtychoReconstructor is not fitted yet")

    def predict(self, poses=None) -> np.ndarray:
        self._check_fitted()
        poses = self.poses_ if poses is None else list(poses)
        model = ForwardModel(self.state_.diffuser.shape, self.geometry, band_limit=self.band_limit)
        o_d, d = self.state_.object_at_diffuser.data, self.state_.diffuser.data
        return np.stack([model.frame(o_d, d, p) for p in poses])

    def score(self, X, poses=None) -> float:
        self._check_fitted()
        poses = self.poses_ if poses is None else list(poses)
        return -data_error(self.state_, X, poses, self.geometry)
