"""Command-line pipeline: simulate, register, reconstruct, refocus, segment, report.

Every command reads an optional JSON config (``--config``), applies
``--set key=value`` overrides (values parsed as JSON when possible) and
writes its outputs to ``--out``. Failures print one JSON object to stderr
and exit with status 1 (2 for usage errors).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .fields import Geometry, RealImage, load_cfld, save_cfld
from .io import (
    load_dataset,
    load_ground_truth,
    load_poses,
    read_json,
    save_dataset,
    save_label_png,
    save_poses,
    save_preview,
    write_json,
)
from .metrics import count_error, phase_rmse, pose_error
from .recovery import RecoveryParams, run_reconstruction
from .refocus import autofocus
from .registration import estimate_trajectory
from .segmentation import SegmentationParams, count_and_report, segment_phase
from .simulate import DiffuserSpec, NoiseSpec, ObjectSpec, generate_trajectory, make_diffuser, make_test_object, simulate_dataset

log = logging.getLogger("diffuserptycho")

DEFAULTS = {
    # geometry
    "wavelength_um": 0.532,
    "sensor_pitch_um": 1.67,
    "d1_um": 300.0,
    "d2_um": 700.0,
    "upsample_m": 3,
    # simulate
    "grid": 216,
    "n_frames": 100,
    "step_um": 2.0,
    "trajectory": "raster",
    "trajectory_seed": 0,
    "max_excursion_um": 15.0,
    "object": {"kind": "phase_disks", "n_disks": 16, "disk_radius_um": 5.0, "disk_phase_rad": 1.0},
    "diffuser": {"max_phase_rad": 1.0, "rng_seed": 1},
    "noise": {"model": "none"},
    # register
    "subpx_factor": 20,
    "min_confidence": 0.2,
    # reconstruct
    "n_iterations": 3,
    "alpha_obj": 0.1,
    "alpha_pt": 0.2,
    "frame_order": "acquisition",
    "shuffle_seed": 0,
    "update_diffuser": True,
    # refocus
    "z_min_um": -100.0,
    "z_max_um": 100.0,
    "n_steps": 41,
    "metric_kind": "normalized_variance",
    "n_planes_out": 3,
    # segment
    "threshold": "otsu",
    "min_seed_separation_px": 3.0,
    "smoothing_sigma_px": 1.0,
    "min_prominence": 0.05,
    "oversize_factor": 2.0,
    "max_refine_rounds": 3,
    "contrast_gain": 4.0,
}


class CLIError(Exception):
    """Bad arguments or inputs detected by the CLI itself."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError(message)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_config(config_path, overrides) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))
    if config_path:
        user = read_json(config_path)
        if not isinstance(user, dict):
            raise CLIError("config file must hold a JSON object")
        cfg.update(user)
    for item in overrides or []:
        if "=" not in item:
            raise CLIError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        parts = key.split(".")
        target = cfg
        for p in parts[:-1]:
            target = target.setdefault(p, {})
        target[parts[-1]] = _parse_value(value)
    unknown = set(cfg) - set(DEFAULTS)
    if unknown:
        raise CLIError(f"unknown config keys {sorted(unknown)}")
    return cfg


def _geometry(cfg) -> Geometry:
    return Geometry(cfg["wavelength_um"], cfg["sensor_pitch_um"], cfg["d1_um"], cfg["d2_um"], cfg["upsample_m"])


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _recovery_params(cfg) -> RecoveryParams:
    return RecoveryParams(
        n_iterations=cfg["n_iterations"],
        alpha_obj=cfg["alpha_obj"],
        alpha_pt=cfg["alpha_pt"],
        frame_order=cfg["frame_order"],
        shuffle_seed=cfg["shuffle_seed"],
        update_diffuser=cfg["update_diffuser"],
    )


def cmd_simulate(args, cfg) -> dict:
    g = _geometry(cfg)
    n = int(cfg["grid"])
    pitch = g.recon_pitch_um
    obj = make_test_object(ObjectSpec(**cfg["object"]), n, n, pitch, g.wavelength_um)
    dif = make_diffuser(DiffuserSpec(**cfg["diffuser"]), n, n, pitch, g.wavelength_um)
    poses = generate_trajectory(
        cfg["n_frames"],
        cfg["step_um"],
        cfg["trajectory"],
        seed=cfg["trajectory_seed"],
        pitch_um=pitch,
        max_excursion_um=cfg["max_excursion_um"],
    )
    frames = simulate_dataset(obj, dif, g, poses, NoiseSpec(**cfg["noise"]))
    out = _out_dir(args)
    manifest = save_dataset(
        out,
        frames,
        g,
        ground_truth={"object": obj, "diffuser": dif, "poses": poses},
        metadata={"config": cfg, "generator": f"diffuserptycho {__version__}"},
    )
    return {"dataset": str(out), "n_frames": manifest.n_frames, "frame_shape": list(frames[0].data.shape)}


def _register(measurements, cfg):
    return estimate_trajectory(
        measurements,
        upsample_m=cfg["upsample_m"],
        subpx_factor=cfg["subpx_factor"],
        min_confidence=cfg["min_confidence"],
        on_low_confidence="drop",
    )


def cmd_register(args, cfg) -> dict:
    manifest, frames = load_dataset(args.dataset)
    poses = _register(frames, cfg)
    out = _out_dir(args)
    save_poses(out / "poses.json", poses)
    return {"poses": str(out / "poses.json"), "n_poses": len(poses), "n_dropped": len(frames) - len(poses)}


def cmd_reconstruct(args, cfg) -> dict:
    manifest, frames = load_dataset(args.dataset)
    cfg.update({k: getattr(manifest, k) for k in ("sensor_pitch_um", "d1_um", "d2_um", "upsample_m")})
    cfg["wavelength_um"] = manifest.wavelength_nm * 1e-3
    g = _geometry(cfg)
    out = _out_dir(args)
    if args.poses:
        poses = load_poses(args.poses)
    else:
        poses = _register(frames, cfg)
        save_poses(out / "poses.json", poses)
    keep = {p.frame_index for p in poses}
    frames = [f for f in frames if f.index in keep]
    t0 = time.perf_counter()
    obj, dif, state = run_reconstruction(frames, poses, g, _recovery_params(cfg))
    elapsed = time.perf_counter() - t0
    save_cfld(out / "object.cfld", obj)
    save_cfld(out / "diffuser.cfld", dif)
    write_json(out / "error_history.json", {"data_error": state.error_history})
    previews = {
        "object_phase.png": save_preview(out / "object_phase.png", obj, "phase"),
        "object_amplitude.png": save_preview(out / "object_amplitude.png", obj, "amplitude"),
        "diffuser_phase.png": save_preview(out / "diffuser_phase.png", dif, "phase"),
        "diffuser_amplitude.png": save_preview(out / "diffuser_amplitude.png", dif, "amplitude"),
    }
    write_json(out / "previews.json", previews)
    return {
        "object": str(out / "object.cfld"),
        "diffuser": str(out / "diffuser.cfld"),
        "data_error": state.error_history,
        "runtime_s": round(elapsed, 3),
        "registered": not args.poses,
    }


def cmd_refocus(args, cfg) -> dict:
    field = load_cfld(args.object)
    scan = autofocus(field, cfg["z_min_um"], cfg["z_max_um"], cfg["n_steps"], cfg["metric_kind"], keep_planes=True)
    out = _out_dir(args)
    write_json(out / "focus_scan.json", scan.to_dict())
    planes = [scan.best_z_um] + [z for z in scan.local_maxima() if z != scan.best_z_um]
    written = []
    for z in planes[: int(cfg["n_planes_out"])]:
        stem = f"plane_z{z:+.1f}um"
        save_preview(out / f"{stem}_amplitude.png", scan.planes[z], "amplitude")
        save_preview(out / f"{stem}_phase.png", scan.planes[z], "phase")
        written.append(stem)
    return {"best_z_um": scan.best_z_um, "local_maxima_um": scan.local_maxima(), "planes": written}


def _phase_input(path) -> RealImage:
    path = Path(path)
    if path.suffix.lower() == ".cfld":
        f = load_cfld(path)
        ph = np.angle(f.data)
        return RealImage(ph - ph.min(), f.pitch_um)
    if path.suffix.lower() == ".npy":
        arr = np.load(path)
        return RealImage(arr - arr.min(), 1.0)
    raise CLIError(f"segment input must be .cfld or .npy, got {path.name}")


def _seg_params(cfg) -> SegmentationParams:
    method = cfg["threshold"]
    return SegmentationParams(
        threshold_method="otsu" if method == "otsu" else ("fixed", float(method)),
        min_seed_separation_px=cfg["min_seed_separation_px"],
        smoothing_sigma_px=cfg["smoothing_sigma_px"],
        min_prominence=cfg["min_prominence"],
        oversize_factor=cfg["oversize_factor"],
        max_refine_rounds=cfg["max_refine_rounds"],
        contrast_gain=cfg["contrast_gain"],
    )


def cmd_segment(args, cfg) -> dict:
    phase = _phase_input(args.phase)
    labels = segment_phase(phase, _seg_params(cfg))
    out = _out_dir(args)
    save_label_png(out / "labels.png", labels)
    stats = count_and_report(labels)
    write_json(out / "segmentation.json", stats)
    return {"n_cells": stats["n_cells"], "labels": str(out / "labels.png")}


def cmd_report(args, cfg) -> dict:
    report = {}
    gt = {}
    if args.dataset:
        manifest, _ = load_dataset(args.dataset)
        gt = load_ground_truth(args.dataset, manifest)
    run = Path(args.run) if args.run else None
    if run is not None and (run / "object.cfld").exists() and "object" in gt:
        rec = load_cfld(run / "object.cfld")
        report["phase_rmse_rad"] = phase_rmse(rec, gt["object"])
    if run is not None and (run / "error_history.json").exists():
        report["data_error"] = read_json(run / "error_history.json")["data_error"]
    if run is not None and (run / "poses.json").exists() and "poses" in gt:
        est = load_poses(run / "poses.json")
        by_index = {p.frame_index: p for p in gt["poses"]}
        report["pose_error_px"] = pose_error(est, [by_index[p.frame_index] for p in est])
    if args.segmentation:
        stats = read_json(args.segmentation)
        report["n_cells"] = stats["n_cells"]
        if args.true_count:
            report["cell_count_error"] = count_error(stats["n_cells"], args.true_count)
    out = _out_dir(args)
    write_json(out / "report.json", report)
    _report_figures(out, run, report)
    return report


def _report_figures(out: Path, run, report) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if "data_error" in report:
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.plot(np.arange(1, len(report["data_error"]) + 1), report["data_error"], "o-")
        ax.set_xlabel("iteration")
        ax.set_ylabel("data error")
        fig.tight_layout()
        fig.savefig(out / "data_error.png", dpi=100)
        plt.close(fig)
    if run is not None and (run / "object.cfld").exists():
        rec = load_cfld(run / "object.cfld")
        fig, axes = plt.subplots(1, 2, figsize=(8, 4))
        axes[0].imshow(np.abs(rec.data), cmap="gray")
        axes[0].set_title("amplitude")
        im = axes[1].imshow(np.angle(rec.data), cmap="twilight", vmin=-np.pi, vmax=np.pi)
        axes[1].set_title("phase (rad)")
        fig.colorbar(im, ax=axes[1], fraction=0.046)
        for ax in axes:
            ax.set_axis_off()
        fig.tight_layout()
        fig.savefig(out / "object.png", dpi=100)
        plt.close(fig)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="diffuserptycho", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    common(sub.add_parser("simulate", help="write a synthetic dataset"))
    p = common(sub.add_parser("register", help="recover diffuser poses by cross-correlation"))
    p.add_argument("dataset")
    p = common(sub.add_parser("reconstruct", help="blind joint object/diffuser recovery"))
    p.add_argument("dataset")
    p.add_argument("--poses", help="poses JSON; registration runs when omitted")
    p.add_argument("--iterations", type=int, help="shortcut for --set n_iterations=N")
    p = common(sub.add_parser("refocus", help="autofocus scan of a recovered object"))
    p.add_argument("object", help="object CFLD")
    p = common(sub.add_parser("segment", help="segment cells in a phase map"))
    p.add_argument("phase", help="object CFLD or phase .npy")
    p = common(sub.add_parser("report", help="aggregate metrics against ground truth"))
    p.add_argument("--dataset", help="dataset directory with ground truth")
    p.add_argument("--run", help="reconstruction output directory")
    p.add_argument("--segmentation", help="segmentation.json")
    p.add_argument("--true-count", type=int, help="ground-truth cell count")
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "register": cmd_register,
    "reconstruct": cmd_reconstruct,
    "refocus": cmd_refocus,
    "segment": cmd_segment,
    "report": cmd_report,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except CLIError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args.config, args.set)
        if getattr(args, "iterations", None) is not None:
            cfg["n_iterations"] = args.iterations
        result = COMMANDS[args.command](args, cfg)
    except Exception as exc:  # every failure becomes machine-readable
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}), file=sys.stderr)
        return 2 if isinstance(exc, CLIError) else 1
    print(json.dumps(result, default=float))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
