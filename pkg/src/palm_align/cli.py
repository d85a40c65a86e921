"""Command-line entry point: ``palm-align <subcommand> ...``.

Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.
Progress and timings go to standard error; results go to standard output
or to files under ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .align import AlignmentConfig
from .augment import AugmentConfig
from .dataset import ManifestError, fmt, jitter_calibration, load_manifest, minimal_manifest_path, preprocess_dataset
from .geometry import CameraCalib, CameraIntrinsics, GeometryError, Pose, look_at, project_point, unproject_to_plane
from .plotting import write_report

log = logging.getLogger("palm_align")

EXPERIMENTS = ("invariance", "retrieval", "crop-size", "calibration", "motion-encoding")


class UsageError(Exception):
    pass


def _floats(text, n, name):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{name}: expected {n} comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise UsageError(f"{name}: expected {n} comma-separated numbers, got {len(vals)}")
    return np.array(vals)


def _common(p, out_default=None):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--workers", type=int, help="process count (default: available cores)")
    p.add_argument("--out", default=None, help=f"output directory{f' (default {out_default})' if out_default else ''}")
    p.add_argument("--kappa", type=int, help="crop side in pixels")
    p.add_argument("--output-size", type=int, help="aligned image side in pixels")
    p.add_argument("--overlay", dest="overlay", action="store_true", default=None, help="draw the axis overlay")
    p.add_argument("--no-overlay", dest="overlay", action="store_false", help="skip the axis overlay")
    p.add_argument("--pixel-jitter", type=float, help="uniform crop-center jitter, pixels per axis")
    p.add_argument("--proprio-noise", type=float, help="Gaussian proprio noise std")
    p.add_argument("-q", "--quiet", action="store_true", help="suppress progress output")


def build_parser():
    ap = argparse.ArgumentParser(prog="palm-align", description="Perception alignment toolkit and invariance harness.")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("preprocess", help="align every frame of a dataset")
    p.add_argument("dataset", help="dataset directory or manifest.json")
    _common(p, "aligned_out")
    p.add_argument("--augment", dest="augment", action="store_true", default=None, help="enable augmentations")
    p.add_argument("--no-augment", dest="augment", action="store_false")
    p.add_argument("--overlay-pool", help="directory of distractor PNGs for Random Overlay")

    p = sub.add_parser("project", help="project a world point or unproject a pixel onto a plane")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--point", help="world point x,y,z")
    g.add_argument("--pixel", help="pixel u,v (requires --z-plane)")
    p.add_argument("--z-plane", type=float, help="plane height for --pixel")
    p.add_argument("--fx", type=float, default=512.0)
    p.add_argument("--fy", type=float, default=None, help="defaults to --fx")
    p.add_argument("--cx", type=float, default=256.0)
    p.add_argument("--cy", type=float, default=256.0)
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--cam-pos", default="0,0,0", help="camera position in world x,y,z")
    p.add_argument("--cam-rot", default=None, help="camera-in-world rotation, 9 numbers row-major")
    p.add_argument("--look-at", default=None, help="aim the camera at x,y,z (z-up world)")
    p.add_argument("--manifest", default=None, help="take the calibration from this dataset")
    p.add_argument("--camera", default=None, help="camera id within --manifest")

    p = sub.add_parser("simulate", help="run a harness experiment")
    p.add_argument("experiment", choices=EXPERIMENTS)
    _common(p, "sim_out/<experiment>")
    p.add_argument("--n-scenes", type=int, default=100)
    p.add_argument("--n-demos", type=int, default=200)
    p.add_argument("--n-eval", type=int, default=100)
    p.add_argument("--sizes", default="80,120,160,200,240", help="crop sizes for crop-size")
    p.add_argument("--no-figure", action="store_true", help="skip the PNG figure")

    p = sub.add_parser("export", help="render a synthetic demonstration dataset")
    _common(p, "synthetic_ds")
    p.add_argument("--n-episodes", type=int, default=4)

    p = sub.add_parser("validate", help="check a manifest and its referenced images")
    p.add_argument("dataset", nargs="?", default=None, help="dataset directory or manifest.json (default: bundled minimal)")
    return ap


def _load_config(path):
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read config {path}: {e}") from None
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    unknown = set(doc) - {"alignment", "augment", "harness", "perturbation", "seed", "workers", "out"}
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    return doc


def _pick(flag, doc, key, default):
    if flag is not None:
        return flag
    return doc.get(key, default)


def _alignment(args, doc, base=None):
    cfg = base or AlignmentConfig.from_dict(doc.get("alignment", {}))
    over = {}
    if args.kappa is not None:
        over["kappa"] = args.kappa
    if args.output_size is not None:
        over["output_size"] = args.output_size
    if args.overlay is not None:
        over["overlay_enabled"] = args.overlay
    return replace(cfg, **over) if over else cfg


def _settings(args, doc):
    seed = int(_pick(args.seed, doc, "seed", 0))
    workers = int(_pick(args.workers, doc, "workers", os.cpu_count() or 1))
    if workers < 1:
        raise UsageError("--workers must be >= 1")
    pert = doc.get("perturbation", {})
    jitter = _pick(args.pixel_jitter, pert, "pixel_jitter", None)
    noise = _pick(args.proprio_noise, pert, "proprio_noise", None)
    return seed, workers, jitter, noise


def cmd_preprocess(args):
    doc = _load_config(args.config)
    seed, workers, jitter, noise = _settings(args, doc)
    cfg = replace(_alignment(args, doc), seed=seed)
    aug = AugmentConfig.from_dict(doc.get("augment", {}))
    if args.augment is not None:
        aug = replace(aug, enabled=args.augment)
    if args.overlay_pool is not None:
        aug = replace(aug, overlay_pool=args.overlay_pool)
    out = Path(_pick(args.out, doc, "out", "aligned_out"))
    ds = load_manifest(args.dataset)
    ds = jitter_calibration(ds, jitter or 0.0, noise or 0.0, seed)
    log.info("preprocessing %d frames from %d trajectories with %d workers", ds.n_frames, len(ds.trajectories), workers)
    rep = preprocess_dataset(ds, cfg, out, aug, workers)
    for k, v in rep.timings.items():
        log.info("time %s: %.3f s", k, v)
    print(json.dumps({"out": str(out), "frames_written": rep.frames_written,
                      "frames_skipped": rep.frames_skipped, "clamped": rep.clamped}))
    return 0


def _project_calib(args):
    if args.manifest:
        ds = load_manifest(args.manifest)
        if args.camera is None:
            if len(ds.cameras) != 1:
                raise UsageError("--camera is required when the manifest has several cameras")
            return next(iter(ds.cameras.values()))
        if args.camera not in ds.cameras:
            raise UsageError(f"camera {args.camera!r} not in manifest")
        return ds.cameras[args.camera]
    fy = args.fy if args.fy is not None else args.fx
    intr = CameraIntrinsics(args.fx, fy, args.cx, args.cy)
    pos = _floats(args.cam_pos, 3, "--cam-pos")
    if args.look_at and args.cam_rot:
        raise UsageError("--look-at and --cam-rot are exclusive")
    if args.look_at:
        pose = look_at(pos, _floats(args.look_at, 3, "--look-at"))
    elif args.cam_rot:
        pose = Pose(_floats(args.cam_rot, 9, "--cam-rot").reshape(3, 3), pos)
    else:
        pose = Pose(np.eye(3), pos)
    return CameraCalib(intr, pose, args.width, args.height)


def cmd_project(args):
    calib = _project_calib(args)
    if args.point is not None:
        uv = project_point(calib, _floats(args.point, 3, "--point"))
        print(",".join(fmt(v) for v in uv))
    else:
        if args.z_plane is None:
            raise UsageError("--pixel requires --z-plane")
        p = unproject_to_plane(calib, _floats(args.pixel, 2, "--pixel"), args.z_plane)
        print(",".join(fmt(v) for v in p))
    return 0


def _harness_config(args, doc, workers):
    h = harness.HarnessConfig.from_dict(doc.get("harness", {}))
    if "alignment" in doc:
        h = replace(h, alignment=AlignmentConfig.from_dict(doc["alignment"]))
    return replace(h, alignment=_alignment(args, doc, h.alignment), workers=workers)


def cmd_simulate(args):
    doc = _load_config(args.config)
    seed, workers, jitter, noise = _settings(args, doc)
    h = _harness_config(args, doc, workers)
    name = args.experiment
    out = Path(_pick(args.out, doc, "out", f"sim_out/{name}"))
    log.info("running %s (seed %d, %d workers)", name, seed, workers)
    if name == "invariance":
        rep = harness.invariance_benchmark(h, args.n_scenes, seed)
    elif name == "retrieval":
        rep = harness.retrieval_experiment(h, args.n_demos, args.n_eval, seed)
    elif name == "crop-size":
        sizes = tuple(int(v) for v in _floats(args.sizes, len(args.sizes.split(",")), "--sizes"))
        rep = harness.crop_size_sweep(h, sizes, args.n_demos, args.n_eval, seed)
    elif name == "calibration":
        rep = harness.calibration_robustness(h, 5.0 if jitter is None else jitter,
                                             0.005 if noise is None else noise,
                                             args.n_demos, args.n_eval, seed)
    else:
        rep = harness.motion_encoding_experiment(h, args.n_demos, args.n_eval, seed)
    paths = write_report(rep, out, figure=not args.no_figure)
    for k, v in rep.timings.items():
        log.info("time %s: %.2f s", k, v)
    print(json.dumps({"experiment": name, "files": [str(p) for p in paths], "summary": rep.summary}))
    return 0


def cmd_export(args):
    doc = _load_config(args.config)
    seed, workers, _, _ = _settings(args, doc)
    h = _harness_config(args, doc, workers)
    out = Path(_pick(args.out, doc, "out", "synthetic_ds"))
    ds = harness.export_dataset(h, out, args.n_episodes, seed)
    print(json.dumps({"out": str(out), "trajectories": len(ds.trajectories), "frames": ds.n_frames}))
    return 0


def cmd_validate(args):
    path = args.dataset or minimal_manifest_path()
    ds = load_manifest(path)
    missing = [f"{t.traj_id}:{fr.index}:{fr.image_path}" for t in ds.trajectories for fr in t.frames
               if not (ds.root / fr.image_path).is_file()]
    print(json.dumps({"manifest": str(path), "cameras": len(ds.cameras), "trajectories": len(ds.trajectories),
                      "frames": ds.n_frames, "missing_images": missing}))
    if missing:
        log.error("%d referenced images are missing", len(missing))
        return 1
    return 0


COMMANDS = {"preprocess": cmd_preprocess, "project": cmd_project, "simulate": cmd_simulate,
            "export": cmd_export, "validate": cmd_validate}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.WARNING if getattr(args, "quiet", False) else logging.INFO,
                        stream=sys.stderr, format="%(levelname)s %(message)s", force=True)
    t0 = time.perf_counter()
    try:
        code = COMMANDS[args.command](args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"palm-align: error: {e}", file=sys.stderr)
        return 2
    except (ManifestError, GeometryError, OSError, ValueError) as e:
        print(f"palm-align: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    log.debug("done in %.2f s", time.perf_counter() - t0)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
