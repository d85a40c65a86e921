"""Demonstration manifests and batch preprocessing into aligned datasets.

On-disk layout::

    <root>/manifest.json          cameras, metadata, trajectory list
    <root>/traj_<id>.jsonl        one JSON object per frame
    <root>/images/...png          raw RGB frames (paths relative to <root>)

Preprocessing writes::

    <out>/aligned/images/<id>/<frame>.png
    <out>/aligned/proprio_<id>.csv   frame, r1..r6, z, g, a1..a10
    <out>/report.json
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .align import AlignmentConfig, align_proprio, align_visual
from .augment import AugmentConfig, augment_frame, derive_rng, load_overlay_pool
from .geometry import CameraCalib, CameraIntrinsics, GeometryError, Pose
from .imaging import read_png, write_png
from .parallel import parallel_map

log = logging.getLogger(__name__)

CALIB_TOL = 1e-6
ACTION_DIM = 10
PROPRIO_COLUMNS = ["r1", "r2", "r3", "r4", "r5", "r6", "z", "g"]
CSV_COLUMNS = ["frame"] + PROPRIO_COLUMNS + [f"a{i}" for i in range(1, ACTION_DIM + 1)]


class ManifestError(ValueError):
    pass


class ParseError(ManifestError):
    pass


class MissingCamera(ManifestError):
    pass


class InvalidCalibration(ManifestError):
    pass


@dataclass(frozen=True)
class FrameRecord:
    index: int
    image_path: str
    ee_pose: Pose
    gripper_width: float
    action: np.ndarray


@dataclass(frozen=True)
class TrajectoryManifest:
    traj_id: str
    camera_id: str
    frames: tuple


@dataclass(frozen=True)
class Perturbation:
    """Calibration-error model: uniform pixel jitter on the crop center, Gaussian proprio noise."""

    pixel_jitter: float = 0.0
    proprio_noise: float = 0.0
    seed: int = 0

    def draw(self, traj_id, frame_idx):
        rng = derive_rng(self.seed, traj_id, frame_idx, "calibration-jitter")
        offset = rng.uniform(-self.pixel_jitter, self.pixel_jitter, size=2)
        noise = rng.normal(0.0, self.proprio_noise, size=7) if self.proprio_noise > 0 else np.zeros(7)
        return offset, noise


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    cameras: dict
    trajectories: tuple
    metadata: dict = field(default_factory=dict)
    perturbation: Perturbation | None = None

    @property
    def n_frames(self):
        return sum(len(t.frames) for t in self.trajectories)


def _fail(where, msg):
    raise ParseError(f"{where}: {msg}")


def _numbers(value, shape, where, name):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        _fail(where, f"field {name!r}: expected numbers")
    if arr.shape != shape:
        _fail(where, f"field {name!r}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        _fail(where, f"field {name!r}: non-finite value")
    return arr


def _field(obj, name, where):
    if not isinstance(obj, dict) or name not in obj:
        _fail(where, f"missing field {name!r}")
    return obj[name]


def orthonormalize(R, tol, exc, what):
    """Project a near-rotation onto SO(3); reject anything further than ``tol``."""
    if np.abs(R.T @ R - np.eye(3)).max() > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise exc(f"{what}: rotation is not orthonormal with det +1 (tol {tol:g})")
    U, _, Vt = np.linalg.svd(R)
    return U @ Vt


def _parse_camera(cid, c, where):
    k = _field(c, "intrinsics", where)
    try:
        intr = CameraIntrinsics(*(float(_field(k, n, where)) for n in ("fx", "fy", "cx", "cy")))
    except GeometryError as e:
        raise InvalidCalibration(f"camera {cid!r}: {e}") from None
    R = _numbers(_field(c, "rotation", where), (3, 3), where, "rotation")
    t = _numbers(_field(c, "translation", where), (3,), where, "translation")
    R = orthonormalize(R, CALIB_TOL, InvalidCalibration, f"camera {cid!r}")
    try:
        return CameraCalib(intr, Pose(R, t), int(_field(c, "width", where)), int(_field(c, "height", where)))
    except GeometryError as e:
        raise InvalidCalibration(f"camera {cid!r}: {e}") from None


def _parse_frame(obj, where):
    R = _numbers(_field(obj, "ee_rotation", where), (3, 3), where, "ee_rotation")
    R = orthonormalize(R, CALIB_TOL, ParseError, f"{where}: field 'ee_rotation'")
    t = _numbers(_field(obj, "ee_translation", where), (3,), where, "ee_translation")
    width = float(_numbers(_field(obj, "gripper_width", where), (), where, "gripper_width"))
    action = _numbers(_field(obj, "action", where), (ACTION_DIM,), where, "action")
    image = _field(obj, "image", where)
    if not isinstance(image, str):
        _fail(where, "field 'image': expected a relative path")
    index = _field(obj, "index", where)
    if not isinstance(index, int) or index < 0:
        _fail(where, "field 'index': expected a non-negative integer")
    return FrameRecord(index, image, Pose(R, t), width, action)


def load_trajectory(path, traj_id, camera_id):
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"{path.name}: trajectory file not found")
    frames = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path.name}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                _fail(where, f"invalid JSON ({e.msg})")
            fr = _parse_frame(obj, where)
            if frames and fr.index <= frames[-1].index:
                _fail(where, "frame indices must be strictly increasing")
            frames.append(fr)
    if not frames:
        raise ParseError(f"{path.name}: trajectory has no frames")
    return TrajectoryManifest(str(traj_id), str(camera_id), tuple(frames))


def load_manifest(path) -> DatasetManifest:
    """Parse and eagerly validate ``manifest.json`` and its trajectory files."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    where = path.name
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"{where}:{e.lineno}: invalid JSON ({e.msg})") from None
    cams = _field(doc, "cameras", where)
    if not isinstance(cams, dict):
        _fail(where, "field 'cameras': expected an object")
    cameras = {str(cid): _parse_camera(cid, c, f"{where}: cameras.{cid}") for cid, c in cams.items()}
    meta = dict(doc.get("metadata", {}))
    if meta.get("gripper_open", 0.08) == meta.get("gripper_close", 0.0):
        _fail(where, "metadata: gripper_open and gripper_close must differ")
    trajs = []
    seen = set()
    for i, t in enumerate(_field(doc, "trajectories", where)):
        tw = f"{where}: trajectories[{i}]"
        tid, cid = str(_field(t, "id", tw)), str(_field(t, "camera", tw))
        if tid in seen:
            _fail(tw, f"duplicate trajectory id {tid!r}")
        seen.add(tid)
        if cid not in cameras:
            raise MissingCamera(f"{tw}: trajectory {tid!r} references unknown camera {cid!r}")
        trajs.append(load_trajectory(path.parent / f"traj_{tid}.jsonl", tid, cid))
    return DatasetManifest(path.parent, cameras, tuple(trajs), meta)


def _rot_list(R):
    return [[float(v) for v in row] for row in R]


def camera_to_dict(calib: CameraCalib):
    k = calib.intrinsics
    return {
        "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy},
        "width": calib.width,
        "height": calib.height,
        "rotation": _rot_list(calib.pose.rotation),
        "translation": [float(v) for v in calib.pose.translation],
    }


def frame_to_dict(fr: FrameRecord):
    return {
        "index": fr.index,
        "image": fr.image_path,
        "ee_rotation": _rot_list(fr.ee_pose.rotation),
        "ee_translation": [float(v) for v in fr.ee_pose.translation],
        "gripper_width": float(fr.gripper_width),
        "action": [float(v) for v in fr.action],
    }


def save_manifest(ds: DatasetManifest, root):
    """Write manifest and trajectory files (images are expected to exist already)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    doc = {
        "cameras": {cid: camera_to_dict(c) for cid, c in ds.cameras.items()},
        "metadata": ds.metadata,
        "trajectories": [{"id": t.traj_id, "camera": t.camera_id} for t in ds.trajectories],
    }
    (root / "manifest.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    for t in ds.trajectories:
        with open(root / f"traj_{t.traj_id}.jsonl", "w", encoding="utf-8") as fh:
            for fr in t.frames:
                fh.write(json.dumps(frame_to_dict(fr)) + "\n")


def jitter_calibration(ds: DatasetManifest, pixel_jitter, proprio_noise, seed=0) -> DatasetManifest:
    """Manifest variant whose preprocessing perturbs the TCP projection and proprio scalars."""
    if pixel_jitter < 0 or proprio_noise < 0:
        raise ValueError("jitter and noise scales must be non-negative")
    if pixel_jitter == 0 and proprio_noise == 0:
        return replace(ds, perturbation=None)
    return replace(ds, perturbation=Perturbation(float(pixel_jitter), float(proprio_noise), int(seed)))


@dataclass
class PreprocessReport:
    frames_total: int = 0
    frames_written: int = 0
    clamped: int = 0
    errors: list = field(default_factory=list)
    trajectories: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def frames_skipped(self):
        return len(self.errors)

    def to_dict(self):
        # timings are excluded so that reruns produce byte-identical files
        return {
            "config": self.config,
            "frames_total": self.frames_total,
            "frames_written": self.frames_written,
            "frames_skipped": self.frames_skipped,
            "clamped": self.clamped,
            "trajectories": self.trajectories,
            "errors": self.errors,
        }


def fmt(x):
    return f"{x:.9g}"


def _process_trajectory(task):
    ds_root, traj, calib, cfg, aug, perturbation, out_dir = task
    pool = load_overlay_pool(aug.overlay_pool) if aug.enabled and aug.overlay_pool else []
    img_dir = Path(out_dir) / "aligned" / "images" / traj.traj_id
    rows, errors, clamped = [], [], 0
    timings = {"read": 0.0, "align": 0.0, "augment": 0.0, "write": 0.0}
    for fr in traj.frames:
        try:
            t0 = time.perf_counter()
            img = read_png(Path(ds_root) / fr.image_path)
            if img.shape[:2] != (calib.height, calib.width):
                raise ValueError(f"image is {img.shape[1]}x{img.shape[0]}, camera expects {calib.width}x{calib.height}")
            t1 = time.perf_counter()
            offset, noise = (perturbation.draw(traj.traj_id, fr.index) if perturbation
                             else (np.zeros(2), np.zeros(7)))
            out, was_clamped = align_visual(img, calib, fr.ee_pose, cfg, pixel_offset=offset)
            prop = align_proprio(fr.ee_pose, fr.gripper_width, calib, cfg).vector()
            prop[:7] += noise
            t2 = time.perf_counter()
            out = augment_frame(out, aug, pool, cfg.seed, traj.traj_id, fr.index)
            t3 = time.perf_counter()
            img_dir.mkdir(parents=True, exist_ok=True)
            write_png(img_dir / f"{fr.index:06d}.png", out)
            t4 = time.perf_counter()
        except (OSError, ValueError) as e:
            errors.append({"trajectory": traj.traj_id, "frame": fr.index, "error": f"{type(e).__name__}: {e}"})
            continue
        timings["read"] += t1 - t0
        timings["align"] += t2 - t1
        timings["augment"] += t3 - t2
        timings["write"] += t4 - t3
        clamped += int(was_clamped)
        rows.append([str(fr.index)] + [fmt(v) for v in prop[:7]] + [str(int(prop[7]))]
                    + [fmt(v) for v in fr.action])
    return traj.traj_id, rows, errors, clamped, timings


def preprocess_dataset(ds: DatasetManifest, cfg: AlignmentConfig, out_dir,
                       augment: AugmentConfig | None = None, workers=1) -> PreprocessReport:
    """Align every frame of ``ds`` into ``out_dir``; bad frames are skipped and logged."""
    augment = augment or AugmentConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if ds.metadata:
        cfg = replace(cfg,
                      gripper_open_ref=float(ds.metadata.get("gripper_open", cfg.gripper_open_ref)),
                      gripper_close_ref=float(ds.metadata.get("gripper_close", cfg.gripper_close_ref)))
    report = PreprocessReport(config={
        "alignment": cfg.to_dict(),
        "augment": augment.to_dict(),
        "perturbation": vars(ds.perturbation).copy() if ds.perturbation else None,
    })
    tasks = [(str(ds.root), t, ds.cameras[t.camera_id], cfg, augment, ds.perturbation, str(out_dir))
             for t in sorted(ds.trajectories, key=lambda t: t.traj_id)]
    start = time.perf_counter()
    results = parallel_map(_process_trajectory, tasks, workers)
    totals = {}
    for (tid, rows, errors, clamped, timings), task in zip(results, tasks):
        n = len(task[1].frames)
        report.frames_total += n
        report.frames_written += len(rows)
        report.clamped += clamped
        report.errors.extend(errors)
        report.trajectories.append({"id": tid, "frames": n, "written": len(rows), "clamped": clamped})
        for k, v in timings.items():
            totals[k] = totals.get(k, 0.0) + v
        for e in errors:
            log.warning("skipped trajectory %s frame %s: %s", e["trajectory"], e["frame"], e["error"])
        if rows:
            csv_path = out_dir / "aligned" / f"proprio_{tid}.csv"
            lines = [",".join(CSV_COLUMNS)] + [",".join(r) for r in rows]
            csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    totals["wall"] = time.perf_counter() - start
    report.timings = totals
    (out_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    return report


def read_proprio_csv(path):
    """Load an aligned CSV back as ``(frames, proprio (N, 8), actions (N, 10))``."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0].astype(int), data[:, 1:9], data[:, 9:]


def minimal_manifest_path() -> Path:
    """Directory of the small synthetic dataset shipped with the package."""
    return Path(__file__).resolve().parent / "data" / "minimal"
