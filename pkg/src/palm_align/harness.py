"""Synthetic tabletop scenes and the experiments that measure alignment benefits.

The renderer is a point-splat rasterizer: spheres (scene objects and gripper
markers) are drawn as depth-sorted filled discs over a plain
table and a striped back wall. Every experiment is a pure function of its config and seed; each
random quantity is drawn from a stream keyed by what it is for, so results do
not depend on evaluation order or worker count.
"""

from __future__ import annotations

import time
from pathlib import Path
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache

import numpy as np
from PIL import Image

from .align import AlignmentConfig, align_proprio, align_visual
from .augment import derive_rng
from .dataset import DatasetManifest, FrameRecord, Perturbation, TrajectoryManifest, save_manifest
from .geometry import (
    CameraCalib,
    CameraIntrinsics,
    NonPositiveDepth,
    Pose,
    compose,
    look_at,
    project_camera_points,
    project_point,
    random_rotation,
    rot_to_6d,
    rot_x,
    rot_z,
    world_to_camera,
)
from .imaging import check_image, to_gray, write_png
from .parallel import parallel_map

BACKGROUND_COLOR = (58, 60, 72)
TABLE_COLOR = (176, 156, 128)
TABLE_BORDER_COLOR = (120, 100, 80)
TABLE_BORDER = 0.03
TABLE_HALF_EXTENT = (0.9, 1.1)
WALL_OFFSET = 1.1  # wall plane sits this far behind the workspace center
WALL_HALF_EXTENT = (2.0, 0.8)
WALL_STRIPE = 0.07
WALL_STRIPE_PHASE = 0.0131
WALL_COLORS = ((92, 110, 140), (150, 160, 170), (110, 80, 70))
OBJECT_PALETTE = ((220, 40, 40), (40, 160, 220), (240, 200, 30), (150, 60, 200), (60, 190, 90), (240, 120, 30))

# gripper marker spheres (offset, radius, color) in the end-effector frame;
# z points along the approach direction, so negative z is toward the wrist
STYLES = {
    "panda": [
        ((0.0, 0.035, 0.0), 0.010, (235, 235, 235)), ((0.0, -0.035, 0.0), 0.010, (235, 235, 235)),
        ((0.0, 0.035, -0.03), 0.011, (235, 235, 235)), ((0.0, -0.035, -0.03), 0.011, (235, 235, 235)),
        ((0.0, 0.0, -0.065), 0.030, (245, 245, 245)), ((0.0, 0.0, -0.12), 0.035, (60, 60, 60)),
        ((0.0, 0.0, -0.18), 0.040, (245, 245, 245)),
    ],
    "ur5": [
        ((0.03, 0.0, 0.0), 0.009, (40, 40, 45)), ((-0.03, 0.0, 0.0), 0.009, (40, 40, 45)),
        ((0.03, 0.0, -0.025), 0.013, (40, 40, 45)), ((-0.03, 0.0, -0.025), 0.013, (40, 40, 45)),
        ((0.0, 0.0, -0.07), 0.035, (70, 70, 75)), ((0.0, 0.0, -0.13), 0.040, (120, 150, 190)),
        ((0.0, 0.0, -0.19), 0.040, (120, 150, 190)),
    ],
    "invisible": [],
}

FAMILIES = ("workspace", "viewpoint", "embodiment", "workspace+viewpoint", "all")


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float
    color: tuple

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("sphere radius must be positive")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))


@dataclass(frozen=True)
class SceneSpec:
    """Objects plus the static backdrop (table and back wall) they sit in.

    ``table_pose`` and ``wall_pose`` place the backdrop planes; both default to
    positions derived from ``workspace_center`` and ``z_table``.
    """

    spheres: tuple
    z_table: float = 0.0
    workspace_center: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.0, 0.0]))
    robot_base: np.ndarray = field(default_factory=lambda: np.zeros(3))
    style: str = "panda"
    table_pose: Pose | None = None
    wall_pose: Pose | None = None

    def __post_init__(self):
        if not self.spheres:
            raise ValueError("a scene needs at least one sphere")
        if self.style not in STYLES:
            raise ValueError(f"unknown marker style {self.style!r}")
        c = np.asarray(self.workspace_center, dtype=float)
        object.__setattr__(self, "workspace_center", c)
        object.__setattr__(self, "robot_base", np.asarray(self.robot_base, dtype=float))
        if self.table_pose is None:
            object.__setattr__(self, "table_pose", Pose(np.eye(3), [c[0], c[1], self.z_table]))
        if self.wall_pose is None:
            # local x along world y, local y up, normal facing the workspace
            R = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
            origin = [c[0] - WALL_OFFSET, c[1], self.z_table + WALL_HALF_EXTENT[1] - 0.2]
            object.__setattr__(self, "wall_pose", Pose(R, origin))


@dataclass(frozen=True)
class ShiftSpec:
    dx: float = 0.0
    dy: float = 0.0
    yaw: float = 0.0
    style: str | None = None

    def __post_init__(self):
        if abs(self.yaw) > np.pi:
            raise ValueError("|yaw| must not exceed pi")


@dataclass(frozen=True)
class HarnessConfig:
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    image_size: int = 512
    focal: float = 640.0
    camera_eye: tuple = (1.7, 0.0, 0.9)
    workspace_center: tuple = (0.5, 0.0, 0.0)
    train_half_extent: float = 0.1
    n_distractors: int = 3
    min_workspace_shift: float = 0.15
    max_workspace_shift: float = 0.3
    max_yaw_deg: float = 30.0
    ood_style: str = "ur5"
    feature_size: int = 28
    ee_yaw_deg: float = 0.0  # half-range of the demo grasp yaw; 0 = fixed top-down grasp
    step: float = 0.02
    grasp_tol: float = 0.01
    max_steps: int = 20
    workers: int = 1

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["alignment"] = self.alignment.to_dict()
        d["camera_eye"] = list(self.camera_eye)
        d["workspace_center"] = list(self.workspace_center)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown harness config keys: {sorted(unknown)}")
        if "alignment" in d:
            d["alignment"] = AlignmentConfig.from_dict(d["alignment"])
        for k in ("camera_eye", "workspace_center"):
            if k in d:
                d[k] = tuple(float(v) for v in d[k])
        return cls(**d)

    def camera(self):
        c = np.asarray(self.workspace_center, dtype=float)
        s = self.image_size
        intr = CameraIntrinsics(self.focal, self.focal, s / 2, s / 2)
        return CameraCalib(intr, look_at(self.camera_eye, c), s, s)


@dataclass
class ExperimentReport:
    name: str
    seed: int
    config: dict
    rows: list
    summary: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def to_dict(self):
        # timings stay out of the persisted report so reruns are byte-identical
        return {"experiment": self.name, "seed": self.seed, "config": self.config,
                "summary": self.summary, "rows": self.rows}


def _persisted(hcfg):
    # worker count affects speed only; keeping it out makes reports comparable across machines
    d = hcfg.to_dict()
    del d["workers"]
    return d


# ---------------------------------------------------------------- rendering

@lru_cache(maxsize=8)
def _camera_rays(fx, fy, cx, cy, w, h):
    v, u = np.mgrid[0:h, 0:w].astype(float)
    return np.stack([(u - cx) / fx, (v - cy) / fy, np.ones_like(u)], axis=-1)


def _plane_hits(rays, calib: CameraCalib, plane: Pose, half_extent):
    """Ray depth and in-plane coordinates where camera rays meet a finite plane."""
    cam_T_plane = compose(Pose(calib.pose.rotation.T, -calib.pose.rotation.T @ calib.pose.translation), plane)
    n = cam_T_plane.rotation[:, 2]
    o = cam_T_plane.translation
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (o @ n) / (rays @ n)
    hit = np.isfinite(s) & (s > 0)
    s = np.where(hit, s, np.inf)
    local = (rays * np.where(hit, s, 0.0)[..., None] - o) @ cam_T_plane.rotation
    hit &= (np.abs(local[..., 0]) <= half_extent[0]) & (np.abs(local[..., 1]) <= half_extent[1])
    return np.where(hit, s, np.inf), local


def _render_backdrop(img, scene: SceneSpec, calib: CameraCalib):
    key = (calib.intrinsics, calib.width, calib.height,
           *(np.concatenate([p.rotation.ravel(), p.translation]).tobytes()
             for p in (calib.pose, scene.table_pose, scene.wall_pose)))
    img[:] = _backdrop(key, scene, calib)


def _backdrop(key, scene, calib):
    cached = _BACKDROP_CACHE.get(key)
    if cached is None:
        cached = np.empty((calib.height, calib.width, 3), dtype=np.uint8)
        cached[:] = BACKGROUND_COLOR
        _draw_backdrop(cached, scene, calib)
        if len(_BACKDROP_CACHE) >= 16:
            _BACKDROP_CACHE.pop(next(iter(_BACKDROP_CACHE)))
        _BACKDROP_CACHE[key] = cached
    return cached


_BACKDROP_CACHE = {}


def _draw_backdrop(img, scene: SceneSpec, calib: CameraCalib):
    k = calib.intrinsics
    rays = _camera_rays(k.fx, k.fy, k.cx, k.cy, calib.width, calib.height)
    s_wall, wall = _plane_hits(rays, calib, scene.wall_pose, WALL_HALF_EXTENT)
    s_table, table = _plane_hits(rays, calib, scene.table_pose, TABLE_HALF_EXTENT)
    on_wall = np.isfinite(s_wall) & (s_wall < s_table)
    stripe = np.floor((wall[..., 0] + WALL_STRIPE_PHASE) / WALL_STRIPE) % len(WALL_COLORS)
    for i, color in enumerate(WALL_COLORS):
        img[on_wall & (stripe == i)] = color
    on_table = np.isfinite(s_table) & (s_table <= s_wall)
    hx, hy = TABLE_HALF_EXTENT
    border = (np.abs(table[..., 0]) > hx - TABLE_BORDER) | (np.abs(table[..., 1]) > hy - TABLE_BORDER)
    img[on_table & ~border] = TABLE_COLOR
    img[on_table & border] = TABLE_BORDER_COLOR


def marker_points(ee_pose: Pose, style):
    """World-frame gripper marker spheres for ``style``."""
    markers = STYLES[style]
    pts = [ee_pose.apply(np.array(p)) for p, _, _ in markers]
    return pts, [r for _, r, _ in markers], [c for _, _, c in markers]


def _disc(img, center, radius, color):
    h, w = img.shape[:2]
    r = max(float(radius), 0.5)
    x0, x1 = int(np.floor(center[0] - r)), int(np.ceil(center[0] + r))
    y0, y1 = int(np.floor(center[1] - r)), int(np.ceil(center[1] + r))
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, w - 1), min(y1, h - 1)
    if x1 < x0 or y1 < y0:
        return
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    inside = (xs - center[0]) ** 2 + (ys - center[1]) ** 2 <= r * r
    img[y0:y1 + 1, x0:x1 + 1][inside] = color


def render_scene(scene: SceneSpec, calib: CameraCalib, ee_pose: Pose, style=None):
    """Rasterize the scene; farther discs first, ties broken by list order."""
    img = np.empty((calib.height, calib.width, 3), dtype=np.uint8)
    _render_backdrop(img, scene, calib)
    centers = [s.center for s in scene.spheres]
    radii = [s.radius for s in scene.spheres]
    colors = [s.color for s in scene.spheres]
    n_required = len(centers)
    rp, rr, rc = marker_points(ee_pose, style or scene.style)
    pc = world_to_camera(calib, np.array(centers + [ee_pose.translation] + rp))
    if np.any(pc[:n_required + 1, 2] <= 1e-6):
        raise NonPositiveDepth("a scene sphere or the end-effector is not in front of the camera")
    pc = np.delete(pc, n_required, axis=0)
    radii += rr
    colors += rc
    # depths rounded to 1 nm so float noise cannot reorder geometrically tied discs
    order = np.argsort(-np.round(pc[:, 2], 9), kind="stable")
    fx = calib.intrinsics.fx
    for i in order:
        if pc[i, 2] <= 1e-6:
            continue
        uv = project_camera_points(calib, pc[i])
        rad = np.floor(fx * radii[i] / pc[i, 2] + 0.5)
        _disc(img, uv, rad, colors[i])
    return img


# ---------------------------------------------------------------- shifts

def yaw_about(center, angle) -> Pose:
    """Rotation by ``angle`` about the vertical axis through ``center``."""
    c = np.asarray(center, dtype=float)
    R = rot_z(angle)
    return Pose(R, c - R @ c)


def transform_world(T: Pose, scene: SceneSpec, calib: CameraCalib, ee_pose: Pose):
    """Apply one rigid transform to scene, camera and end-effector together."""
    spheres = tuple(Sphere(T.apply(s.center), s.radius, s.color) for s in scene.spheres)
    new_scene = replace(scene, spheres=spheres,
                        workspace_center=T.apply(scene.workspace_center),
                        robot_base=T.apply(scene.robot_base),
                        table_pose=compose(T, scene.table_pose),
                        wall_pose=compose(T, scene.wall_pose))
    return new_scene, calib.with_pose(compose(T, calib.pose)), compose(T, ee_pose)


def apply_shift(scene: SceneSpec, calib: CameraCalib, ee_pose: Pose, shift: ShiftSpec):
    """Workspace delta moves objects and end-effector; yaw moves the camera; style swaps markers."""
    d = np.array([shift.dx, shift.dy, 0.0])
    if shift.dx or shift.dy:
        spheres = tuple(Sphere(s.center + d, s.radius, s.color) for s in scene.spheres)
        scene = replace(scene, spheres=spheres)
        ee_pose = Pose(ee_pose.rotation, ee_pose.translation + d, ee_pose.frame)
    if shift.yaw:
        calib = calib.with_pose(compose(yaw_about(scene.workspace_center, shift.yaw), calib.pose))
    if shift.style is not None:
        scene = replace(scene, style=shift.style)
    return scene, calib, ee_pose


def sample_shift(rng, family, hcfg: HarnessConfig) -> ShiftSpec:
    dx = dy = yaw = 0.0
    style = None
    if family in ("workspace", "workspace+viewpoint", "all"):
        mag = rng.uniform(hcfg.min_workspace_shift, hcfg.max_workspace_shift)
        ang = rng.uniform(0.0, 2 * np.pi)
        dx, dy = mag * np.cos(ang), mag * np.sin(ang)
    if family in ("viewpoint", "workspace+viewpoint", "all"):
        yaw = np.deg2rad(rng.uniform(-hcfg.max_yaw_deg, hcfg.max_yaw_deg))
    if family in ("embodiment", "all"):
        style = hcfg.ood_style
    if family not in FAMILIES:
        raise ValueError(f"unknown shift family {family!r}")
    return ShiftSpec(dx, dy, yaw, style)


# ---------------------------------------------------------------- episodes

@dataclass(frozen=True)
class State:
    scene: SceneSpec
    calib: CameraCalib
    ee_pose: Pose
    gripper_width: float
    action_world: np.ndarray  # relative translation (3) + gripper command
    key: str
    frame: int

    def action_camera(self):
        """Translation part of the action in the camera frame."""
        return self.calib.pose.rotation.T @ self.action_world[:3]


def sample_scene(rng, hcfg: HarnessConfig, style="panda"):
    c = np.asarray(hcfg.workspace_center, dtype=float)
    h = hcfg.train_half_extent
    r = rng.uniform(0.02, 0.03)
    target = c + [rng.uniform(-h, h), rng.uniform(-h, h), 0.0]
    target[2] = c[2] + r
    colors = 1 + rng.permutation(len(OBJECT_PALETTE) - 1)
    spheres = [Sphere(target, r, OBJECT_PALETTE[0])]
    while len(spheres) < 1 + hcfg.n_distractors:
        rd = rng.uniform(0.015, 0.035)
        p = c + [rng.uniform(-0.25, 0.25), rng.uniform(-0.25, 0.25), 0.0]
        p[2] = c[2] + rd
        if np.linalg.norm(p[:2] - target[:2]) < 0.1:
            continue
        spheres.append(Sphere(p, rd, OBJECT_PALETTE[colors[(len(spheres) - 1) % len(colors)]]))
    return SceneSpec(tuple(spheres), float(c[2]), c, np.array([0.0, 0.0, c[2]]), style)


def sample_episode(hcfg: HarnessConfig, seed, key, style="panda"):
    """A reach-and-grasp demonstration toward sphere 0, as a list of states."""
    rng = derive_rng(seed, key, 0, "episode")
    scene = sample_scene(rng, hcfg, style)
    calib = hcfg.camera()
    grasp = scene.spheres[0].center
    off_r = 0.06 * np.sqrt(rng.random())
    off_a = rng.uniform(0.0, 2 * np.pi)
    p = grasp + [off_r * np.cos(off_a), off_r * np.sin(off_a), rng.uniform(0.04, 0.12)]
    yaw = np.deg2rad(hcfg.ee_yaw_deg)
    R = rot_z(rng.uniform(-yaw, yaw)) @ rot_x(np.pi)
    width = hcfg.alignment.gripper_open_ref
    states = []
    for k in range(hcfg.max_steps):
        delta = grasp - p
        dist = np.linalg.norm(delta)
        if dist < hcfg.grasp_tol:
            action = np.array([0.0, 0.0, 0.0, 0.0])
        else:
            move = delta if dist <= hcfg.step else delta * (hcfg.step / dist)
            action = np.append(move, 1.0)
        states.append(State(scene, calib, Pose(R, p), width, action, key, k))
        if action[3] == 0.0:
            break
        p = p + action[:3]
    return states


def shifted(state: State, shift: ShiftSpec) -> State:
    scene, calib, ee = apply_shift(state.scene, state.calib, state.ee_pose, shift)
    return replace(state, scene=scene, calib=calib, ee_pose=ee)


# ---------------------------------------------------------------- invariance

def l1_discrepancy(a, b):
    """Mean absolute per-channel difference, normalized to [0, 1]."""
    return float(np.abs(check_image(a).astype(np.int16) - check_image(b).astype(np.int16)).mean() / 255.0)


def _aligned_image(state: State, cfg: AlignmentConfig, img=None):
    if img is None:
        img = render_scene(state.scene, state.calib, state.ee_pose)
    return align_visual(img, state.calib, state.ee_pose, cfg)[0]


def _conjugate_transform(rng, center):
    t = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 0.0])
    T = yaw_about(center, rng.uniform(-np.pi, np.pi))
    return Pose(T.rotation, T.translation + t)


def _invariance_trial(args):
    hcfg, seed, i = args
    key = f"scene-{i}"
    states = sample_episode(hcfg, seed, key)
    rng = derive_rng(seed, key, 0, "state")
    base = states[int(rng.integers(len(states)))]
    cfg = hcfg.alignment
    cfg_off = replace(cfg, overlay_enabled=False)
    raw0 = render_scene(base.scene, base.calib, base.ee_pose)
    al0, al0_off = _aligned_image(base, cfg, raw0), _aligned_image(base, cfg_off, raw0)
    out = []
    for family in FAMILIES + ("conjugate",):
        frng = derive_rng(seed, key, 0, "shift-" + family)
        if family == "conjugate":
            T = _conjugate_transform(frng, base.scene.workspace_center)
            scene, calib, ee = transform_world(T, base.scene, base.calib, base.ee_pose)
            other = replace(base, scene=scene, calib=calib, ee_pose=ee)
        else:
            other = shifted(base, sample_shift(frng, family, hcfg))
        raw1 = render_scene(other.scene, other.calib, other.ee_pose)
        out.append({
            "family": family,
            "raw": l1_discrepancy(raw0, raw1),
            "aligned": l1_discrepancy(al0, _aligned_image(other, cfg, raw1)),
            "aligned_no_overlay": l1_discrepancy(al0_off, _aligned_image(other, cfg_off, raw1)),
        })
    return out


def invariance_benchmark(hcfg: HarnessConfig, n_scenes=100, seed=0) -> ExperimentReport:
    """Raw vs aligned observation discrepancy under each shift family."""
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    t0 = time.perf_counter()
    trials = parallel_map(_invariance_trial, [(hcfg, seed, i) for i in range(n_scenes)], hcfg.workers)
    rows = []
    for family in FAMILIES + ("conjugate",):
        ts = [t for trial in trials for t in trial if t["family"] == family]
        raw = np.array([t["raw"] for t in ts])
        al = np.array([t["aligned"] for t in ts])
        al_off = np.array([t["aligned_no_overlay"] for t in ts])
        nz = raw > 0
        rows.append({
            "family": family,
            "n": len(ts),
            "raw_discrepancy": float(raw.mean()),
            "aligned_discrepancy": float(al.mean()),
            "aligned_no_overlay_discrepancy": float(al_off.mean()),
            "ratio": float(al.mean() / raw.mean()) if raw.mean() > 0 else None,
            "max_trial_ratio": float((al[nz] / raw[nz]).max()) if nz.any() else None,
            "trials_aligned_below_raw": int((al < raw).sum()),
        })
    pooled = [r for r in rows if r["family"] in ("workspace", "viewpoint", "workspace+viewpoint")]
    raw_m = np.mean([r["raw_discrepancy"] for r in pooled])
    al_m = np.mean([r["aligned_discrepancy"] for r in pooled])
    summary = {"pooled_raw": float(raw_m), "pooled_aligned": float(al_m),
               "pooled_ratio": float(al_m / raw_m)}
    return ExperimentReport("invariance", seed, {"harness": _persisted(hcfg), "n_scenes": n_scenes},
                            rows, summary, {"total": time.perf_counter() - t0})


# ---------------------------------------------------------------- retrieval

@dataclass(frozen=True)
class Variant:
    """How a policy sees a state: crop mode, crop size, overlay, proprio mode, calibration jitter."""

    name: str
    crop: str = "tcp"  # tcp | object | none
    kappa: int = 200
    overlay: bool = True
    proprio: str = "aligned"  # aligned | raw | z
    perturbation: Perturbation | None = None


def raw_variant():
    return Variant("raw", crop="none", overlay=False, proprio="raw")


def _features(state: State, img, v: Variant, hcfg: HarnessConfig):
    cfg = replace(hcfg.alignment, kappa=v.kappa, overlay_enabled=v.overlay)
    offset, noise = np.zeros(2), np.zeros(7)
    if v.perturbation is not None:
        offset, noise = v.perturbation.draw(state.key, state.frame)
    if v.crop == "none":
        vis = img
    elif v.crop == "tcp":
        vis = align_visual(img, state.calib, state.ee_pose, cfg, pixel_offset=offset)[0]
    elif v.crop == "object":
        center = project_point(state.calib, state.scene.spheres[0].center)
        vis = align_visual(img, state.calib, state.ee_pose, cfg, pixel_offset=offset, center=center)[0]
    else:
        raise ValueError(f"unknown crop mode {v.crop!r}")
    image_feat = feature_image(vis, hcfg.feature_size).ravel()
    if v.proprio == "aligned":
        prop = align_proprio(state.ee_pose, state.gripper_width, state.calib, cfg).vector()
        prop[:7] += noise
    elif v.proprio == "z":
        prop = np.array([state.ee_pose.translation[2] + noise[6]])
    elif v.proprio == "raw":
        prop = np.concatenate([state.ee_pose.translation, rot_to_6d(state.ee_pose.rotation),
                               [state.gripper_width]])
    else:
        raise ValueError(f"unknown proprio mode {v.proprio!r}")
    return image_feat, prop


def feature_image(img, size):
    """Grayscale ``size``x``size`` area-averaged thumbnail in [0, 1]."""
    gray = Image.fromarray(to_gray(img).astype(np.float32))
    return np.asarray(gray.resize((size, size), Image.BOX), dtype=np.float64)


def _state_features(args):
    state, variants, hcfg = args
    img = render_scene(state.scene, state.calib, state.ee_pose)
    return [_features(state, img, v, hcfg) for v in variants]


def block_scales(image_feats, props):
    """Per-block weights giving the image and proprio blocks equal total variance."""
    def scale(x):
        tv = float(x.var(axis=0).sum())
        return 1.0 / np.sqrt(tv) if tv > 0 else 1.0
    return scale(image_feats), scale(props)


def nearest_neighbor(demo_feats, query_feats):
    """Index of the nearest demo row (squared Euclidean) for each query; ties go to the lowest index."""
    idx = np.empty(len(query_feats), dtype=int)
    for i, q in enumerate(query_feats):
        idx[i] = int(np.argmin(((demo_feats - q) ** 2).sum(axis=1)))
    return idx


def retrieval_error(demo, query):
    """Mean action error of 1-NN retrieval; ``demo``/``query`` are (image, proprio, actions) triples."""
    si, sp = block_scales(demo[0], demo[1])
    D = np.hstack([demo[0] * si, demo[1] * sp])
    Q = np.hstack([query[0] * si, query[1] * sp])
    nn = nearest_neighbor(D, Q)
    err = np.linalg.norm(demo[2][nn] - query[2], axis=1)
    return float(err.mean()), nn


def _stack(feats, states, j):
    img = np.array([f[j][0] for f in feats])
    prop = np.array([f[j][1] for f in feats])
    act = np.array([s.action_camera() for s in states])
    return img, prop, act


def build_states(hcfg: HarnessConfig, n_demos, n_eval, seed, families=FAMILIES, style="panda"):
    demos = [s for i in range(n_demos) for s in sample_episode(hcfg, seed, f"demo-{i}", style)]
    queries = {}
    base = []
    for j in range(n_eval):
        key = f"query-{j}"
        ep = sample_episode(hcfg, seed, key, style)
        rng = derive_rng(seed, key, 0, "state")
        base.append(ep[int(rng.integers(len(ep)))])
    queries["in-domain"] = base
    for family in families:
        queries[family] = [shifted(s, sample_shift(derive_rng(seed, s.key, 0, "shift-" + family), family, hcfg))
                           for s in base]
    return demos, queries


def _run_retrieval(hcfg, demos, queries, variants):
    jobs = [(s, variants, hcfg) for s in demos]
    names = list(queries)
    for name in names:
        jobs += [(s, variants, hcfg) for s in queries[name]]
    feats = parallel_map(_state_features, jobs, hcfg.workers, chunksize=16)
    n = len(demos)
    demo_feats = feats[:n]
    results = {}
    pos = n
    for name in names:
        q = queries[name]
        qf = feats[pos:pos + len(q)]
        pos += len(q)
        for j, v in enumerate(variants):
            results[(v.name, name)] = retrieval_error(_stack(demo_feats, demos, j), _stack(qf, q, j))[0]
    return results


def _retrieval_rows(results, variants, conditions):
    rows = []
    for v in variants:
        row = {"variant": v.name}
        for c in conditions:
            row[c] = results[(v.name, c)]
        ood = [results[(v.name, c)] for c in conditions if c != "in-domain"]
        row["ood_mean"] = float(np.mean(ood)) if ood else None
        rows.append(row)
    return rows


def retrieval_experiment(hcfg: HarnessConfig, n_demos=200, n_eval=100, seed=0, variants=None) -> ExperimentReport:
    """1-NN action retrieval from raw vs aligned features, in-domain and under each shift family."""
    if n_demos < 10:
        raise ValueError("n_demos must be >= 10")
    t0 = time.perf_counter()
    if variants is None:
        variants = [raw_variant(), Variant("aligned", kappa=hcfg.alignment.kappa,
                                           overlay=hcfg.alignment.overlay_enabled)]
    demos, queries = build_states(hcfg, n_demos, n_eval, seed)
    results = _run_retrieval(hcfg, demos, queries, variants)
    conditions = list(queries)
    rows = _retrieval_rows(results, variants, conditions)
    summary = {"n_demo_frames": len(demos), "action_error_units": "m (camera-frame relative translation)"}
    for row in rows:
        ind = row["in-domain"]
        summary[f"{row['variant']}_delta"] = {
            c: (row[c] / ind - 1.0 if ind > 0 else None) for c in conditions if c != "in-domain"}
    return ExperimentReport("retrieval", seed,
                            {"harness": _persisted(hcfg), "n_demos": n_demos, "n_eval": n_eval},
                            rows, summary, {"total": time.perf_counter() - t0})


def crop_size_sweep(hcfg: HarnessConfig, sizes=(80, 120, 160, 200, 240), n_demos=200, n_eval=100, seed=0):
    """Retrieval error as a function of crop size; renders are shared across sizes."""
    if not sizes:
        raise ValueError("sizes must be non-empty")
    t0 = time.perf_counter()
    variants = [Variant(f"kappa={k}", kappa=int(k), overlay=hcfg.alignment.overlay_enabled) for k in sizes]
    demos, queries = build_states(hcfg, n_demos, n_eval, seed)
    results = _run_retrieval(hcfg, demos, queries, variants)
    rows = _retrieval_rows(results, variants, list(queries))
    for row, k in zip(rows, sizes):
        row["kappa"] = int(k)
    return ExperimentReport("crop-size", seed,
                            {"harness": _persisted(hcfg), "sizes": [int(k) for k in sizes],
                             "n_demos": n_demos, "n_eval": n_eval},
                            rows, {}, {"total": time.perf_counter() - t0})


def calibration_robustness(hcfg: HarnessConfig, pixel_jitter=5.0, proprio_noise=0.005,
                           n_demos=200, n_eval=100, seed=0) -> ExperimentReport:
    """Aligned retrieval with the crop center and proprio perturbed for demos and queries alike."""
    if pixel_jitter < 0 or proprio_noise < 0:
        raise ValueError("jitter and noise must be non-negative")
    t0 = time.perf_counter()
    k, ov = hcfg.alignment.kappa, hcfg.alignment.overlay_enabled
    variants = [Variant("aligned", kappa=k, overlay=ov)]
    if pixel_jitter > 0 or proprio_noise > 0:
        pert = Perturbation(float(pixel_jitter), float(proprio_noise), int(seed))
        variants.append(Variant("aligned-jittered", kappa=k, overlay=ov, perturbation=pert))
    demos, queries = build_states(hcfg, n_demos, n_eval, seed)
    results = _run_retrieval(hcfg, demos, queries, variants)
    rows = _retrieval_rows(results, variants, list(queries))
    for row, v in zip(rows, variants):
        p = v.perturbation
        row["pixel_jitter"] = p.pixel_jitter if p else 0.0
        row["proprio_noise"] = p.proprio_noise if p else 0.0
    summary = {}
    if len(rows) == 2:
        summary["ood_ratio_jittered_over_clean"] = rows[1]["ood_mean"] / rows[0]["ood_mean"]
    return ExperimentReport("calibration", seed,
                            {"harness": _persisted(hcfg), "pixel_jitter": pixel_jitter,
                             "proprio_noise": proprio_noise, "n_demos": n_demos, "n_eval": n_eval},
                            rows, summary, {"total": time.perf_counter() - t0})


def motion_encoding_experiment(hcfg: HarnessConfig, n_demos=200, n_eval=100, seed=0) -> ExperimentReport:
    """Hidden robot, height-only proprio: TCP-centric vs object-centric vs no crop."""
    t0 = time.perf_counter()
    k = hcfg.alignment.kappa
    variants = [Variant("tcp-crop", crop="tcp", kappa=k, overlay=False, proprio="z"),
                Variant("object-crop", crop="object", kappa=k, overlay=False, proprio="z"),
                Variant("no-crop", crop="none", overlay=False, proprio="z")]
    demos, queries = build_states(hcfg, n_demos, n_eval, seed, families=(), style="invisible")
    results = _run_retrieval(hcfg, demos, queries, variants)
    rows = _retrieval_rows(results, variants, ["in-domain"])
    return ExperimentReport("motion-encoding", seed,
                            {"harness": _persisted(hcfg), "n_demos": n_demos, "n_eval": n_eval},
                            rows, {}, {"total": time.perf_counter() - t0})


def random_conjugate(rng, general=True) -> Pose:
    """A random rigid transform; ``general=False`` keeps gravity vertical (yaw + planar shift)."""
    if general:
        return Pose(random_rotation(rng), rng.uniform(-1.0, 1.0, size=3))
    return _conjugate_transform(rng, np.zeros(3))


# ---------------------------------------------------------------- export

def export_dataset(hcfg: HarnessConfig, out_dir, n_episodes=4, seed=0, camera_id="cam0") -> DatasetManifest:
    """Render synthetic demonstrations into the on-disk manifest layout.

    Actions are 10-vectors: world translation (3), relative rotation as 6D
    (always identity here) and the gripper command (1 open, 0 close).
    """
    out = Path(out_dir)
    calib = hcfg.camera()
    trajs = []
    for i in range(n_episodes):
        tid = f"{i:03d}"
        states = sample_episode(hcfg, seed, f"demo-{i}")
        (out / "images" / tid).mkdir(parents=True, exist_ok=True)
        frames = []
        for st in states:
            rel = f"images/{tid}/{st.frame:06d}.png"
            write_png(out / rel, render_scene(st.scene, st.calib, st.ee_pose))
            action = np.concatenate([st.action_world[:3], [1.0, 0.0, 0.0, 0.0, 1.0, 0.0], st.action_world[3:]])
            frames.append(FrameRecord(st.frame, rel, st.ee_pose, st.gripper_width, action))
        trajs.append(TrajectoryManifest(tid, camera_id, tuple(frames)))
    a = hcfg.alignment
    meta = {"source": "synthetic", "seed": int(seed), "gripper_open": a.gripper_open_ref,
            "gripper_close": a.gripper_close_ref, "z_table": float(hcfg.workspace_center[2])}
    ds = DatasetManifest(out, {camera_id: calib}, tuple(trajs), meta)
    save_manifest(ds, out)
    return ds
