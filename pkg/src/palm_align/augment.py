"""Seeded train-time augmentations: Random Overlay and mild perspective jitter.

Every random draw comes from a stream keyed by
``(seed, trajectory id, frame index, tag)``, so the result of augmenting a frame
never depends on processing order or on how frames are split across workers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .imaging import alpha_blend, read_png, resize_bilinear, warp_perspective

MAX_RESAMPLES = 8


class EmptyPool(ValueError):
    pass


class DegenerateCorners(ValueError):
    pass


@dataclass(frozen=True)
class AugmentConfig:
    overlay_alpha: float = 0.5
    overlay_pool: str | None = None
    overlay_probability: float = 0.5
    perspective_scale: float = 0.05
    perspective_probability: float = 0.5
    enabled: bool = False

    def __post_init__(self):
        for name in ("overlay_alpha", "overlay_probability", "perspective_probability"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.perspective_scale < 0.5:
            raise ValueError("perspective_scale must lie in [0, 0.5)")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown augment config keys: {sorted(unknown)}")
        return cls(**d)


def _key_words(value):
    digest = hashlib.sha256(str(value).encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def derive_rng(seed, traj_id, frame_idx, tag) -> np.random.Generator:
    """Independent generator for one (seed, trajectory, frame, tag) key."""
    seed = int(seed)
    entropy = [seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF]
    entropy += _key_words(traj_id) + [int(frame_idx) & 0xFFFFFFFF] + _key_words(tag)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def homography_from_points(src, dst):
    """Exact homography mapping four source points onto four destination points."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    A = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        A[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        A[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i], b[2 * i + 1] = u, v
    h = np.linalg.solve(A, b)
    return np.append(h, 1.0).reshape(3, 3)


def is_convex_quad(pts):
    pts = np.asarray(pts, dtype=float)
    signs = []
    for i in range(4):
        a, b, c = pts[i], pts[(i + 1) % 4], pts[(i + 2) % 4]
        u, v = b - a, c - b
        signs.append(u[0] * v[1] - u[1] * v[0])
    signs = np.array(signs)
    return bool(np.all(signs > 0) or np.all(signs < 0))


def image_corners(side):
    s = float(side - 1)
    return np.array([[0.0, 0.0], [s, 0.0], [s, s], [0.0, s]])


def sample_perspective(rng, cfg: AugmentConfig, side):
    """Random homography moving each corner by at most ``perspective_scale * side`` per axis."""
    src = image_corners(side)
    if cfg.perspective_scale == 0:
        return np.eye(3)
    reach = cfg.perspective_scale * side
    for _ in range(MAX_RESAMPLES):
        dst = src + rng.uniform(-reach, reach, size=(4, 2))
        if is_convex_quad(dst):
            return homography_from_points(src, dst)
    raise DegenerateCorners(f"no convex corner quad after {MAX_RESAMPLES} draws")


def load_overlay_pool(directory):
    """Distractor images from ``directory``, in lexicographic filename order."""
    if directory is None:
        return []
    paths = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".png")
    return [read_png(p) for p in paths]


def apply_random_overlay(rng, img, cfg: AugmentConfig, pool):
    if cfg.overlay_probability <= 0:
        return img.copy()
    if not pool:
        raise EmptyPool("Random Overlay needs at least one distractor image")
    if rng.random() >= cfg.overlay_probability:
        return img.copy()
    other = pool[int(rng.integers(len(pool)))]
    h, w = img.shape[:2]
    return alpha_blend(img, resize_bilinear(other, w, h), cfg.overlay_alpha)


def apply_random_perspective(rng, img, cfg: AugmentConfig):
    if cfg.perspective_probability <= 0 or rng.random() >= cfg.perspective_probability:
        return img.copy()
    H = sample_perspective(rng, cfg, min(img.shape[:2]))
    return warp_perspective(img, H)


def augment_frame(img, cfg: AugmentConfig, pool, seed, traj_id, frame_idx):
    """Perspective jitter followed by Random Overlay, each from its own keyed stream."""
    if not cfg.enabled:
        return img
    out = apply_random_perspective(derive_rng(seed, traj_id, frame_idx, "perspective"), img, cfg)
    return apply_random_overlay(derive_rng(seed, traj_id, frame_idx, "overlay"), out, cfg, pool)
