"""8-bit RGB image primitives.

Images are ``numpy.uint8`` arrays of shape ``(height, width, 3)``, row-major
with the origin at the top-left pixel. Every routine here is deterministic and
bit-exact: interpolation is done in float64 and rounded half away from zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .geometry import (
    CameraCalib,
    NonPositiveDepth,
    Pose,
    project_camera_points,
    round_half_away,
    world_to_camera,
)

RED = (255, 0, 0)
GREEN = (0, 255, 0)
BLUE = (0, 0, 255)
AXIS_COLORS = (RED, GREEN, BLUE)

_NEAR = 1e-6


class DimensionMismatch(ValueError):
    pass


def check_image(img):
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected uint8 (H, W, 3) image, got {img.dtype} {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    return img


def _to_uint8(x):
    return np.clip(round_half_away(x), 0, 255).astype(np.uint8)


def read_png(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_png(path, img):
    # no metadata chunks so identical buffers give identical files
    Image.fromarray(check_image(img), mode="RGB").save(path, format="PNG", optimize=False)


@dataclass(frozen=True)
class CropSpec:
    kappa: int = 200
    pad_policy: str = "constant-black"

    def __post_init__(self):
        if int(self.kappa) != self.kappa or self.kappa < 8:
            raise ValueError("kappa must be an integer >= 8")
        if self.pad_policy != "constant-black":
            raise ValueError(f"unsupported pad policy {self.pad_policy!r}")

    def check_for(self, width, height):
        if self.kappa > 2 * min(width, height):
            raise ValueError(f"kappa {self.kappa} exceeds twice the image side")


@dataclass(frozen=True)
class OverlaySpec:
    axis_length: float = 0.05
    line_width: int = 2
    colors: tuple = AXIS_COLORS

    def __post_init__(self):
        if not self.axis_length > 0:
            raise ValueError("axis_length must be positive")
        if int(self.line_width) != self.line_width or self.line_width < 1:
            raise ValueError("line_width must be an integer >= 1")
        if len(self.colors) != 3:
            raise ValueError("need one color per axis")


def crop_origin(center, kappa, width, height):
    """Integer top-left corner of the crop and whether the center had to be clamped."""
    c = np.asarray(center, dtype=float)
    if c.shape != (2,) or not np.all(np.isfinite(c)):
        raise ValueError("crop center must be a finite (u, v) pair")
    cu, cv = (int(x) for x in round_half_away(c))
    u = min(max(cu, 0), width - 1)
    v = min(max(cv, 0), height - 1)
    clamped = (u, v) != (cu, cv)
    return u - kappa // 2, v - kappa // 2, clamped


def center_crop(img, center, spec: CropSpec):
    """Fixed-size crop around ``center`` with black padding.

    Returns ``(crop, clamped)``; ``clamped`` is true when the rounded center
    fell outside the image and was moved onto its border.
    """
    img = check_image(img)
    h, w = img.shape[:2]
    k = int(spec.kappa)
    spec.check_for(w, h)
    x0, y0, clamped = crop_origin(center, k, w, h)
    out = np.zeros((k, k, 3), dtype=np.uint8)
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + k, w), min(y0 + k, h)
    if sx1 > sx0 and sy1 > sy0:
        out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = img[sy0:sy1, sx0:sx1]
    return out, clamped


def _clip_segment(p0, p1, xmin, ymin, xmax, ymax):
    """Liang-Barsky clip; returns the clipped endpoints or None."""
    x0, y0 = p0
    dx, dy = p1[0] - x0, p1[1] - y0
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x0 - xmin), (dx, xmax - x0), (-dy, y0 - ymin), (dy, ymax - y0)):
        if p == 0:
            if q < 0:
                return None
            continue
        t = q / p
        if p < 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
        if t0 > t1:
            return None
    return (x0 + t0 * dx, y0 + t0 * dy), (x0 + t1 * dx, y0 + t1 * dy)


def draw_line(img, p0, p1, color, width=1):
    """Draw a segment with a square brush in place; endpoints are continuous pixels."""
    h, w = img.shape[:2]
    m = width + 1
    clipped = _clip_segment(p0, p1, -m, -m, w - 1 + m, h - 1 + m)
    if clipped is None:
        return img
    (x0, y0), (x1, y1) = round_half_away(clipped[0]), round_half_away(clipped[1])
    n = int(max(abs(x1 - x0), abs(y1 - y0)))
    t = np.arange(n + 1) / max(n, 1)
    xs = round_half_away(x0 + t * (x1 - x0)).astype(int)
    ys = round_half_away(y0 + t * (y1 - y0)).astype(int)
    lo = -((width - 1) // 2)
    for oy in range(lo, lo + width):
        for ox in range(lo, lo + width):
            x, y = xs + ox, ys + oy
            ok = (x >= 0) & (x < w) & (y >= 0) & (y < h)
            img[y[ok], x[ok]] = color
    return img


def _clip_near(a, b):
    """Clip a camera-frame segment to the region in front of the camera."""
    if a[2] >= _NEAR and b[2] >= _NEAR:
        return a, b
    if a[2] < _NEAR and b[2] < _NEAR:
        return None
    t = (_NEAR - a[2]) / (b[2] - a[2])
    m = a + t * (b - a)
    return (m, b) if a[2] < _NEAR else (a, m)


def axis_segments(calib: CameraCalib, ee_pose: Pose, axis_length):
    """Pixel endpoints of the three end-effector axes; a missing axis is ``None``."""
    origin = world_to_camera(calib, ee_pose.translation)
    if origin[2] <= _NEAR:
        raise NonPositiveDepth("end-effector origin is not in front of the camera")
    tips = world_to_camera(calib, ee_pose.translation + axis_length * ee_pose.rotation.T)
    segs = []
    for tip in tips:
        seg = _clip_near(origin, tip)
        if seg is None:
            segs.append(None)
        else:
            segs.append(project_camera_points(calib, np.array(seg)))
    return segs


def draw_axes_overlay(img, calib: CameraCalib, ee_pose: Pose, spec: OverlaySpec, offset=(0.0, 0.0)):
    """Return a copy of ``img`` with the x/y/z end-effector axes drawn in red/green/blue.

    ``offset`` is subtracted from projected pixel coordinates, which lets the
    overlay be drawn into a crop whose top-left corner sits at ``offset``.
    """
    out = check_image(img).copy()
    off = np.asarray(offset, dtype=float)
    for seg, color in zip(axis_segments(calib, ee_pose, spec.axis_length), spec.colors):
        if seg is not None:
            draw_line(out, seg[0] - off, seg[1] - off, color, spec.line_width)
    return out


def _bilinear_axis(n_out, n_in):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(img, out_w, out_h):
    """Bilinear resize with half-pixel-center alignment (no antialiasing)."""
    img = check_image(img)
    if out_w < 1 or out_h < 1:
        raise ValueError("output size must be positive")
    h, w = img.shape[:2]
    if (w, h) == (out_w, out_h):
        return img.copy()
    x0, x1, fx = _bilinear_axis(out_w, w)
    y0, y1, fy = _bilinear_axis(out_h, h)
    f = img.astype(np.float64)
    fx = fx[None, :, None]
    top = f[y0][:, x0] * (1 - fx) + f[y0][:, x1] * fx
    bot = f[y1][:, x0] * (1 - fx) + f[y1][:, x1] * fx
    fy = fy[:, None, None]
    return _to_uint8(top * (1 - fy) + bot * fy)


def normalize_homography(H):
    H = np.asarray(H, dtype=float).reshape(3, 3)
    if abs(np.linalg.det(H)) <= 1e-12 or abs(H[2, 2]) <= 1e-12:
        raise ValueError("homography is singular")
    H = H / H[2, 2]
    if abs(np.linalg.det(H)) <= 1e-12:
        raise ValueError("homography is singular")
    return H


def apply_homography(H, pts):
    pts = np.asarray(pts, dtype=float)
    ph = np.concatenate([pts, np.ones(pts.shape[:-1] + (1,))], axis=-1) @ np.asarray(H).T
    return ph[..., :2] / ph[..., 2:3]


def _snap(x, eps=1e-9):
    r = np.round(x)
    return np.where(np.abs(x - r) < eps, r, x)


def warp_perspective(img, H):
    """Warp ``img`` so that source pixel ``p`` lands at ``H p``; black outside the source."""
    img = check_image(img)
    H = normalize_homography(H)
    h, w = img.shape[:2]
    if np.array_equal(H, np.eye(3)):
        return img.copy()
    ys, xs = np.mgrid[0:h, 0:w]
    src = apply_homography(np.linalg.inv(H), np.stack([xs, ys], axis=-1).astype(float))
    sx, sy = _snap(src[..., 0]), _snap(src[..., 1])
    x0, y0 = np.floor(sx).astype(int), np.floor(sy).astype(int)
    ax, ay = sx - x0, sy - y0
    f = img.astype(np.float64)
    acc = np.zeros((h, w, 3))
    for dy, wy in ((0, 1 - ay), (1, ay)):
        for dx, wx in ((0, 1 - ax), (1, ax)):
            xi, yi = x0 + dx, y0 + dy
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            wgt = np.where(ok, wx * wy, 0.0)
            acc += f[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)] * wgt[..., None]
    return _to_uint8(acc)


def alpha_blend(img, overlay, alpha):
    img, overlay = check_image(img), check_image(overlay)
    if img.shape != overlay.shape:
        raise DimensionMismatch(f"{img.shape} vs {overlay.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if alpha == 0.0:
        return img.copy()
    if alpha == 1.0:
        return overlay.copy()
    return _to_uint8((1.0 - alpha) * img.astype(np.float64) + alpha * overlay.astype(np.float64))


def to_gray(img):
    f = check_image(img).astype(np.float64)
    return (f[..., 0] * 0.299 + f[..., 1] * 0.587 + f[..., 2] * 0.114) / 255.0
