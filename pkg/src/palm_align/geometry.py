"""Rigid transforms, pinhole projection and rotation representations.

Conventions
-----------
* Rotations are plain ``(3, 3)`` float arrays, translations ``(3,)`` arrays.
* Cameras follow the usual computer-vision axes: x right, y down, z forward.
* A camera pose is stored as *camera-in-world*. The world->camera extrinsic
  used for projection is its inverse, ``[R_C^T | -R_C^T t_C]``.
* The 6D rotation layout is the first two columns, column-major:
  ``(R11, R21, R31, R12, R22, R32)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-9
FRAMES = ("world", "camera", "robot-base")


class GeometryError(ValueError):
    pass


class NonPositiveDepth(GeometryError):
    pass


class RayParallelToPlane(GeometryError):
    pass


class IntersectionBehindCamera(GeometryError):
    pass


class DegenerateInput(GeometryError):
    pass


class FrameMismatch(GeometryError):
    pass


def is_rotation(R, tol=ORTHO_TOL):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return (np.abs(R.T @ R - np.eye(3)).max() <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol)


def check_rotation(R, tol=ORTHO_TOL):
    R = np.asarray(R, dtype=float)
    if not is_rotation(R, tol):
        raise DegenerateInput("not a proper rotation matrix (R^T R != I or det != 1)")
    return R


def rot_x(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _quat_to_matrix(q):
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_rotation(rng):
    """Uniformly distributed rotation from a normalized 4D Gaussian."""
    q = rng.standard_normal(4)
    while np.linalg.norm(q) < 1e-12:
        q = rng.standard_normal(4)
    return _quat_to_matrix(q)


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping points expressed in the local frame into ``frame``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    frame: str = "world"

    def __post_init__(self):
        R = check_rotation(self.rotation)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise DegenerateInput("translation must be finite")
        if self.frame not in FRAMES:
            raise ValueError(f"unknown frame tag {self.frame!r}")
        R = R.copy()
        t = t.copy()
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls, frame="world"):
        return cls(np.eye(3), np.zeros(3), frame)

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def apply(self, points):
        """Map local points (``(3,)`` or ``(N, 3)``) into ``frame``."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return (self.frame == other.frame
                and np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    __hash__ = None


def compose(a: Pose, b: Pose) -> Pose:
    """``a * b``: apply ``b`` first, then ``a``. ``b`` must be expressed in ``a``'s local frame."""
    if a.frame != b.frame:
        raise FrameMismatch(f"cannot compose poses tagged {a.frame!r} and {b.frame!r}")
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation, a.frame)


def invert(a: Pose) -> Pose:
    Rt = a.rotation.T
    return Pose(Rt, -Rt @ a.translation, a.frame)


def poses_close(a: Pose, b: Pose, tol=1e-9):
    return (a.frame == b.frame
            and np.abs(a.rotation - b.rotation).max() <= tol
            and np.abs(a.translation - b.translation).max() <= tol)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(v) for v in vals):
            raise DegenerateInput("intrinsics must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise DegenerateInput("focal lengths must be positive")

    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraCalib:
    intrinsics: CameraIntrinsics
    pose: Pose  # camera-in-world
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DegenerateInput("image size must be positive")
        k = self.intrinsics
        if not (0 <= k.cx <= self.width and 0 <= k.cy <= self.height):
            raise DegenerateInput("principal point outside the image")

    @property
    def K(self):
        return self.intrinsics.matrix()

    def extrinsic(self):
        """World->camera ``[R | t]`` as a ``(3, 4)`` matrix."""
        Rt = self.pose.rotation.T
        return np.hstack([Rt, (-Rt @ self.pose.translation)[:, None]])

    def projection_matrix(self):
        return self.K @ self.extrinsic()

    def with_pose(self, pose: Pose) -> "CameraCalib":
        return CameraCalib(self.intrinsics, pose, self.width, self.height)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-in-world pose at ``eye`` with the optical axis through ``target``."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=float))
    if np.linalg.norm(x) < 1e-9:
        raise DegenerateInput("viewing direction parallel to up vector")
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(np.column_stack([x, y, z]), eye)


def world_to_camera(calib: CameraCalib, points):
    p = np.asarray(points, dtype=float)
    return (p - calib.pose.translation) @ calib.pose.rotation


def project_camera_points(calib: CameraCalib, pc):
    """Pinhole projection of camera-frame points; no depth check."""
    pc = np.asarray(pc, dtype=float)
    k = calib.intrinsics
    z = pc[..., 2]
    return np.stack([k.fx * pc[..., 0] / z + k.cx, k.fy * pc[..., 1] / z + k.cy], axis=-1)


def project_point(calib: CameraCalib, p_world) -> np.ndarray:
    """Project a world point to continuous pixel coordinates ``(u, v)``."""
    pc = world_to_camera(calib, p_world)
    if pc.shape != (3,) or not np.all(np.isfinite(pc)):
        raise DegenerateInput("expected a finite 3-vector")
    if pc[2] <= 1e-6:
        raise NonPositiveDepth(f"point depth {pc[2]:.6g} m is not in front of the camera")
    return project_camera_points(calib, pc)


def pixel_ray(calib: CameraCalib, px):
    """Unit world-frame direction of the ray through pixel ``px``."""
    k = calib.intrinsics
    u, v = float(px[0]), float(px[1])
    d_cam = np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0])
    d = calib.pose.rotation @ d_cam
    return d / np.linalg.norm(d)


def unproject_to_plane(calib: CameraCalib, px, z_plane: float) -> np.ndarray:
    """Intersect the ray through ``px`` with the horizontal plane ``z = z_plane``."""
    d = pixel_ray(calib, px)
    if abs(d[2]) <= 1e-9:
        raise RayParallelToPlane("pixel ray is parallel to the plane")
    origin = calib.pose.translation
    s = (z_plane - origin[2]) / d[2]
    if s <= 0:
        raise IntersectionBehindCamera("plane intersection lies behind the camera")
    p = origin + s * d
    p[2] = z_plane
    return p


def rot_to_6d(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    return np.concatenate([R[:, 0], R[:, 1]])


def rot_from_6d(r) -> np.ndarray:
    """Gram-Schmidt recovery of a rotation matrix from two (possibly unnormalized) columns."""
    r = np.asarray(r, dtype=float).reshape(6)
    a1, a2 = r[:3], r[3:]
    n1 = np.linalg.norm(a1)
    if n1 <= 1e-9 or np.linalg.norm(np.cross(a1, a2)) <= 1e-9:
        raise DegenerateInput("6D rotation columns are degenerate or parallel")
    b1 = a1 / n1
    b2 = a2 - (a2 @ b1) * b1
    b2 /= np.linalg.norm(b2)
    b3 = np.cross(b1, b2)
    return np.column_stack([b1, b2, b3])


def camera_frame_rotation(camera_pose: Pose, R_H) -> np.ndarray:
    """End-effector rotation re-expressed in the camera frame, ``R_C^T R_H``."""
    return camera_pose.rotation.T @ np.asarray(R_H, dtype=float)


def round_half_away(x):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)
