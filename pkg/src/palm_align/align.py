"""Visual and proprioceptive alignment of a single observation."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .geometry import (
    CameraCalib,
    Pose,
    camera_frame_rotation,
    project_point,
    rot_to_6d,
)
from .imaging import (
    CropSpec,
    OverlaySpec,
    center_crop,
    crop_origin,
    draw_axes_overlay,
    resize_bilinear,
)


class InvalidReference(ValueError):
    pass


@dataclass(frozen=True)
class AlignmentConfig:
    kappa: int = 200
    output_size: int = 84
    overlay: OverlaySpec = field(default_factory=OverlaySpec)
    overlay_enabled: bool = True
    gripper_open_ref: float = 0.08
    gripper_close_ref: float = 0.0
    seed: int = 0

    def __post_init__(self):
        CropSpec(self.kappa)
        if self.output_size < 8:
            raise ValueError("output_size must be >= 8")
        if self.gripper_open_ref == self.gripper_close_ref:
            raise InvalidReference("gripper open and close references must differ")

    @property
    def crop(self):
        return CropSpec(self.kappa)

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["overlay"] = {
            "axis_length": self.overlay.axis_length,
            "line_width": self.overlay.line_width,
            "colors": [list(c) for c in self.overlay.colors],
        }
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        ov = d.pop("overlay", None)
        if ov is not None:
            ov = dict(ov)
            if "colors" in ov:
                ov["colors"] = tuple(tuple(int(v) for v in c) for c in ov["colors"])
            d["overlay"] = OverlaySpec(**ov)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown alignment config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class ProprioAligned:
    r6d: np.ndarray
    z: float
    g: int

    def vector(self):
        """The 8 aligned scalars ``(r1..r6, z, g)``."""
        return np.concatenate([self.r6d, [self.z, float(self.g)]])


@dataclass(frozen=True)
class AlignedObservation:
    image: np.ndarray
    proprio: ProprioAligned
    clamped: bool


def binarize_gripper(width, open_ref, close_ref):
    """1 (open) if ``width`` is strictly nearer ``open_ref``, else 0 (closed)."""
    if open_ref == close_ref:
        raise InvalidReference("gripper open and close references must differ")
    return int(abs(width - open_ref) < abs(width - close_ref))


def align_visual(img, calib: CameraCalib, ee_pose: Pose, cfg: AlignmentConfig,
                 pixel_offset=(0.0, 0.0), center=None):
    """TCP-centric crop, optional axis overlay, then resize to ``cfg.output_size``.

    ``pixel_offset`` perturbs the projected crop center (calibration jitter).
    ``center`` overrides the crop center entirely, e.g. for object-centric crops.
    Returns ``(image, clamped)``.
    """
    if center is None:
        center = project_point(calib, ee_pose.translation)
    center = np.asarray(center, dtype=float) + np.asarray(pixel_offset, dtype=float)
    crop, clamped = center_crop(img, center, cfg.crop)
    if cfg.overlay_enabled:
        h, w = img.shape[:2]
        x0, y0, _ = crop_origin(center, cfg.kappa, w, h)
        # the overlay follows the jittered projection, like the crop does
        shift = np.asarray(pixel_offset, dtype=float)
        crop = draw_axes_overlay(crop, calib, ee_pose, cfg.overlay, offset=(x0 - shift[0], y0 - shift[1]))
    return resize_bilinear(crop, cfg.output_size, cfg.output_size), clamped


def align_proprio(ee_pose: Pose, gripper_width, calib: CameraCalib, cfg: AlignmentConfig) -> ProprioAligned:
    """Camera-frame 6D rotation, world height and binary gripper state."""
    r6d = rot_to_6d(camera_frame_rotation(calib.pose, ee_pose.rotation))
    g = binarize_gripper(gripper_width, cfg.gripper_open_ref, cfg.gripper_close_ref)
    return ProprioAligned(r6d, float(ee_pose.translation[2]), g)


def align_observation(img, calib, ee_pose, gripper_width, cfg, pixel_offset=(0.0, 0.0)):
    image, clamped = align_visual(img, calib, ee_pose, cfg, pixel_offset=pixel_offset)
    return AlignedObservation(image, align_proprio(ee_pose, gripper_width, calib, cfg), clamped)
