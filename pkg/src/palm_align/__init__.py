"""Perception alignment for manipulation datasets, plus a synthetic invariance harness."""

from .align import AlignedObservation, AlignmentConfig, align_observation, align_proprio, align_visual
from .geometry import CameraCalib, CameraIntrinsics, Pose, project_point, rot_from_6d, rot_to_6d, unproject_to_plane

__all__ = [
    "AlignedObservation",
    "AlignmentConfig",
    "CameraCalib",
    "CameraIntrinsics",
    "Pose",
    "align_observation",
    "align_proprio",
    "align_visual",
    "project_point",
    "rot_from_6d",
    "rot_to_6d",
    "unproject_to_plane",
]
