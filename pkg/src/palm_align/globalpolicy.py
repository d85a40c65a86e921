"""Analytical coarse reach policy: segmentation centroid -> table-plane target."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraCalib, unproject_to_plane

DEFAULT_RADIUS = 0.02


class EmptyMask(ValueError):
    pass


@dataclass(frozen=True)
class ReachTarget:
    x: float
    y: float
    sample_radius: float = DEFAULT_RADIUS

    def __post_init__(self):
        if self.sample_radius < 0:
            raise ValueError("sample_radius must be non-negative")


def mask_centroid(mask) -> np.ndarray:
    """Mean ``(u, v)`` of the set pixels of a 2D mask (a 3-channel mask counts any channel)."""
    m = np.asarray(mask)
    if m.ndim == 3:
        m = m.any(axis=2)
    vs, us = np.nonzero(m)
    if us.size == 0:
        raise EmptyMask("segmentation mask has no set pixels")
    return np.array([us.mean(), vs.mean()])


def estimate_object_xy(seg, calib: CameraCalib, z_table: float):
    """Object ``(x, y)`` from either a mask or a precomputed centroid pixel."""
    seg = np.asarray(seg)
    px = seg.astype(float) if seg.shape == (2,) else mask_centroid(seg)
    p = unproject_to_plane(calib, px, z_table)
    return float(p[0]), float(p[1])


def sample_reach_target(rng, x_o, y_o, radius=DEFAULT_RADIUS):
    """Uniform sample in the disk of ``radius`` around the object; translation only."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if radius == 0:
        return float(x_o), float(y_o)
    r = radius * np.sqrt(rng.random())
    a = rng.uniform(0.0, 2 * np.pi)
    return float(x_o + r * np.cos(a)), float(y_o + r * np.sin(a))


def global_reach(seg, calib, z_table, rng, radius=DEFAULT_RADIUS) -> ReachTarget:
    x_o, y_o = estimate_object_xy(seg, calib, z_table)
    x, y = sample_reach_target(rng, x_o, y_o, radius)
    return ReachTarget(x, y, radius)
