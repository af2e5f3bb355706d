"""Marker-array tactile image rendering.

Markers sit on a square grid clipped to a circular sensing disk. A contact
moves them through three smooth fields (all in reference pixels):

* radial bulge, proportional to depth z and skewed by the tilt direction
* tilt shift towards the low side of the tilted surface, proportional to Rx, Ry
* uniform-ish shear proportional to the tangential displacement (x, y)

Sensor nuisances (fixed marker jitter, grid rotation, lens warp, illumination
gradient, glare, background level) are then applied.
"""

from __future__ import annotations

import math

import numpy as np

from ..numcore import Tensor
from .labels import ContactLabel
from .profiles import REFERENCE_SIZE, SensorProfile

DISK_RADIUS = 60.0
BULGE_PX = 7.0
TILT_PX = 8.0
SHEAR_PX = 3.0
_TILT_NORM = math.sin(math.radians(20.0))
OUTSIDE_LEVEL = 0.02


def rest_positions(profile: SensorProfile) -> np.ndarray:
    """Undeformed marker centres relative to the image centre, (M, 2) as (col, row) offsets."""
    cols = (np.arange(profile.marker_cols) - (profile.marker_cols - 1) / 2.0) * profile.marker_spacing
    rows = (np.arange(profile.marker_rows) - (profile.marker_rows - 1) / 2.0) * profile.marker_spacing
    gx, gy = np.meshgrid(cols, rows)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    pts = pts[np.hypot(pts[:, 0], pts[:, 1]) <= DISK_RADIUS - 4.0]
    if profile.jitter_px > 0:
        rng = np.random.default_rng(profile.jitter_seed)
        pts = pts + rng.normal(0.0, profile.jitter_px, size=pts.shape)
    if profile.grid_rotation:
        a = math.radians(profile.grid_rotation)
        rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
        pts = pts @ rot.T
    return pts


def displacement_field(label: ContactLabel, rest: np.ndarray) -> np.ndarray:
    """Contact-induced marker displacement (reference px) at each rest position."""
    u = rest / DISK_RADIUS
    r2 = (u * u).sum(axis=1, keepdims=True)
    g = np.array([math.sin(math.radians(label.Ry)), -math.sin(math.radians(label.Rx))]) / _TILT_NORM
    depth = label.z / 4.0
    bulge = BULGE_PX * depth * u * (1.0 + 0.4 * (u @ g)[:, None])
    tilt = TILT_PX * g * (1.0 - r2) * (0.3 + 0.7 * depth)
    shear = SHEAR_PX * np.array([label.x, label.y]) / 2.0 * (1.0 - 0.6 * r2)
    return bulge + tilt + shear


def _warp(pts: np.ndarray, k: float) -> np.ndarray:
    if not k:
        return pts
    r2 = ((pts / DISK_RADIUS) ** 2).sum(axis=1, keepdims=True)
    return pts * (1.0 + k * r2)


def marker_positions(label: ContactLabel, profile: SensorProfile) -> np.ndarray:
    rest = rest_positions(profile)
    return _warp(rest + displacement_field(label, rest), profile.lens_warp)


def _illumination(profile: SensorProfile, size: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, size)
    s, v = np.meshgrid(t, t)
    return (profile.illum_tl * (1 - s) * (1 - v) + profile.illum_tr * s * (1 - v)
            + profile.illum_bl * (1 - s) * v + profile.illum_br * s * v)


def render_array(label: ContactLabel, profile: SensorProfile, image_size: int = REFERENCE_SIZE) -> np.ndarray:
    """(H, W) float64 image in [0, 1]."""
    size = int(image_size)
    f = size / REFERENCE_SIZE
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    rad = np.hypot(xx - c, yy - c) / f
    disk = np.clip(DISK_RADIUS + 0.5 - rad, 0.0, 1.0)
    img = OUTSIDE_LEVEL + (profile.background_level - OUTSIDE_LEVEL) * disk

    markers = np.zeros((size, size))
    rpx = profile.marker_radius * f
    reach = int(math.ceil(rpx + 1.5))
    for px, py in marker_positions(label, profile) * f + c:
        x0, x1 = max(int(px) - reach, 0), min(int(px) + reach + 2, size)
        y0, y1 = max(int(py) - reach, 0), min(int(py) + reach + 2, size)
        if x0 >= x1 or y0 >= y1:
            continue
        d = np.hypot(xx[y0:y1, x0:x1] - px, yy[y0:y1, x0:x1] - py)
        np.maximum(markers[y0:y1, x0:x1], np.clip(rpx + 0.5 - d, 0.0, 1.0), out=markers[y0:y1, x0:x1])
    img = img + profile.marker_level * markers * disk

    img = img * _illumination(profile, size)
    if profile.glare_intensity:
        nx, ny = (xx - c) / c, (yy - c) / c
        d2 = (nx - profile.glare_x) ** 2 + (ny - profile.glare_y) ** 2
        img = img + profile.glare_intensity * np.exp(-d2 / (2.0 * profile.glare_radius ** 2)) * disk
    return np.clip(img, 0.0, 1.0)


def render(label: ContactLabel, profile: SensorProfile, image_size: int = REFERENCE_SIZE) -> Tensor:
    """Grayscale tactile image as a (1, H, W) tensor with values in [0, 1]."""
    return Tensor(render_array(label, profile, image_size)[None])


def quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
