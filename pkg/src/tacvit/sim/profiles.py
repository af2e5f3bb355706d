"""Per-sensor nuisance parameters.

Geometry is given in pixels at the 128 x 128 reference resolution and scaled
when rendering at other sizes. Positions inside the image (glare centre) are
normalised to [-1, 1].
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import ConfigError
from .labels import DEFAULT_STIFFNESS

REFERENCE_SIZE = 128


@dataclass(frozen=True)
class SensorProfile:
    sensor_id: str
    marker_rows: int = 11
    marker_cols: int = 11
    marker_spacing: float = 10.0
    marker_radius: float = 2.6
    marker_level: float = 0.85       # marker brightness; lower = worn pins
    illum_tl: float = 1.0            # corner brightness gains, bilinear in between
    illum_tr: float = 1.0
    illum_bl: float = 1.0
    illum_br: float = 1.0
    glare_x: float = 0.0
    glare_y: float = 0.0
    glare_radius: float = 0.3
    glare_intensity: float = 0.0
    lens_warp: float = 0.0           # radial distortion k in p' = p (1 + k r^2)
    grid_rotation: float = 0.0       # degrees
    jitter_seed: int = 0
    jitter_px: float = 0.0           # std of the fixed per-marker offsets
    skin_stiffness: float = DEFAULT_STIFFNESS
    background_level: float = 0.12

    def validate(self) -> "SensorProfile":
        gains = (self.illum_tl, self.illum_tr, self.illum_bl, self.illum_br)
        if not all(0.0 < g <= 2.0 for g in gains):
            raise ConfigError(f"{self.sensor_id}: brightness gains must lie in (0, 2], got {gains}")
        if not (self.marker_rows >= 1 and self.marker_cols >= 1 and self.marker_spacing > 0 and self.marker_radius > 0):
            raise ConfigError(f"{self.sensor_id}: invalid marker grid")
        if abs(self.lens_warp) >= 0.3:
            raise ConfigError(f"{self.sensor_id}: |lens_warp| must be < 0.3 to keep markers in frame")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SensorProfile":
        out = {"sensor_id": str(d["sensor_id"])}
        for f in fields(cls)[1:]:
            if f.name in d:
                out[f.name] = _cast(f.default, d[f.name])
        return cls(**out)


def _cast(template, value):
    if isinstance(template, bool):
        return str(value).lower() in ("true", "1")
    if isinstance(template, int):
        return int(value)
    if isinstance(template, float):
        return float(value)
    return str(value)


def identity_profile(sensor_id: str = "identity") -> SensorProfile:
    """No illumination gradient, glare, warp or jitter."""
    return SensorProfile(sensor_id)


# Five reference sensors spanning the variation axes seen across hand-built
# TacTip fingertips: uneven LEDs, glare spots, lens distortion, pin wear and
# assembly misalignment.
DEFAULT_PROFILES: dict[str, SensorProfile] = {
    "sensor1": SensorProfile("sensor1", illum_tl=1.15, illum_tr=0.95, illum_bl=0.9, illum_br=0.8,
                             glare_x=0.35, glare_y=-0.3, glare_radius=0.25, glare_intensity=0.25,
                             lens_warp=0.06, grid_rotation=2.0, jitter_seed=101, jitter_px=0.6,
                             background_level=0.10),
    "sensor2": SensorProfile("sensor2", illum_tl=0.85, illum_tr=1.1, illum_bl=1.0, illum_br=1.05,
                             glare_x=-0.4, glare_y=0.2, glare_radius=0.3, glare_intensity=0.15,
                             lens_warp=-0.04, grid_rotation=-1.5, jitter_seed=202, jitter_px=0.5,
                             marker_radius=2.4, background_level=0.14),
    "sensor3": SensorProfile("sensor3", illum_tl=1.0, illum_tr=1.0, illum_bl=1.2, illum_br=1.1,
                             glare_x=0.0, glare_y=0.45, glare_radius=0.2, glare_intensity=0.3,
                             lens_warp=0.02, grid_rotation=0.5, jitter_seed=303, jitter_px=0.7,
                             marker_level=0.75, background_level=0.12),
    "sensor4": SensorProfile("sensor4", illum_tl=0.9, illum_tr=0.85, illum_bl=1.1, illum_br=1.2,
                             glare_x=-0.2, glare_y=-0.4, glare_radius=0.35, glare_intensity=0.1,
                             lens_warp=0.09, grid_rotation=-3.0, jitter_seed=404, jitter_px=0.4,
                             marker_radius=2.9, background_level=0.08),
    "sensor5": SensorProfile("sensor5", illum_tl=1.2, illum_tr=1.15, illum_bl=0.8, illum_br=0.9,
                             glare_x=0.25, glare_y=0.3, glare_radius=0.28, glare_intensity=0.35,
                             lens_warp=-0.07, grid_rotation=3.5, jitter_seed=505, jitter_px=0.8,
                             marker_level=0.95, background_level=0.16),
}


def default_profiles(n: int) -> list[SensorProfile]:
    """First ``n`` reference sensors; beyond five, extra sensors are drawn at random."""
    if n < 1:
        raise ConfigError(f"need at least one sensor, got {n}")
    out = list(DEFAULT_PROFILES.values())[:n]
    for i in range(len(out), n):
        out.append(random_profile(np.random.default_rng([7919, i]), f"sensor{i + 1}"))
    return out


def random_profile(rng: np.random.Generator, sensor_id: str) -> SensorProfile:
    """A profile drawn from ranges that cover the reference sensors."""
    u = rng.uniform
    return SensorProfile(
        sensor_id,
        marker_radius=float(u(2.2, 3.1)),
        marker_level=float(u(0.7, 1.0)),
        illum_tl=float(u(0.75, 1.25)), illum_tr=float(u(0.75, 1.25)),
        illum_bl=float(u(0.75, 1.25)), illum_br=float(u(0.75, 1.25)),
        glare_x=float(u(-0.5, 0.5)), glare_y=float(u(-0.5, 0.5)),
        glare_radius=float(u(0.15, 0.4)), glare_intensity=float(u(0.0, 0.4)),
        lens_warp=float(u(-0.1, 0.1)), grid_rotation=float(u(-4.0, 4.0)),
        jitter_seed=int(rng.integers(1_000_000, 2**31 - 1)), jitter_px=float(u(0.3, 0.9)),
        background_level=float(u(0.06, 0.18)),
    )
