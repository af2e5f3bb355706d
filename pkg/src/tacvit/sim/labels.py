"""Contact labels: pose sampling and the pose -> force mapping."""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass

import numpy as np

LABEL_FIELDS = ("x", "y", "z", "Rx", "Ry", "Fx", "Fy", "Fz")
TARGETS = ("z", "Rx", "Ry", "Fx", "Fy", "Fz")
TARGET_UNITS = ("mm", "deg", "deg", "N", "N", "N")
TARGET_SLICE = slice(2, 8)

POSE_RANGES = {"x": (-2.0, 2.0), "y": (-2.0, 2.0), "z": (0.0, 4.0), "Rx": (-20.0, 20.0), "Ry": (-20.0, 20.0)}
FORCE_RANGES = {"Fx": (-3.0, 3.0), "Fy": (-3.0, 3.0), "Fz": (0.0, 10.0)}
RANGES = {**POSE_RANGES, **FORCE_RANGES}

DEFAULT_STIFFNESS = 2.5  # N/mm; z = 4 mm flat contact gives Fz = 10 N
FRICTION = 0.3  # Fx reaches 3 N at x = 2 mm, Fz = 10 N


@dataclass(frozen=True)
class ContactLabel:
    x: float
    y: float
    z: float
    Rx: float
    Ry: float
    Fx: float = 0.0
    Fy: float = 0.0
    Fz: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    def targets(self) -> np.ndarray:
        return self.as_array()[TARGET_SLICE]

    def in_range(self, tol: float = 1e-9) -> bool:
        return all(RANGES[k][0] - tol <= getattr(self, k) <= RANGES[k][1] + tol for k in LABEL_FIELDS)

    @classmethod
    def from_pose(cls, x, y, z, Rx, Ry, stiffness: float = DEFAULT_STIFFNESS) -> "ContactLabel":
        return cls(float(x), float(y), float(z), float(Rx), float(Ry), *force_model(x, y, z, Rx, Ry, stiffness))


def force_model(x, y, z, Rx, Ry, stiffness=DEFAULT_STIFFNESS) -> tuple[float, float, float]:
    """Contact forces in N for a pose (mm, degrees).

    ``stiffness`` may be a float or anything with a ``skin_stiffness`` attribute.
    Normal force grows linearly with depth and drops by up to 10% with tilt;
    tangential forces follow a Coulomb-like ``FRICTION * Fz * (shear / 2 mm)``.
    """
    k = getattr(stiffness, "skin_stiffness", stiffness)
    tilt = math.cos(math.radians(Rx)) * math.cos(math.radians(Ry))
    fz = min(max(k * z * (1.0 + 0.1 * tilt - 0.1), 0.0), 10.0)
    fx = FRICTION * fz * (x / 2.0)
    fy = FRICTION * fz * (y / 2.0)
    return fx, fy, fz


def sample_labels(n: int, seed: int, stiffness=DEFAULT_STIFFNESS) -> list[ContactLabel]:
    """``n`` iid uniform poses over the contact ranges, with derived forces."""
    if n < 1:
        raise ValueError(f"sample_labels needs n >= 1, got {n}")
    rng = np.random.default_rng(seed)
    lo = np.array([POSE_RANGES[k][0] for k in ("x", "y", "z", "Rx", "Ry")])
    hi = np.array([POSE_RANGES[k][1] for k in ("x", "y", "z", "Rx", "Ry")])
    poses = rng.uniform(lo, hi, size=(n, 5))
    return [ContactLabel.from_pose(*row, stiffness=stiffness) for row in poses]


def labels_to_array(labels) -> np.ndarray:
    return np.array([lab.as_array() for lab in labels], dtype=np.float64).reshape(-1, len(LABEL_FIELDS))
