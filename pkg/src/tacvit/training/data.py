"""Label normalisation, per-sensor splits and in-memory sample sets."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..errors import ConfigError, EmptyInputError
from ..sim.dataset import SensorData, prepare_images
from ..sim.labels import RANGES, TARGET_SLICE, TARGETS


@dataclass(frozen=True)
class LabelNormalizer:
    """Affine map from physical target units to [-1, 1] using fixed ranges."""

    offset: np.ndarray
    scale: np.ndarray

    @classmethod
    def from_ranges(cls, ranges: Mapping[str, tuple[float, float]] = RANGES, targets=TARGETS) -> "LabelNormalizer":
        lo = np.array([ranges[t][0] for t in targets], dtype=np.float64)
        hi = np.array([ranges[t][1] for t in targets], dtype=np.float64)
        return cls((lo + hi) / 2.0, (hi - lo) / 2.0)

    @classmethod
    def identity(cls, dim: int = len(TARGETS)) -> "LabelNormalizer":
        return cls(np.zeros(dim), np.ones(dim))

    def normalize(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.offset) / self.scale

    def denormalize(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=np.float64) * self.scale + self.offset


def sensor_seed(seed: int, sensor_id: str) -> list[int]:
    return [seed & 0xFFFFFFFF, zlib.crc32(sensor_id.encode())]


def split_counts(n: int, fraction: float) -> tuple[int, int]:
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"split fraction must be in (0, 1), got {fraction}")
    n_train = int(round(n * fraction))
    if n >= 2:
        n_train = min(max(n_train, 1), n - 1)
    return n_train, n - n_train


def split_dataset(datasets: Mapping[str, SensorData | int], fraction: float, seed: int
                  ) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Seeded per-sensor shuffle-and-split; returns sorted index arrays per sensor.

    ``datasets`` maps sensor id to a loaded dataset or just its size. Every
    sensor contributes the same fraction to the training side, and a sensor's
    split depends only on (seed, sensor id, size), so it is identical whichever
    protocol asks for it.
    """
    sizes = {k: (v if isinstance(v, (int, np.integer)) else len(v)) for k, v in datasets.items()}
    if not sizes or sum(sizes.values()) == 0:
        raise EmptyInputError("cannot split an empty dataset")
    train, val = {}, {}
    for sid, n in sizes.items():
        n_train, _ = split_counts(n, fraction)
        perm = np.random.default_rng(sensor_seed(seed, sid)).permutation(n)
        train[sid] = np.sort(perm[:n_train])
        val[sid] = np.sort(perm[n_train:])
    return train, val


@dataclass
class Samples:
    """Model-ready inputs with physical targets and (sensor, index) provenance."""

    images: np.ndarray      # (n, C, H, W)
    targets: np.ndarray     # (n, 6) physical units
    sensors: np.ndarray     # (n,) sensor ids
    indices: np.ndarray     # (n,) sample index within its sensor dataset

    def __len__(self) -> int:
        return len(self.targets)

    def provenance(self) -> set[tuple[str, int]]:
        return {(str(s), int(i)) for s, i in zip(self.sensors, self.indices)}

    def subset(self, rows: np.ndarray) -> "Samples":
        return Samples(self.images[rows], self.targets[rows], self.sensors[rows], self.indices[rows])


class SampleCache:
    """Prepares each sensor's images once for a given model input geometry."""

    def __init__(self, datasets: Mapping[str, SensorData], size: int, channels: int = 1,
                 resize_mode: str = "resize", pixel_norm: str = "center"):
        self.datasets = dict(datasets)
        self.args = (size, channels, resize_mode, pixel_norm)
        self._prepared: dict[str, np.ndarray] = {}

    def images(self, sid: str) -> np.ndarray:
        if sid not in self._prepared:
            size, channels, mode, norm = self.args
            self._prepared[sid] = prepare_images(self.datasets[sid].images, size, channels, mode, norm)
        return self._prepared[sid]

    def gather(self, selection: Mapping[str, np.ndarray]) -> Samples:
        parts = [(sid, np.asarray(idx, dtype=np.int64)) for sid, idx in selection.items() if len(idx)]
        if not parts:
            size, channels = self.args[:2]
            return Samples(np.zeros((0, channels, size, size), np.float32), np.zeros((0, 6)),
                           np.array([], dtype=str), np.array([], dtype=np.int64))
        for sid, idx in parts:
            if sid not in self.datasets:
                raise ConfigError(f"unknown sensor {sid!r}")
        return Samples(
            np.concatenate([self.images(sid)[idx] for sid, idx in parts]),
            np.concatenate([self.datasets[sid].labels[idx][:, TARGET_SLICE] for sid, idx in parts]),
            np.concatenate([np.full(len(idx), sid) for sid, idx in parts]),
            np.concatenate([idx for _, idx in parts]),
        )
