"""On-disk datasets: binary PGM images, ``labels.csv`` and a key=value manifest.

Layout of one sensor directory::

    img_000000.pgm ... img_{n-1:06}.pgm
    labels.csv      index,x_mm,y_mm,z_mm,rx_deg,ry_deg,fx_n,fy_n,fz_n
    manifest.txt    key=value header, a line "files:", then "filename,<8 label values>" per sample
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..errors import ConfigError, StorageError
from .labels import LABEL_FIELDS, RANGES, ContactLabel, sample_labels
from .profiles import REFERENCE_SIZE, SensorProfile, random_profile
from .render import quantize, render_array

LABEL_COLUMNS = ("index", "x_mm", "y_mm", "z_mm", "rx_deg", "ry_deg", "fx_n", "fy_n", "fz_n")
MANIFEST = "manifest.txt"
LABELS = "labels.csv"


def image_name(index: int) -> str:
    return f"img_{index:06}.pgm"


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    try:
        Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def read_pgm(path) -> np.ndarray:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise StorageError(f"{path}: truncated PGM header")
        tokens.append(buf[start:pos])
    if tokens[0] != b"P5":
        raise StorageError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise StorageError(f"{path}: only maxval 255 is supported")
    pos += 1
    data = buf[pos:pos + w * h]
    if len(data) != w * h:
        raise StorageError(f"{path}: truncated PGM data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def _fmt(v: float) -> str:
    return repr(float(v))


def write_labels(path, labels: list[ContactLabel]) -> None:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(LABEL_COLUMNS)
    for i, lab in enumerate(labels):
        wr.writerow([i, *(_fmt(v) for v in lab.as_array())])
    try:
        Path(path).write_text(buf.getvalue())
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def read_labels(path) -> np.ndarray:
    """(n, 8) float64 array ordered like ``LABEL_FIELDS``."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    if not rows or tuple(rows[0]) != LABEL_COLUMNS:
        raise StorageError(f"{path}: unexpected header {rows[:1]}")
    body = rows[1:]
    for k, row in enumerate(body):
        if int(row[0]) != k:
            raise StorageError(f"{path}: row {k} has index {row[0]}")
    return np.array([[float(v) for v in row[1:]] for row in body], dtype=np.float64).reshape(-1, 8)


@dataclass
class DatasetManifest:
    sensor_id: str
    count: int
    image_size: int
    seed: int
    profile_mode: str = "fixed"        # fixed | randomized
    profile: SensorProfile | None = None
    files: list[tuple[str, ContactLabel]] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [f"sensor_id={self.sensor_id}", f"count={self.count}", f"image_size={self.image_size}",
                 f"seed={self.seed}", f"profile_mode={self.profile_mode}"]
        if self.profile is not None:
            lines += [f"profile.{k}={v}" for k, v in self.profile.to_dict().items()]
        lines.append("files:")
        lines += [",".join([name, *(_fmt(v) for v in lab.as_array())]) for name, lab in self.files]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DatasetManifest":
        head, _, body = text.partition("files:\n")
        kv = {}
        for line in head.splitlines():
            if line.strip():
                k, _, v = line.partition("=")
                kv[k.strip()] = v.strip()
        try:
            prof = {k[8:]: v for k, v in kv.items() if k.startswith("profile.")}
            files = []
            for line in body.splitlines():
                if line.strip():
                    name, *vals = line.split(",")
                    files.append((name, ContactLabel(*(float(v) for v in vals))))
            return cls(kv["sensor_id"], int(kv["count"]), int(kv["image_size"]), int(kv["seed"]),
                       kv.get("profile_mode", "fixed"), SensorProfile.from_dict(prof) if prof else None, files)
        except (KeyError, ValueError, TypeError) as exc:
            raise StorageError(f"malformed manifest: {exc}") from exc


def _write_all(out: Path, manifest: DatasetManifest, images) -> DatasetManifest:
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create {out}: {exc}") from exc
    for (name, _), img in zip(manifest.files, images):
        write_pgm(out / name, img)
    write_labels(out / LABELS, [lab for _, lab in manifest.files])
    try:
        (out / MANIFEST).write_text(manifest.to_text())
    except OSError as exc:
        raise StorageError(f"cannot write {out / MANIFEST}: {exc}") from exc
    return manifest


def generate_dataset(profile: SensorProfile, n: int, seed: int, out_dir,
                     image_size: int = REFERENCE_SIZE) -> DatasetManifest:
    """Render ``n`` labelled images for one sensor into ``out_dir``; same seed, same bytes."""
    if n < 1:
        raise ConfigError(f"dataset size must be >= 1, got {n}")
    profile.validate()
    labels = sample_labels(n, seed, profile.skin_stiffness)
    files = [(image_name(i), lab) for i, lab in enumerate(labels)]
    man = DatasetManifest(profile.sensor_id, n, image_size, seed, "fixed", profile, files)
    images = (quantize(render_array(lab, profile, image_size)) for lab in labels)
    return _write_all(Path(out_dir), man, images)


def generate_randomized(n: int, seed: int, out_dir, image_size: int = REFERENCE_SIZE,
                        sensor_id: str = "pretrain") -> DatasetManifest:
    """Corpus where every image comes from a freshly drawn sensor profile."""
    if n < 1:
        raise ConfigError(f"dataset size must be >= 1, got {n}")
    labels = sample_labels(n, seed)
    files = [(image_name(i), lab) for i, lab in enumerate(labels)]
    man = DatasetManifest(sensor_id, n, image_size, seed, "randomized", None, files)

    def images():
        for i, lab in enumerate(labels):
            prof = random_profile(np.random.default_rng([seed, 104729, i]), f"{sensor_id}-{i}")
            yield quantize(render_array(lab, prof, image_size))

    return _write_all(Path(out_dir), man, images())


@dataclass
class SensorData:
    """One sensor's dataset held in memory."""

    sensor_id: str
    images: np.ndarray          # (n, H, W) uint8
    labels: np.ndarray          # (n, 8) float64
    manifest: DatasetManifest
    root: Path

    def __len__(self) -> int:
        return len(self.labels)


def load_dataset(path) -> SensorData:
    path = Path(path)
    if not (path / MANIFEST).is_file():
        raise StorageError(f"{path}: no {MANIFEST}")
    man = DatasetManifest.from_text((path / MANIFEST).read_text())
    labels = read_labels(path / LABELS)
    if len(labels) != man.count or len(man.files) != man.count:
        raise StorageError(f"{path}: manifest count {man.count} vs {len(labels)} labels / {len(man.files)} files")
    for k, name in enumerate(LABEL_FIELDS):
        lo, hi = RANGES[name]
        col = labels[:, k]
        if col.min() < lo - 1e-9 or col.max() > hi + 1e-9:
            raise StorageError(f"{path}: label {name} outside [{lo}, {hi}]")
    images = np.stack([read_pgm(path / name) for name, _ in man.files])
    return SensorData(man.sensor_id, images, labels, man, path)


def discover(root) -> list[Path]:
    """Sensor dataset directories directly under ``root`` (or ``root`` itself), sorted by name."""
    root = Path(root)
    if not root.is_dir():
        raise StorageError(f"data directory {root} does not exist")
    if (root / MANIFEST).is_file():
        return [root]
    dirs = sorted(p for p in root.iterdir() if (p / MANIFEST).is_file())
    if not dirs:
        raise StorageError(f"{root}: no sensor datasets found")
    return dirs


def load_root(root) -> dict[str, SensorData]:
    return {d.sensor_id: d for d in (load_dataset(p) for p in discover(root))}


def prepare_images(images: np.ndarray, size: int, channels: int = 1, resize_mode: str = "resize",
                   pixel_norm: str = "center", dtype=np.float32) -> np.ndarray:
    """uint8 (n, H, W) -> float (n, channels, size, size) model input."""
    x = images.astype(np.float64) / 255.0
    n, h, w = x.shape
    if (h, w) != (size, size):
        if resize_mode == "crop":
            x = _crop_or_pad(x, size)
        elif resize_mode in ("resize", "letterbox"):
            scale = size / max(h, w) if resize_mode == "letterbox" else None
            if scale is None and h % size == 0 and w % size == 0:
                x = x.reshape(n, size, h // size, size, w // size).mean(axis=(2, 4))
            else:
                zh, zw = (scale, scale) if scale is not None else (size / h, size / w)
                x = ndimage.zoom(x, (1, zh, zw), order=1)
                x = _crop_or_pad(x, size)
        else:
            raise ConfigError(f"unknown resize mode {resize_mode!r}")
    if pixel_norm == "center":
        x = x * 2.0 - 1.0
    elif pixel_norm != "none":
        raise ConfigError(f"unknown pixel normalisation {pixel_norm!r}")
    x = np.repeat(x[:, None], channels, axis=1) if channels > 1 else x[:, None]
    return np.ascontiguousarray(x, dtype=dtype)


def _crop_or_pad(x: np.ndarray, size: int) -> np.ndarray:
    n, h, w = x.shape
    out = np.zeros((n, size, size), dtype=x.dtype)
    sh, sw = min(h, size), min(w, size)
    y0, x0 = (h - sh) // 2, (w - sw) // 2
    oy, ox = (size - sh) // 2, (size - sw) // 2
    out[:, oy:oy + sh, ox:ox + sw] = x[:, y0:y0 + sh, x0:x0 + sw]
    return out
