"""Run planning and execution for the three train/test protocols."""

from __future__ import annotations

import csv
import io
import logging
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import Settings
from ..errors import ConfigError, StorageError, TacvitError
from ..models import FAMILIES, ModelParams, ModelSpec
from ..sim.labels import TARGETS
from ..training import (EvalResult, SampleCache, Samples, TrainPlan, evaluate_mae, finetune_params,
                        history_csv, save_model, split_dataset, train)

log = logging.getLogger(__name__)

PROTOCOLS = ("tr1te1", "tr5te1", "tr4teu")
PROTOCOL_LABELS = {"tr1te1": "Tr1Te1", "tr5te1": "Tr5Te1", "tr4teu": "Tr4TeU"}
DONE = "done"

# Acceptable-error thresholds per target (mm, deg, deg, N, N, N)
ACCEPTABLE = {"z": 0.1, "Rx": 2.5, "Ry": 2.5, "Fx": 1.0, "Fy": 1.0, "Fz": 1.0}


def normalize_protocol(name: str) -> str:
    key = name.lower().replace("-", "").replace("_", "")
    if key not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {name!r} (tr1te1 | tr5te1 | tr4teu)")
    return key


@dataclass(frozen=True)
class ExperimentSpec:
    protocol: str
    target: str
    family: str
    sensors: tuple[str, ...]

    @property
    def train_sensors(self) -> tuple[str, ...]:
        if self.protocol == "tr1te1":
            return (self.target,)
        if self.protocol == "tr5te1":
            return self.sensors
        return tuple(s for s in self.sensors if s != self.target)

    @property
    def run_id(self) -> str:
        return f"{self.protocol}/{self.family}/{self.target}"

    def run_dir(self, root) -> Path:
        return Path(root) / self.protocol / self.family / self.target


def plan_runs(protocol: str, sensors, families=FAMILIES) -> list[ExperimentSpec]:
    """One run per (family, test sensor); sensors are taken in sorted order."""
    protocol = normalize_protocol(protocol)
    sensors = tuple(sorted(sensors))
    if not sensors:
        raise ConfigError("no sensors to plan runs for")
    if len(set(sensors)) != len(sensors):
        raise ConfigError(f"duplicate sensor ids: {sensors}")
    if protocol == "tr4teu" and len(sensors) < 2:
        raise ConfigError("tr4teu needs at least two sensors")
    for f in families:
        if f not in FAMILIES:
            raise ConfigError(f"unknown model family {f!r} (cnn | tacvit)")
    return [ExperimentSpec(protocol, s, f, sensors) for f in families for s in sensors]


def run_seed(base_seed: int, spec: ExperimentSpec) -> int:
    ss = np.random.SeedSequence([base_seed & 0xFFFFFFFF, zlib.crc32(spec.run_id.encode())])
    return int(ss.generate_state(1)[0])


def select(spec: ExperimentSpec, sizes: dict[str, int], fraction: float, seed: int):
    """(train, validation, test) index selections, each a {sensor: indices} dict."""
    missing = [s for s in spec.sensors if s not in sizes]
    if missing:
        raise ConfigError(f"{spec.run_id}: sensors {missing} not in dataset root")
    tr, va = split_dataset({s: sizes[s] for s in spec.sensors}, fraction, seed)
    train_sel = {s: tr[s] for s in spec.train_sensors}
    val_sel = {s: va[s] for s in spec.train_sensors}
    if spec.protocol == "tr4teu":
        test_sel = {spec.target: np.arange(sizes[spec.target])}
    else:
        test_sel = {spec.target: va[spec.target]}
    return train_sel, val_sel, test_sel


def check_hygiene(spec: ExperimentSpec, train_set: Samples, test_set: Samples) -> None:
    overlap = train_set.provenance() & test_set.provenance()
    if overlap:
        raise TacvitError(f"{spec.run_id}: {len(overlap)} test samples also in training")
    if spec.protocol == "tr4teu" and spec.target in set(train_set.sensors.tolist()):
        raise TacvitError(f"{spec.run_id}: unseen sensor {spec.target} present in training data")


@dataclass
class RunRow:
    protocol: str
    family: str
    sensor: str
    mae: np.ndarray
    extra: dict = field(default_factory=dict)


METRIC_COLUMNS = ("protocol", "family", "sensor", *(f"mae_{t.lower()}" for t in TARGETS),
                  *(f"ok_{t.lower()}" for t in TARGETS), "best_epoch", "n_train", "n_val", "n_test",
                  "train_sensors", "seed")


def metrics_csv(spec: ExperimentSpec, ev: EvalResult, info: dict) -> str:
    vals = [spec.protocol, spec.family, spec.target, *(repr(float(v)) for v in ev.mae),
            *(str(int(v < ACCEPTABLE[t])) for t, v in zip(TARGETS, ev.mae)),
            info["best_epoch"], info["n_train"], info["n_val"], info["n_test"],
            "|".join(spec.train_sensors), info["seed"]]
    return ",".join(METRIC_COLUMNS) + "\n" + ",".join(str(v) for v in vals) + "\n"


def scatter_csv(test_set: Samples, ev: EvalResult) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["sensor", "index", *(f"pred_{t.lower()}" for t in TARGETS), *(f"true_{t.lower()}" for t in TARGETS)])
    for k in range(len(test_set)):
        wr.writerow([test_set.sensors[k], int(test_set.indices[k]), *(repr(float(v)) for v in ev.pred[k]),
                     *(repr(float(v)) for v in ev.truth[k])])
    return buf.getvalue()


def read_metrics(path) -> RunRow:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    if len(rows) != 1:
        raise StorageError(f"{path}: expected one metrics row, found {len(rows)}")
    r = rows[0]
    try:
        mae = np.array([float(r[f"mae_{t.lower()}"]) for t in TARGETS])
    except (KeyError, ValueError) as exc:
        raise StorageError(f"{path}: malformed metrics row: {exc}") from exc
    return RunRow(r["protocol"], r["family"], r["sensor"], mae,
                  {k: r[k] for k in ("best_epoch", "n_train", "n_val", "n_test", "train_sensors", "seed") if k in r})


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def run_experiment(spec: ExperimentSpec, cache: SampleCache, settings: Settings, out_root,
                   base: ModelParams | None = None, base_seed: int = 0) -> RunRow:
    """Train and evaluate one run, writing its directory; ``done`` is written last."""
    run_dir = spec.run_dir(out_root)
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create {run_dir}: {exc}") from exc
    (run_dir / DONE).unlink(missing_ok=True)
    seed = run_seed(base_seed, spec)
    sizes = {s: len(d) for s, d in cache.datasets.items()}
    train_sel, val_sel, test_sel = select(spec, sizes, settings.train.split_fraction, base_seed)
    train_set, val_set, test_set = cache.gather(train_sel), cache.gather(val_sel), cache.gather(test_sel)
    check_hygiene(spec, train_set, test_set)

    model = ModelSpec.from_settings(spec.family, settings)
    if spec.family == "tacvit":
        params, schedule = finetune_params(settings, base, seed)
    else:
        params, schedule = model.init(seed), None
    plan = TrainPlan.for_family(settings, spec.family, seed, schedule)
    t0 = time.perf_counter()
    try:
        result = train(model, train_set, val_set, plan, params)
    except TacvitError as exc:
        raise type(exc)(f"{spec.run_id}: {exc}") from exc
    ev = evaluate_mae(model, result.params, test_set)
    log.info("%s done in %.1fs: z MAE %.4f", spec.run_id, time.perf_counter() - t0, ev.mae[0])

    info = {"best_epoch": result.best_epoch, "n_train": len(train_set), "n_val": len(val_set),
            "n_test": len(test_set), "seed": seed}
    _write(run_dir / "history.csv", history_csv(result.history))
    _write(run_dir / "metrics.csv", metrics_csv(spec, ev, info))
    _write(run_dir / "scatter.csv", scatter_csv(test_set, ev))
    save_model(run_dir / "ckpt.tvt1", result.params, spec.family, settings)
    _write(run_dir / DONE, "")
    return RunRow(spec.protocol, spec.family, spec.target, ev.mae, info)


def is_done(spec: ExperimentSpec, out_root) -> bool:
    return (spec.run_dir(out_root) / DONE).is_file()


def completed_runs(root) -> list[Path]:
    """Run directories under ``root`` carrying a ``done`` sentinel, in sorted order."""
    root = Path(root)
    if not root.is_dir():
        raise StorageError(f"results directory {root} does not exist")
    return sorted(p.parent for p in root.glob(f"*/*/*/{DONE}") if (p.parent / "metrics.csv").is_file())
