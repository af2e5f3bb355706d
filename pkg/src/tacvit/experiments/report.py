"""Aggregation of per-run MAE rows into per-sensor and mean tables."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import EmptyInputError, StorageError
from ..models import FAMILIES
from ..sim.labels import TARGETS
from .runner import ACCEPTABLE, PROTOCOL_LABELS, PROTOCOLS, RunRow, completed_runs, read_metrics

NA = "NA"


@dataclass
class MetricsReport:
    cells: dict[tuple[str, str, str], np.ndarray]       # (protocol, family, sensor) -> MAE per target
    means: dict[tuple[str, str], np.ndarray]            # (protocol, family) -> mean MAE
    spreads: dict[tuple[str, str], np.ndarray]          # population std across sensors
    counts: dict[tuple[str, str], int]
    inflation: dict[str, np.ndarray]                    # family -> tr4teu mean / tr1te1 mean
    sensors: list[str]
    protocols: list[str]
    families: list[str]
    missing: list[tuple[str, str, str]] = field(default_factory=list)

    def ordering_holds(self, target: str = "z") -> bool | None:
        """True if the transformer's inflation ratio is below the CNN's for ``target``."""
        if "cnn" not in self.inflation or "tacvit" not in self.inflation:
            return None
        k = TARGETS.index(target)
        a, b = self.inflation["tacvit"][k], self.inflation["cnn"][k]
        if not (np.isfinite(a) and np.isfinite(b)):
            return None
        return bool(a < b)


def _order(values, reference) -> list[str]:
    known = [v for v in reference if v in values]
    return known + sorted(set(values) - set(reference))


def aggregate(rows: list[RunRow]) -> MetricsReport:
    """Per-cell averages, per-(protocol, family) mean and spread, and inflation ratios.

    Duplicate rows for a cell are averaged, so feeding the same rows twice
    leaves every statistic unchanged. Cells absent from the observed
    protocol x family x sensor grid are listed in ``missing``.
    """
    if not rows:
        raise EmptyInputError("no completed runs to aggregate")
    grouped: dict[tuple[str, str, str], list[np.ndarray]] = {}
    for r in rows:
        grouped.setdefault((r.protocol, r.family, r.sensor), []).append(np.asarray(r.mae, dtype=np.float64))
    cells = {k: np.mean(v, axis=0) for k, v in grouped.items()}
    protocols = _order({k[0] for k in cells}, PROTOCOLS)
    families = _order({k[1] for k in cells}, FAMILIES)
    sensors = sorted({k[2] for k in cells})

    means, spreads, counts = {}, {}, {}
    for p in protocols:
        for f in families:
            vals = [cells[(p, f, s)] for s in sensors if (p, f, s) in cells]
            if vals:
                stack = np.stack(vals)
                means[(p, f)] = stack.mean(axis=0)
                spreads[(p, f)] = stack.std(axis=0)
                counts[(p, f)] = len(vals)
    missing = [(p, f, s) for p in protocols for f in families for s in sensors if (p, f, s) not in cells]

    inflation = {}
    for f in families:
        if ("tr1te1", f) in means and ("tr4teu", f) in means:
            with np.errstate(divide="ignore", invalid="ignore"):
                inflation[f] = means[("tr4teu", f)] / means[("tr1te1", f)]
    return MetricsReport(cells, means, spreads, counts, inflation, sensors, protocols, families, missing)


def _num(v: float) -> str:
    return NA if not np.isfinite(v) else f"{v:.6g}"


def _cols(families) -> list[str]:
    return [f"{f}_{t.lower()}" for f in families for t in TARGETS]


def table3_csv(rep: MetricsReport) -> str:
    lines = [",".join(["protocol", "sensor", *_cols(rep.families)])]
    for p in rep.protocols:
        for s in rep.sensors:
            vals = []
            for f in rep.families:
                cell = rep.cells.get((p, f, s))
                vals += [NA] * len(TARGETS) if cell is None else [_num(v) for v in cell]
            lines.append(",".join([p, s, *vals]))
    return "\n".join(lines) + "\n"


def table4_csv(rep: MetricsReport) -> str:
    lines = [",".join(["protocol", "statistic", *_cols(rep.families)])]
    for p in rep.protocols:
        for stat, src in (("mean", rep.means), ("std", rep.spreads)):
            vals = []
            for f in rep.families:
                v = src.get((p, f))
                vals += [NA] * len(TARGETS) if v is None else [_num(x) for x in v]
            lines.append(",".join([p, stat, *vals]))
        lines.append(",".join([p, "runs", *(str(rep.counts.get((p, f), 0)) for f in rep.families
                                              for _ in TARGETS)]))
    return "\n".join(lines) + "\n"


def strip_csv(rep: MetricsReport) -> str:
    lines = ["protocol,family,sensor,target,mae"]
    for p in rep.protocols:
        for f in rep.families:
            for s in rep.sensors:
                cell = rep.cells.get((p, f, s))
                if cell is not None:
                    lines += [f"{p},{f},{s},{t},{_num(v)}" for t, v in zip(TARGETS, cell)]
    return "\n".join(lines) + "\n"


def inflation_csv(rep: MetricsReport) -> str:
    lines = ["family,target,tr1te1_mean,tr4teu_mean,ratio"]
    for f in rep.families:
        if f not in rep.inflation:
            continue
        for k, t in enumerate(TARGETS):
            lines.append(f"{f},{t},{_num(rep.means[('tr1te1', f)][k])},{_num(rep.means[('tr4teu', f)][k])},"
                         f"{_num(rep.inflation[f][k])}")
    return "\n".join(lines) + "\n"


def summary_text(rep: MetricsReport) -> str:
    out = [f"runs: {sum(rep.counts.values())} completed over {len(rep.sensors)} sensors "
           f"({', '.join(rep.sensors)})"]
    if rep.missing:
        out.append(f"MISSING CELLS ({len(rep.missing)}): " + ", ".join("/".join(m) for m in rep.missing))
    else:
        out.append("missing cells: none")
    out.append("")
    out.append("mean MAE (spread = std across test sensors)")
    out.append("  thresholds for 'acceptable': " + ", ".join(f"{t} < {v:g}" for t, v in ACCEPTABLE.items()))
    for p in rep.protocols:
        for f in rep.families:
            if (p, f) not in rep.means:
                continue
            m, sd = rep.means[(p, f)], rep.spreads[(p, f)]
            cells = "  ".join(f"{t}={_num(a)}±{_num(b)}{'' if a < ACCEPTABLE[t] else '!'}"
                              for t, a, b in zip(TARGETS, m, sd))
            out.append(f"  {PROTOCOL_LABELS.get(p, p):7s} {f:7s} n={rep.counts[(p, f)]}  {cells}")
    out.append("  ('!' marks a mean above its acceptable threshold)")
    out.append("")
    out.append("per-run acceptability (targets within threshold / 6)")
    for (p, f, s), cell in sorted(rep.cells.items()):
        ok = [t for t, v in zip(TARGETS, cell) if v < ACCEPTABLE[t]]
        out.append(f"  {p}/{f}/{s}: {len(ok)}/6 ({' '.join(ok) if ok else '-'})")
    out.append("")
    if rep.inflation:
        out.append("inflation ratio (Tr4TeU mean / Tr1Te1 mean)")
        for f, ratios in rep.inflation.items():
            out.append(f"  {f:7s} " + "  ".join(f"{t}={_num(r)}" for t, r in zip(TARGETS, ratios)))
        order = rep.ordering_holds("z")
        if order is None:
            out.append("ordering (tacvit z ratio < cnn z ratio): not computable")
        else:
            n_lower = sum(bool(a < b) for a, b in zip(rep.inflation["tacvit"], rep.inflation["cnn"]))
            out.append(f"ordering (tacvit z ratio < cnn z ratio): {'HOLDS' if order else 'DOES NOT HOLD'}"
                       f"; tacvit lower on {n_lower}/6 targets")
    else:
        out.append("inflation ratio: needs both tr1te1 and tr4teu runs")
    return "\n".join(out) + "\n"


REPORT_FILES = ("table3.csv", "table4.csv", "strip.csv", "inflation.csv", "summary.txt")


def render_report(rep: MetricsReport) -> dict[str, str]:
    return dict(zip(REPORT_FILES, (table3_csv(rep), table4_csv(rep), strip_csv(rep),
                                   inflation_csv(rep), summary_text(rep))))


def collect_rows(results_root) -> list[RunRow]:
    return [read_metrics(d / "metrics.csv") for d in completed_runs(results_root)]


def write_report(results_root, out_dir=None) -> MetricsReport:
    """Aggregate every completed run under ``results_root``; nothing is written if there are none."""
    rows = collect_rows(results_root)
    rep = aggregate(rows)
    out = Path(out_dir or results_root)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in render_report(rep).items():
            (out / name).write_text(text)
    except OSError as exc:
        raise StorageError(f"cannot write report to {out}: {exc}") from exc
    return rep
