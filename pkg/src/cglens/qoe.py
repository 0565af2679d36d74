"""Objective and context-calibrated (effective) QoE levels."""

from __future__ import annotations

import csv
import enum
import logging
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .core import ActivityPattern, GameTitle, SlotIndex, StageLabel

log = logging.getLogger(__name__)

TABLE_COLUMNS = ("table_version", "context", "metric", "medium_edge", "good_edge")
TABLE_VERSION = 1
OBJECTIVE = "objective"
METRICS = ("frame_rate", "throughput_mbps", "latency_ms", "loss_rate")
HIGHER_IS_BETTER = {"frame_rate": True, "throughput_mbps": True, "latency_ms": False, "loss_rate": False}
CALIBRATED_METRICS = ("frame_rate", "throughput_mbps")


class QoELevel(enum.IntEnum):
    BAD = 0
    MEDIUM = 1
    GOOD = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, text: str) -> "QoELevel":
        return cls[text.strip().upper()]


@dataclass(frozen=True)
class QoESample:
    frame_rate: float  # fps
    throughput: float  # bit/s
    latency: float  # ms
    loss_rate: float  # fraction
    interval: SlotIndex = SlotIndex(0, 1.0)

    def __post_init__(self):
        if not 0 <= self.loss_rate <= 1:
            raise ValueError(f"loss_rate must lie in [0, 1], got {self.loss_rate}")
        if min(self.frame_rate, self.throughput, self.latency) < 0:
            raise ValueError("QoE metrics must be non-negative")

    def metric(self, name: str) -> float:
        return {"frame_rate": self.frame_rate, "throughput_mbps": self.throughput / 1e6,
                "latency_ms": self.latency, "loss_rate": self.loss_rate}[name]


@dataclass(frozen=True)
class ContextSnapshot:
    title: GameTitle
    pattern: ActivityPattern
    stage: StageLabel


@dataclass(frozen=True)
class Band:
    medium_edge: float
    good_edge: float
    higher_is_better: bool

    def __post_init__(self):
        ordered = self.medium_edge <= self.good_edge if self.higher_is_better else self.medium_edge >= self.good_edge
        if not ordered:
            raise ValueError(f"band edges out of order: {self}")

    def level(self, value: float) -> QoELevel:
        if self.higher_is_better:
            if value >= self.good_edge:
                return QoELevel.GOOD
            return QoELevel.MEDIUM if value >= self.medium_edge else QoELevel.BAD
        if value <= self.good_edge:
            return QoELevel.GOOD
        return QoELevel.MEDIUM if value <= self.medium_edge else QoELevel.BAD


def context_keys(ctx: ContextSnapshot) -> list[str]:
    """Lookup order: title+stage, pattern+stage, objective."""
    keys = []
    if ctx.title is not GameTitle.UNKNOWN:
        keys.append(f"title:{ctx.title.value}|stage:{ctx.stage.value}")
    keys.append(f"pattern:{ctx.pattern.value}|stage:{ctx.stage.value}")
    return keys


class CalibrationTable:
    """Band edges per (context, metric), loaded from a versioned CSV."""

    def __init__(self, bands: dict[tuple[str, str], Band], version: int = TABLE_VERSION, source=None):
        self.bands = bands
        self.version = version
        self.source = source
        missing = [m for m in METRICS if (OBJECTIVE, m) not in bands]
        if missing:
            raise ValueError(f"calibration table lacks objective bands for {missing}")
        self._warned: set = set()

    @classmethod
    def load(cls, path=None) -> "CalibrationTable":
        if path is None:
            with resources.files("cglens").joinpath("data/calibration.csv").open(encoding="utf-8") as fh:
                return cls._parse(fh, "<packaged calibration.csv>")
        with open(path, newline="", encoding="utf-8") as fh:
            return cls._parse(fh, Path(path))

    @classmethod
    def _parse(cls, fh, source) -> "CalibrationTable":
        reader = csv.DictReader(fh)
        missing = [c for c in TABLE_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{source}: missing column {missing[0]!r}")
        bands = {}
        versions = set()
        for row in reader:
            metric = row["metric"].strip()
            if metric not in HIGHER_IS_BETTER:
                raise ValueError(f"{source}: unknown metric {metric!r}")
            versions.add(int(row["table_version"]))
            bands[(row["context"].strip(), metric)] = Band(
                float(row["medium_edge"]), float(row["good_edge"]), HIGHER_IS_BETTER[metric])
        if len(versions) > 1:
            raise ValueError(f"{source}: mixed table versions {sorted(versions)}")
        version = versions.pop() if versions else TABLE_VERSION
        if version > TABLE_VERSION:
            raise ValueError(f"{source}: table version {version} newer than supported {TABLE_VERSION}")
        return cls(bands, version, source)

    def reload(self) -> "CalibrationTable":
        return CalibrationTable.load(self.source if isinstance(self.source, Path) else None)

    def objective_band(self, metric: str) -> Band:
        return self.bands[(OBJECTIVE, metric)]

    def band_for(self, metric: str, ctx: ContextSnapshot) -> Band:
        for key in context_keys(ctx):
            band = self.bands.get((key, metric))
            if band is not None:
                return band
        if (ctx, metric) not in self._warned:
            self._warned.add((ctx, metric))
            log.warning("no calibration row for %s/%s; using objective bands", context_keys(ctx)[-1], metric)
        return self.objective_band(metric)

    def write(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(TABLE_COLUMNS)
            for (ctx, metric), b in self.bands.items():
                w.writerow([self.version, ctx, metric, repr(b.medium_edge), repr(b.good_edge)])


_default_table: Optional[CalibrationTable] = None


def default_table() -> CalibrationTable:
    global _default_table
    if _default_table is None:
        _default_table = CalibrationTable.load()
    return _default_table


def metric_verdicts(sample: QoESample, table: CalibrationTable,
                    ctx: Optional[ContextSnapshot] = None) -> dict[str, QoELevel]:
    out = {}
    for m in METRICS:
        band = table.band_for(m, ctx) if ctx is not None and m in CALIBRATED_METRICS else table.objective_band(m)
        out[m] = band.level(sample.metric(m))
    return out


def objective_level(sample: QoESample, table: Optional[CalibrationTable] = None) -> QoELevel:
    return min(metric_verdicts(sample, table or default_table()).values())


def effective_level(sample: QoESample, context: ContextSnapshot,
                    table: Optional[CalibrationTable] = None) -> QoELevel:
    """Frame rate and throughput judged against context bands; latency and loss unchanged."""
    return min(metric_verdicts(sample, table or default_table(), context).values())


def session_level(levels: Sequence[QoELevel]) -> QoELevel:
    """Plurality level; ties go to the worse level."""
    if not levels:
        raise ValueError("session_level needs at least one interval level")
    counts = Counter(QoELevel(l) for l in levels)
    top = max(counts.values())
    return min(l for l, c in counts.items() if c == top)


def level_fractions(levels: Iterable[QoELevel]) -> dict[QoELevel, float]:
    counts = Counter(levels)
    n = sum(counts.values())
    return {l: (counts.get(l, 0) / n if n else 0.0) for l in QoELevel}


# --------------------------------------------------------------------------
# Per-interval QoE sample files

SAMPLE_COLUMNS = ("interval_start_s", "interval_s", "frame_rate", "throughput_bps", "latency_ms", "loss_rate")


def write_samples(samples: Iterable[QoESample], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SAMPLE_COLUMNS)
        for q in samples:
            w.writerow([repr(q.interval.index * q.interval.width), repr(q.interval.width), repr(q.frame_rate),
                        repr(q.throughput), repr(q.latency), repr(q.loss_rate)])


def read_samples(path) -> list[QoESample]:
    """Read QoE samples; interval starts must be multiples of the interval width."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in SAMPLE_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing column {missing[0]!r}")
        for row in reader:
            width = float(row["interval_s"])
            if not width > 0:
                raise ValueError(f"{path}: interval_s must be positive")
            start = float(row["interval_start_s"])
            index = round(start / width)
            if abs(index * width - start) > 1e-6 * max(1.0, start):
                raise ValueError(f"{path}: interval start {start} is not a multiple of {width}")
            out.append(QoESample(float(row["frame_rate"]), float(row["throughput_bps"]), float(row["latency_ms"]),
                                 float(row["loss_rate"]), SlotIndex(int(index), width)))
    return out
