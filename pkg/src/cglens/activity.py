"""Per-slot player activity stages, stage transitions and gameplay pattern."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import GAMEPLAY_STAGES, ActivityPattern, Direction, PacketRecord, StageLabel
from .forest import Ensemble

ATTRS = ("down_throughput", "up_throughput", "down_pkt_rate", "up_pkt_rate")
STAGE_INDEX = {s: i for i, s in enumerate(GAMEPLAY_STAGES)}
TRANSITION_NAMES = tuple(f"{a.value}->{b.value}" for a in GAMEPLAY_STAGES for b in GAMEPLAY_STAGES)


@dataclass(frozen=True)
class SlotVolumetrics:
    down_throughput: float  # bit/s
    up_throughput: float
    down_pkt_rate: float  # packet/s
    up_pkt_rate: float
    slot: int = 0
    width: float = 1.0

    def as_array(self) -> np.ndarray:
        return np.array([self.down_throughput, self.up_throughput,
                         self.down_pkt_rate, self.up_pkt_rate])

    def scaled(self, c: float) -> "SlotVolumetrics":
        return SlotVolumetrics(*(self.as_array() * c), slot=self.slot, width=self.width)


def slot_volumetrics(packets: Iterable[PacketRecord], width: float = 1.0, slot: int = 0) -> SlotVolumetrics:
    down_b = up_b = down_n = up_n = 0
    for p in packets:
        if p.direction is Direction.DOWNSTREAM:
            down_b += p.payload_size
            down_n += 1
        else:
            up_b += p.payload_size
            up_n += 1
    return SlotVolumetrics(down_b * 8 / width, up_b * 8 / width, down_n / width, up_n / width,
                           slot, width)


def volumetrics_series(ts: np.ndarray, size: np.ndarray, is_down: np.ndarray, width: float = 1.0,
                       n_slots: Optional[int] = None) -> np.ndarray:
    """(n_slots, 4) raw volumetrics per slot, columns in ATTRS order."""
    ts = np.asarray(ts, float)
    size = np.asarray(size, float)
    is_down = np.asarray(is_down, bool)
    slots = np.floor(ts / width).astype(np.int64)
    if n_slots is None:
        n_slots = int(slots.max()) + 1 if len(slots) else 0
    keep = (slots >= 0) & (slots < n_slots)
    out = np.zeros((n_slots, 4))
    for col, (mask, weights) in enumerate(((is_down, size), (~is_down, size),
                                           (is_down, None), (~is_down, None))):
        m = keep & mask
        w = weights[m] * 8 if weights is not None else None
        out[:, col] = np.bincount(slots[m], weights=w, minlength=n_slots)[:n_slots] / width
    return out


def ema_update(current: float, previous: float, alpha: float) -> float:
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    return alpha * current + (1 - alpha) * previous


@dataclass
class RunningPeaks:
    """Per-attribute running peaks with a floor calibrated on launch traffic."""

    peaks: np.ndarray
    floors: np.ndarray

    @classmethod
    def from_launch(cls, launch_rows: np.ndarray, floor_fraction: float = 0.10) -> "RunningPeaks":
        launch_rows = np.asarray(launch_rows, float).reshape(-1, 4)
        top = launch_rows.max(axis=0) if len(launch_rows) else np.zeros(4)
        return cls(top.copy(), top * floor_fraction)

    @property
    def valid(self) -> np.ndarray:
        return self.peaks > 0

    def observe(self, raw: np.ndarray) -> None:
        raw = np.asarray(raw, float)
        grow = (raw > self.peaks) & (raw >= self.floors)
        self.peaks = np.where(grow, raw, self.peaks)


@dataclass(frozen=True)
class RelativeVolumetrics:
    values: tuple[float, float, float, float]
    peak_valid: bool


def relative_normalize(raw: SlotVolumetrics | np.ndarray, peaks: RunningPeaks) -> RelativeVolumetrics:
    """Divide by running peaks, updating them first when the raw value sets a new valid peak."""
    r = raw.as_array() if isinstance(raw, SlotVolumetrics) else np.asarray(raw, float)
    peaks.observe(r)
    rel = np.divide(r, peaks.peaks, out=np.zeros(4), where=peaks.peaks > 0)
    return RelativeVolumetrics(tuple(np.minimum(rel, 1.0).tolist()), bool(peaks.valid.all()))


class TransitionMatrix:
    """Counts of per-slot stage transitions over (Idle, Passive, Active)."""

    def __init__(self, counts: Optional[np.ndarray] = None):
        self.counts = np.zeros((3, 3), np.int64) if counts is None else np.array(counts, np.int64)
        if self.counts.shape != (3, 3) or (self.counts < 0).any():
            raise ValueError("transition counts must be a non-negative 3x3 array")

    @property
    def probabilities(self) -> np.ndarray:
        return row_probabilities(self.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def features(self) -> np.ndarray:
        return self.probabilities.ravel()

    def __eq__(self, other) -> bool:
        return isinstance(other, TransitionMatrix) and np.array_equal(self.counts, other.counts)

    def __repr__(self) -> str:
        return f"TransitionMatrix({self.counts.tolist()})"


def row_probabilities(counts: np.ndarray) -> np.ndarray:
    """Row-normalise; an empty row becomes uniform."""
    counts = np.asarray(counts, float)
    rows = counts.sum(axis=-1, keepdims=True)
    uniform = np.full_like(counts, 1.0 / counts.shape[-1])
    return np.where(rows > 0, counts / np.where(rows > 0, rows, 1), uniform)


def update_transitions(previous: StageLabel, current: StageLabel, matrix: TransitionMatrix) -> TransitionMatrix:
    if previous not in STAGE_INDEX or current not in STAGE_INDEX:
        raise ValueError("transitions are only recorded between Idle, Passive and Active")
    counts = matrix.counts.copy()
    counts[STAGE_INDEX[previous], STAGE_INDEX[current]] += 1
    return TransitionMatrix(counts)


def transitions_of(stages: Sequence[StageLabel]) -> TransitionMatrix:
    m = TransitionMatrix()
    for a, b in zip(stages, stages[1:]):
        m = update_transitions(a, b, m)
    return m


@dataclass(frozen=True)
class PatternInference:
    pattern: ActivityPattern
    confidence: float
    decided_at: Optional[float] = None


UNDECIDED = PatternInference(ActivityPattern.UNDECIDED, 0.0, None)


def stage_changes(counts: np.ndarray) -> int:
    """Number of recorded transitions between two different stages."""
    counts = np.asarray(counts)
    return int(counts.sum() - np.trace(counts))


def infer_pattern(matrix: TransitionMatrix, model: Ensemble, threshold: float = 0.75,
                  at: Optional[float] = None, min_changes: int = 1) -> PatternInference:
    """One gated pattern prediction from the current transition matrix.

    Stays Undecided until the matrix records `min_changes` changes of stage:
    a matrix of pure retention says nothing about the pattern.
    """
    if matrix.total < 1 or stage_changes(matrix.counts) < min_changes:
        return UNDECIDED
    from .forest import predict
    pred = predict(model, matrix.features())
    if pred.confidence < threshold:
        return PatternInference(ActivityPattern.UNDECIDED, pred.confidence, None)
    return PatternInference(ActivityPattern(pred.label), pred.confidence, at)


@dataclass(frozen=True)
class TrackerConfig:
    slot: float = 1.0  # I
    alpha: float = 0.5
    launch_window: float = 5.0  # N
    floor_fraction: float = 0.10
    pattern_threshold: float = 0.75
    min_stage_changes: int = 1

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not self.slot > 0:
            raise ValueError("slot width must be positive")

    @property
    def launch_slots(self) -> int:
        return max(1, int(round(self.launch_window / self.slot)))


@dataclass
class SlotOutput:
    slot: int
    raw: np.ndarray
    smoothed: Optional[np.ndarray]
    stage: StageLabel
    pattern: PatternInference = UNDECIDED


@dataclass
class TrackResult:
    """Whole-session tracker output (batch form)."""

    raw: np.ndarray  # (n, 4)
    smoothed: np.ndarray  # (n, 4); NaN on launch slots
    stages: list[StageLabel]
    first_gameplay_slot: int
    matrix: TransitionMatrix
    pattern: PatternInference
    pattern_confidence: np.ndarray  # per slot, NaN before the first transition
    pattern_votes: list = field(default_factory=list)

    def classified_mask(self) -> np.ndarray:
        return np.array([s is not StageLabel.LAUNCH for s in self.stages], bool)


def smooth_relative(raw: np.ndarray, cfg: TrackerConfig = TrackerConfig()) -> tuple[np.ndarray, int]:
    """Relative, EMA-smoothed attributes for every slot of a session.

    Returns (smoothed, first_gameplay_slot); rows before the boundary are NaN.
    """
    raw = np.asarray(raw, float).reshape(-1, 4)
    n = len(raw)
    n_launch = min(cfg.launch_slots, n)
    peaks = RunningPeaks.from_launch(raw[:n_launch], cfg.floor_fraction)
    smoothed = np.full((n, 4), np.nan)
    start = n
    for i in range(n_launch, n):
        if raw[i, 0] > peaks.floors[0]:
            start = i
            break
        peaks.observe(raw[i])
    prev = None
    for i in range(start, n):
        rel = np.array(relative_normalize(raw[i], peaks).values)
        prev = rel if prev is None else cfg.alpha * rel + (1 - cfg.alpha) * prev
        smoothed[i] = prev
    return smoothed, start


def track_session(raw: np.ndarray, stage_model: Ensemble, pattern_model: Optional[Ensemble] = None,
                  cfg: TrackerConfig = TrackerConfig()) -> TrackResult:
    """Run the tracker over a whole session's slot volumetrics."""
    smoothed, start = smooth_relative(raw, cfg)
    n = len(smoothed)
    stages = [StageLabel.LAUNCH] * n
    if start < n:
        for i, lab in enumerate(stage_model.predict_labels(smoothed[start:]), start=start):
            stages[i] = StageLabel(lab)
    matrix, pattern, conf = latch_pattern(stages, start, pattern_model, cfg)
    return TrackResult(np.asarray(raw, float), smoothed, stages, start, matrix, pattern, conf)


def latch_pattern(stages: Sequence[StageLabel], start: int, pattern_model: Optional[Ensemble],
                  cfg: TrackerConfig = TrackerConfig()) -> tuple[TransitionMatrix, PatternInference, np.ndarray]:
    """Accumulate transitions from slot `start` on and latch the first confident pattern.

    Returns (final matrix, pattern, per-slot top vote share); the share is
    NaN where inference did not run.
    """
    n = len(stages)
    counts = np.zeros((3, 3), np.int64)
    snapshots, at_slots = [], []
    for i in range(start + 1, n):
        counts[STAGE_INDEX[stages[i - 1]], STAGE_INDEX[stages[i]]] += 1
        if stage_changes(counts) >= cfg.min_stage_changes:
            snapshots.append(row_probabilities(counts).ravel())
            at_slots.append(i)
    conf = np.full(n, np.nan)
    pattern = UNDECIDED
    if pattern_model is not None and snapshots:
        shares = pattern_model.vote_shares(np.array(snapshots))
        best = shares.argmax(axis=1)
        top = shares[np.arange(len(best)), best]
        conf[at_slots] = top
        hit = np.flatnonzero(top >= cfg.pattern_threshold)
        if len(hit):
            k = int(hit[0])
            pattern = PatternInference(ActivityPattern(pattern_model.classes[best[k]]),
                                       float(top[k]), (at_slots[k] + 1) * cfg.slot)
    return TransitionMatrix(counts), pattern, conf


class ActivityTracker:
    """Streaming form of `track_session`: push one slot of volumetrics at a time."""

    def __init__(self, stage_model: Ensemble, pattern_model: Optional[Ensemble] = None,
                 cfg: TrackerConfig = TrackerConfig()):
        self.stage_model = stage_model
        self.pattern_model = pattern_model
        self.cfg = cfg
        self._launch_rows: list[np.ndarray] = []
        self._peaks: Optional[RunningPeaks] = None
        self._smoothed: Optional[np.ndarray] = None
        self._prev_stage: Optional[StageLabel] = None
        self.matrix = TransitionMatrix()
        self.pattern = UNDECIDED
        self.slot = 0

    def push(self, raw: SlotVolumetrics | np.ndarray) -> SlotOutput:
        r = raw.as_array() if isinstance(raw, SlotVolumetrics) else np.asarray(raw, float)
        i = self.slot
        self.slot += 1
        cfg = self.cfg
        if i < cfg.launch_slots:
            self._launch_rows.append(r)
            return SlotOutput(i, r, None, StageLabel.LAUNCH)
        if self._peaks is None:
            self._peaks = RunningPeaks.from_launch(np.array(self._launch_rows), cfg.floor_fraction)
        if self._smoothed is None and not r[0] > self._peaks.floors[0]:
            self._peaks.observe(r)
            return SlotOutput(i, r, None, StageLabel.LAUNCH)
        rel = np.array(relative_normalize(r, self._peaks).values)
        self._smoothed = rel if self._smoothed is None else cfg.alpha * rel + (1 - cfg.alpha) * self._smoothed
        stage = StageLabel(self.stage_model.predict_labels(self._smoothed[None, :])[0])
        if self._prev_stage is not None:
            self.matrix = update_transitions(self._prev_stage, stage, self.matrix)
            if self.pattern_model is not None and self.pattern.pattern is ActivityPattern.UNDECIDED:
                inf = infer_pattern(self.matrix, self.pattern_model, cfg.pattern_threshold,
                                    at=(i + 1) * cfg.slot, min_changes=cfg.min_stage_changes)
                if inf.pattern is not ActivityPattern.UNDECIDED:
                    self.pattern = inf
        self._prev_stage = stage
        return SlotOutput(i, r, self._smoothed.copy(), stage, self.pattern)
