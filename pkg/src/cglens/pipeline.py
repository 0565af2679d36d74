"""End-to-end analysis of one streaming flow, plus dataset builders for training."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from . import forest
from .activity import (ATTRS, STAGE_INDEX, TRANSITION_NAMES, UNDECIDED, TrackResult, TransitionMatrix,
                       latch_pattern, row_probabilities, smooth_relative, stage_changes, track_session, volumetrics_series)
from .capture import Capture, LabeledSession
from .config import EngineConfig
from .core import GAMEPLAY_STAGES, ActivityPattern, GameTitle, StageLabel
from .forest import Ensemble
from .launch import GrouperParams, flow_volume_features, launch_features
from .qoe import (CalibrationTable, ContextSnapshot, QoESample, effective_level, objective_level,
                  session_level)

log = logging.getLogger(__name__)


class ModelMismatch(ValueError):
    """A model does not fit the configured feature layout."""


# --------------------------------------------------------------------------
# Features

def downstream(cap: Capture) -> tuple[np.ndarray, np.ndarray]:
    """(times in seconds, sizes) of downstream packets of a flow table (keys[0] = downstream)."""
    m = cap.key_index == 0
    return cap.ts[m], cap.size[m]


def title_vector(cap: Capture, params: GrouperParams, learn_max: bool = True) -> np.ndarray:
    ts, size = downstream(cap.until(params.window))
    return launch_features(ts, size, params, learn_max)


def baseline_vector(cap: Capture, params: GrouperParams) -> np.ndarray:
    ts, size = downstream(cap.until(params.window))
    return flow_volume_features(ts, size, params)


def flow_volumetrics(cap: Capture, width: float, duration: Optional[float] = None) -> np.ndarray:
    if duration is None:
        duration = (int(cap.ts_us[-1]) + 1) / 1e6 if len(cap) else 0.0
    n = int(math.ceil(duration / width - 1e-9))
    return volumetrics_series(cap.ts, cap.size, cap.key_index == 0, width, n)


# --------------------------------------------------------------------------
# Splits and datasets

def session_split(labels: Sequence, groups: Sequence[str], test_fraction: float = 0.2,
                  rng_seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Stratified split at the session-group level; returns boolean (train, test) masks.

    All rows sharing a group (a session and its augmented variants) fall on
    the same side.
    """
    labels = list(labels)
    groups = list(groups)
    rng = np.random.default_rng(rng_seed)
    group_label: dict[str, object] = {}
    for g, y in zip(groups, labels):
        group_label.setdefault(g, y)
    test_groups = set()
    for y in sorted(set(group_label.values()), key=str):
        members = sorted(g for g, lab in group_label.items() if lab == y)
        members = [members[i] for i in rng.permutation(len(members))]
        k = int(round(test_fraction * len(members)))
        if len(members) > 1:
            k = min(max(k, 1), len(members) - 1)
        else:
            k = 0
        test_groups.update(members[:k])
    test = np.array([g in test_groups for g in groups], bool)
    return ~test, test


@dataclass
class Dataset:
    X: np.ndarray
    y: list
    groups: list
    feature_names: list = field(default_factory=list)

    def subset(self, mask) -> "Dataset":
        idx = np.flatnonzero(mask)
        return Dataset(self.X[idx], [self.y[i] for i in idx], [self.groups[i] for i in idx],
                       self.feature_names)


def stage_rows(raw: np.ndarray, labels: LabeledSession, cfg: EngineConfig) -> tuple[np.ndarray, list]:
    """Smoothed relative attributes and ground-truth stages for classified gameplay slots."""
    tcfg = cfg.tracker
    smoothed, start = smooth_relative(raw, tcfg)
    truth = labels.slot_stages(len(raw), tcfg.slot)
    keep = [i for i in range(start, len(raw)) if truth[i] is not StageLabel.LAUNCH]
    return smoothed[keep], [truth[i] for i in keep]


def stage_dataset(sessions: Iterable[tuple[np.ndarray, LabeledSession]], cfg: EngineConfig) -> Dataset:
    X, y, g = [], [], []
    for raw, lab in sessions:
        rows, truth = stage_rows(raw, lab, cfg)
        X.append(rows)
        y += truth
        g += [lab.session_id] * len(truth)
    return Dataset(np.concatenate(X) if X else np.zeros((0, 4)), y, g, list(ATTRS))


def snapshot_due(k: int, every: int) -> bool:
    """Snapshot after k transitions: densely while the matrix is young, then every `every`."""
    dense = max(1, every // 4)
    return (k <= 4 * every and k % dense == 0) or k % every == 0 or k == 1


def transition_snapshots(stages: Sequence[StageLabel], every: int, start: int = 0,
                         min_changes: int = 1) -> np.ndarray:
    """Cumulative transition probabilities at snapshot points, plus the final matrix.

    Snapshots taken before `min_changes` stage changes are skipped, matching
    when inference is allowed to run.
    """
    counts = np.zeros((3, 3), np.int64)
    out = []
    n = len(stages)
    for i in range(start + 1, n):
        counts[STAGE_INDEX[stages[i - 1]], STAGE_INDEX[stages[i]]] += 1
        if stage_changes(counts) < min_changes:
            continue
        if snapshot_due(i - start, every) or i == n - 1:
            out.append(row_probabilities(counts).ravel())
    return np.array(out).reshape(-1, 9)


def pattern_dataset(sessions: Iterable[tuple[np.ndarray, LabeledSession]], cfg: EngineConfig,
                    stage_model: Optional[Ensemble] = None) -> Dataset:
    """Snapshot transition matrices per session.

    Stages come from the stage model when given (what inference will see),
    otherwise from ground truth.
    """
    return snapshot_dataset(stage_runs(sessions, cfg, stage_model), cfg)


def snapshot_dataset(runs: Sequence["StageRun"], cfg: EngineConfig) -> Dataset:
    every = max(1, int(round(cfg.snapshot_s / cfg.tracker.slot)))
    X, y, g = [], [], []
    for r in runs:
        snaps = transition_snapshots(r.stages, every, r.start, cfg.tracker.min_stage_changes)
        X.append(snaps)
        y += [r.truth.value] * len(snaps)
        g += [r.session_id] * len(snaps)
    return Dataset(np.concatenate(X) if X else np.zeros((0, 9)), y, g, list(TRANSITION_NAMES))


def balance_classes(data: Dataset) -> Dataset:
    """Repeat rows of minority classes until every class has the majority count.

    Hard-vote confidence is only meaningful on ambiguous inputs (such as a
    young transition matrix) when the classes are equally represented.
    """
    by_class: dict = {}
    for i, y in enumerate(data.y):
        by_class.setdefault(y, []).append(i)
    target = max(len(v) for v in by_class.values())
    idx = []
    for y in sorted(by_class, key=str):
        rows = by_class[y]
        reps, extra = divmod(target, len(rows))
        idx += rows * reps + rows[:extra]
    idx.sort()
    return Dataset(data.X[idx], [data.y[i] for i in idx], [data.groups[i] for i in idx], data.feature_names)


def final_matrices(sessions: Iterable[tuple[np.ndarray, LabeledSession]], cfg: EngineConfig,
                   stage_model: Ensemble) -> Dataset:
    X, y, g = [], [], []
    for raw, lab in sessions:
        res = track_session(raw, stage_model, None, cfg.tracker)
        X.append(res.matrix.features())
        y.append(lab.pattern.value)
        g.append(lab.session_id)
    return Dataset(np.array(X).reshape(-1, 9), y, g, list(TRANSITION_NAMES))


def train_task(task: str, data: Dataset, cfg: EngineConfig, rng_seed: int = 0,
               n_trees: Optional[int] = None, max_depth: Optional[int] = None, meta: Optional[dict] = None) -> Ensemble:
    hp = cfg.model_params(task)
    classes = {
        "title": [t.value for t in GameTitle if t is not GameTitle.UNKNOWN and t.value in set(data.y)],
        "stage": [s for s in GAMEPLAY_STAGES if s in set(data.y)],
        "pattern": [p.value for p in (ActivityPattern.CONTINUOUS_PLAY, ActivityPattern.SPECTATE_AND_PLAY)
                    if p.value in set(data.y)],
    }[task]
    if task == "stage":
        classes = [s.value for s in classes]
        y = [s.value for s in data.y]
    else:
        y = data.y
    info = {"task": task}
    if task == "title":
        g = cfg.grouper
        info.update({"window_s": g.window, "slot_s": g.slot, "variation": g.variation})
    info.update(meta or {})
    return forest.train(data.X, y, n_trees or int(hp["n_trees"]), max_depth or int(hp["max_depth"]),
                        rng_seed, classes, data.feature_names, info)


def per_class_accuracy(model: Ensemble, data: Dataset) -> dict:
    y = [v.value if hasattr(v, "value") else v for v in data.y]
    pred = model.predict_labels(data.X)
    out = {}
    for c in sorted(set(y), key=str):
        idx = [i for i, t in enumerate(y) if t == c]
        out[c] = float(np.mean([pred[i] == c for i in idx]))
    out["overall"] = float(np.mean([p == t for p, t in zip(pred, y)])) if y else float("nan")
    return out


# --------------------------------------------------------------------------
# Held-out evaluation

def stage_table(model: Ensemble, sessions: Iterable[tuple[np.ndarray, LabeledSession]],
                cfg: EngineConfig) -> dict[str, dict[str, dict]]:
    """Per-slot stage accuracy split by pattern family: {pattern: {stage: {accuracy, slots}}}."""
    rows: dict = {}
    for raw, lab in sessions:
        X, truth = stage_rows(raw, lab, cfg)
        if not truth:
            continue
        pred = model.predict_labels(X)
        fam = rows.setdefault(lab.pattern.value, {})
        for p, t in zip(pred, truth):
            hit = fam.setdefault(t.value, [0, 0])
            hit[0] += p == t.value
            hit[1] += 1
    return {pat: {st: {"accuracy": h[0] / h[1], "slots": h[1]}
                  for st, h in sorted(fam.items(), key=lambda kv: STAGE_INDEX[StageLabel(kv[0])])}
            for pat, fam in sorted(rows.items())}


@dataclass(frozen=True)
class StageRun:
    """Per-slot stages of one session, as seen by pattern inference."""

    session_id: str
    truth: ActivityPattern
    stages: list
    start: int
    duration: float


def stage_runs(sessions: Iterable[tuple[np.ndarray, LabeledSession]], cfg: EngineConfig,
               stage_model: Optional[Ensemble] = None) -> list[StageRun]:
    """Predicted stages when a stage model is given, ground truth otherwise."""
    out = []
    tcfg = cfg.tracker
    for raw, lab in sessions:
        if stage_model is not None:
            res = track_session(raw, stage_model, None, tcfg)
            stages, start = res.stages, res.first_gameplay_slot
        else:
            stages = lab.slot_stages(len(raw), tcfg.slot)
            start = next((i for i, s in enumerate(stages) if s is not StageLabel.LAUNCH), len(stages))
        out.append(StageRun(lab.session_id, lab.pattern, stages, start, len(raw) * tcfg.slot))
    return out


@dataclass(frozen=True)
class PatternOutcome:
    session_id: str
    truth: str
    predicted: str
    confidence: float
    decided_at: Optional[float]
    duration: float

    @property
    def decision_time(self) -> float:
        """Time to a decision; sessions never decided count their full duration."""
        return self.decided_at if self.decided_at is not None else self.duration


def pattern_outcomes(runs: Sequence[StageRun], pattern_model: Ensemble, cfg: EngineConfig,
                     threshold: Optional[float] = None) -> list[PatternOutcome]:
    tcfg = cfg.tracker
    if threshold is not None:
        tcfg = replace(tcfg, pattern_threshold=threshold)
    out = []
    for r in runs:
        _, pat, _ = latch_pattern(r.stages, r.start, pattern_model, tcfg)
        out.append(PatternOutcome(r.session_id, r.truth.value, pat.pattern.value, pat.confidence, pat.decided_at,
                                  r.duration))
    return out


def pattern_summary(outcomes: Sequence[PatternOutcome]) -> dict:
    """Session accuracy (undecided counts as wrong), per class, and mean decision time."""
    out: dict = {"sessions": len(outcomes)}
    if not outcomes:
        return out
    for c in sorted({o.truth for o in outcomes}):
        sel = [o for o in outcomes if o.truth == c]
        out[c] = float(np.mean([o.predicted == c for o in sel]))
    out["overall"] = float(np.mean([o.predicted == o.truth for o in outcomes]))
    out["decided_fraction"] = float(np.mean([o.decided_at is not None for o in outcomes]))
    out["mean_decision_s"] = float(np.mean([o.decision_time for o in outcomes]))
    return out


# --------------------------------------------------------------------------
# Analysis of one flow

@dataclass
class Models:
    title: Optional[Ensemble] = None
    stage: Optional[Ensemble] = None
    pattern: Optional[Ensemble] = None

    def check(self, cfg: EngineConfig) -> None:
        g = cfg.grouper
        if self.title is not None and self.title.n_features != g.n_features:
            raise ModelMismatch(f"title model expects {self.title.n_features} attributes; "
                                f"N={g.window}, T={g.slot} gives {g.n_features}")
        if self.stage is not None and self.stage.n_features != len(ATTRS):
            raise ModelMismatch(f"stage model expects {self.stage.n_features} attributes, not {len(ATTRS)}")
        if self.pattern is not None and self.pattern.n_features != 9:
            raise ModelMismatch(f"pattern model expects {self.pattern.n_features} attributes, not 9")


@dataclass
class SessionReport:
    session_id: str
    flow: str
    duration_s: float
    title: str
    title_confidence: float
    title_votes: dict
    pattern: str
    pattern_confidence: float
    pattern_decided_at: Optional[float]
    stages: list  # per slot
    slot_s: float
    raw: np.ndarray
    smoothed: np.ndarray
    objective: list = field(default_factory=list)  # per QoE interval
    effective: list = field(default_factory=list)
    qoe_throughput: list = field(default_factory=list)

    def stage_seconds(self) -> dict[str, float]:
        out = {s.value: 0.0 for s in StageLabel}
        for s in self.stages:
            out[s] += self.slot_s
        return out

    def to_dict(self) -> dict:
        qoe = None
        if self.objective:
            qoe = {
                "objective": [l.label for l in self.objective],
                "effective": [l.label for l in self.effective],
                "objective_session": session_level(self.objective).label,
                "effective_session": session_level(self.effective).label,
            }
        down = self.raw[:, 0] if len(self.raw) else np.zeros(0)
        return {
            "session_id": self.session_id,
            "flow": self.flow,
            "duration_s": self.duration_s,
            "title": {"label": self.title, "confidence": self.title_confidence, "votes": self.title_votes},
            "pattern": {"label": self.pattern, "confidence": self.pattern_confidence,
                        "decided_at": self.pattern_decided_at},
            "timeline": {"slot_s": self.slot_s, "stages": list(self.stages)},
            "summary": {
                "stage_minutes": {k: v / 60 for k, v in self.stage_seconds().items()},
                "mean_down_mbps": float(down.mean() / 1e6) if len(down) else 0.0,
                "gameplay_down_mbps": [float(v / 1e6) for v, s in zip(down, self.stages)
                                       if s != StageLabel.LAUNCH.value],
            },
            "qoe": qoe,
        }


def predict_title(cap: Capture, model: Ensemble, cfg: EngineConfig) -> tuple[str, float, dict]:
    """Title from downstream packets before N seconds only."""
    vec = title_vector(cap, cfg.grouper, cfg.learn_max_payload)
    pred = forest.predict(model, vec)
    label = pred.label if pred.confidence >= cfg.title_threshold else GameTitle.UNKNOWN.value
    return label, pred.confidence, {str(k): v for k, v in pred.votes.items()}


def analyze_flow(cap: Capture, models: Models, cfg: EngineConfig, session_id: str, flow: str = "",
                 qoe: Optional[Sequence[QoESample]] = None, table: Optional[CalibrationTable] = None
                 ) -> SessionReport:
    models.check(cfg)
    title, conf, votes = ("Unknown", 0.0, {})
    if models.title is not None:
        title, conf, votes = predict_title(cap, models.title, cfg)
    tcfg = cfg.tracker
    raw = flow_volumetrics(cap, tcfg.slot)
    if models.stage is not None:
        res = track_session(raw, models.stage, models.pattern, tcfg)
    else:
        smoothed, start = smooth_relative(raw, tcfg)
        res = TrackResult(raw, smoothed, [StageLabel.LAUNCH] * len(raw), start, TransitionMatrix(),
                          UNDECIDED, np.full(len(raw), np.nan))
    pattern = res.pattern
    report = SessionReport(
        session_id, flow, len(raw) * tcfg.slot, title, conf, votes,
        pattern.pattern.value if pattern else ActivityPattern.UNDECIDED.value,
        pattern.confidence if pattern else 0.0, pattern.decided_at if pattern else None,
        [s.value for s in res.stages], tcfg.slot, raw, res.smoothed)
    if qoe:
        table = table or (CalibrationTable.load(cfg.calibration_path))
        title_enum = GameTitle(title)
        for q in qoe:
            t = q.interval.index * q.interval.width
            slot = min(int(t // tcfg.slot), len(res.stages) - 1) if res.stages else 0
            stage = res.stages[slot] if res.stages else StageLabel.LAUNCH
            pat = (pattern.pattern if pattern and pattern.decided_at is not None and pattern.decided_at <= t + q.interval.width
                   else ActivityPattern.UNDECIDED)
            ctx = ContextSnapshot(title_enum, pat, stage)
            report.objective.append(objective_level(q, table))
            report.effective.append(effective_level(q, ctx, table))
            report.qoe_throughput.append(q.throughput)
    return report
