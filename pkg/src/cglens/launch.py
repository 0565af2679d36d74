"""Launch-window packet grouping (full / steady / sparse) and title features."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import Direction, PacketRecord


class GroupLabel(enum.IntEnum):
    FULL = 0
    STEADY = 1
    SPARSE = 2


GROUP_NAMES = ("full", "steady", "sparse")
METRIC_NAMES = ("ct_sum", "size_mean", "iat_mean")
NEIGHBORS_PER_SIDE = 2


@dataclass(frozen=True)
class GrouperParams:
    window: float = 5.0  # N, seconds
    slot: float = 1.0  # T, seconds
    variation: float = 0.10  # V, relative payload band
    max_payload: int = 1432

    def __post_init__(self):
        if not self.slot > 0 or not self.window > 0:
            raise ValueError("window and slot must be positive")
        ratio = self.window / self.slot
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"window {self.window} is not a multiple of slot {self.slot}")
        if not 0 < self.variation < 1:
            raise ValueError("variation must lie in (0, 1)")

    @property
    def n_slots(self) -> int:
        return int(round(self.window / self.slot))

    @property
    def n_features(self) -> int:
        return self.n_slots * len(GROUP_NAMES) * len(METRIC_NAMES) + 2 * len(GROUP_NAMES)


def feature_names(params: GrouperParams = GrouperParams()) -> list[str]:
    names = [f"{g}_{m}[{s}]" for s in range(params.n_slots) for g in GROUP_NAMES for m in METRIC_NAMES]
    names += [f"{g}_{m}" for g in GROUP_NAMES for m in ("ct_total", "bytes_total")]
    return names


def _slot_ids(ts: np.ndarray, width: float) -> np.ndarray:
    return np.floor(np.asarray(ts, float) / width).astype(np.int64)


def label_sizes(ts: np.ndarray, size: np.ndarray, params: GrouperParams) -> np.ndarray:
    """Vectorised group labelling of downstream launch packets.

    Full packets carry the maximum payload. Within each slot the remaining
    packets are ordered by (time, size, input order); each one polls its two
    nearest neighbours on either side and is Steady when a strict majority
    of the polled neighbours lie within +/-V of its own size.
    """
    ts = np.asarray(ts, float)
    size = np.asarray(size, np.int64)
    n = len(ts)
    labels = np.full(n, GroupLabel.SPARSE, dtype=np.int64)
    if n == 0:
        return labels
    full = size >= params.max_payload
    labels[full] = GroupLabel.FULL
    idx = np.flatnonzero(~full)
    if len(idx) == 0:
        return labels
    slots = _slot_ids(ts[idx], params.slot)
    order = np.lexsort((idx, size[idx], ts[idx], slots))
    idx, slots = idx[order], slots[order]
    s = size[idx].astype(float)
    m = len(idx)
    agree = np.zeros(m, np.int64)
    polled = np.zeros(m, np.int64)
    pos = np.arange(m)
    for d in range(1, NEIGHBORS_PER_SIDE + 1):
        for sign in (-1, 1):
            j = pos + sign * d
            ok = (j >= 0) & (j < m)
            jj = np.where(ok, j, 0)
            ok &= slots[jj] == slots
            polled += ok
            agree += ok & (np.abs(s[jj] - s) <= params.variation * s)
    steady = 2 * agree > polled
    labels[idx[steady]] = GroupLabel.STEADY
    return labels


def label_groups(packets: Sequence[PacketRecord], params: GrouperParams = GrouperParams()
                 ) -> list[tuple[PacketRecord, GroupLabel]]:
    for p in packets:
        if p.direction is not Direction.DOWNSTREAM:
            raise ValueError("label_groups expects downstream packets only")
        if p.timestamp >= params.window:
            raise ValueError(f"packet at {p.timestamp}s outside the {params.window}s launch window")
    ts = np.array([p.timestamp for p in packets], float)
    size = np.array([p.payload_size for p in packets], np.int64)
    labels = label_sizes(ts, size, params)
    return [(p, GroupLabel(int(l))) for p, l in zip(packets, labels)]


def group_features(ts: np.ndarray, size: np.ndarray, labels: np.ndarray,
                   params: GrouperParams) -> np.ndarray:
    """Per (slot, group) count / mean size / mean inter-arrival, then window totals."""
    ts = np.asarray(ts, float)
    size = np.asarray(size, np.int64)
    labels = np.asarray(labels, np.int64)
    n_slots = params.n_slots
    per_slot = np.zeros((n_slots, len(GROUP_NAMES), len(METRIC_NAMES)))
    totals = np.zeros((len(GROUP_NAMES), 2))
    inside = (ts >= 0) & (ts < params.window)
    slots = _slot_ids(ts, params.slot)
    for g in range(len(GROUP_NAMES)):
        gm = inside & (labels == g)
        totals[g] = (gm.sum(), size[gm].sum())
        for sl in range(n_slots):
            cell = gm & (slots == sl)
            k = int(cell.sum())
            if k == 0:
                continue
            t = np.sort(ts[cell])
            per_slot[sl, g] = (k, size[cell].mean(), np.diff(t).mean() if k > 1 else 0.0)
    return np.concatenate([per_slot.ravel(), totals.ravel()])


def learn_max_payload(ts: np.ndarray, size: np.ndarray, params: GrouperParams) -> int:
    """Modal per-slot maximum payload in the launch window.

    Falls back to the configured value unless the mode is the slot maximum
    in at least half of the non-empty slots.
    """
    ts = np.asarray(ts, float)
    size = np.asarray(size, np.int64)
    inside = ts < params.window
    if not inside.any():
        return params.max_payload
    slots = _slot_ids(ts[inside], params.slot)
    maxima = [int(size[inside][slots == s].max()) for s in np.unique(slots)]
    values, counts = np.unique(maxima, return_counts=True)
    best = counts.max()
    mode = int(values[counts == best].max())
    if 2 * best >= len(maxima):
        return mode
    return params.max_payload


def launch_features(ts: np.ndarray, size: np.ndarray, params: GrouperParams = GrouperParams(),
                    learn_max: bool = True) -> np.ndarray:
    """Feature vector from downstream launch packets (times relative to flow start)."""
    ts = np.asarray(ts, float)
    size = np.asarray(size, np.int64)
    keep = (ts >= 0) & (ts < params.window)
    ts, size = ts[keep], size[keep]
    if learn_max and len(ts):
        params = GrouperParams(params.window, params.slot, params.variation,
                               learn_max_payload(ts, size, params))
    return group_features(ts, size, label_sizes(ts, size, params), params)


@dataclass(frozen=True)
class LaunchFeatureVector:
    values: tuple[float, ...]
    params: GrouperParams = GrouperParams()

    def __post_init__(self):
        if len(self.values) != self.params.n_features:
            raise ValueError(f"expected {self.params.n_features} values, got {len(self.values)}")

    def __len__(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.array(self.values, float)

    def named(self) -> dict[str, float]:
        return dict(zip(feature_names(self.params), self.values))


def extract_features(labeled: Sequence[tuple[PacketRecord, GroupLabel]],
                     params: GrouperParams = GrouperParams()) -> LaunchFeatureVector:
    ts = np.array([p.timestamp for p, _ in labeled], float)
    size = np.array([p.payload_size for p, _ in labeled], np.int64)
    labels = np.array([int(l) for _, l in labeled], np.int64)
    return LaunchFeatureVector(tuple(group_features(ts, size, labels, params).tolist()), params)


def flow_volume_features(ts: np.ndarray, size: np.ndarray, params: GrouperParams = GrouperParams()
                         ) -> np.ndarray:
    """Baseline: per-slot downstream packet rate and throughput only."""
    ts = np.asarray(ts, float)
    size = np.asarray(size, np.int64)
    keep = (ts >= 0) & (ts < params.window)
    slots = _slot_ids(ts[keep], params.slot)
    counts = np.bincount(slots, minlength=params.n_slots)[: params.n_slots]
    nbytes = np.bincount(slots, weights=size[keep], minlength=params.n_slots)[: params.n_slots]
    return np.column_stack([counts / params.slot, nbytes * 8 / params.slot]).ravel()


def flow_volume_names(params: GrouperParams = GrouperParams()) -> list[str]:
    return [f"{m}[{s}]" for s in range(params.n_slots) for m in ("pkt_rate", "throughput")]


def write_feature_csv(path, rows: Iterable[tuple[str, np.ndarray]],
                      params: GrouperParams = GrouperParams(), label: Optional[dict] = None) -> None:
    """One row per session: session_id, optional label, then the feature columns."""
    names = feature_names(params)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["session_id"] + (["label"] if label is not None else []) + names)
        for sid, vec in rows:
            if len(vec) != len(names):
                raise ValueError(f"{sid}: feature arity {len(vec)} != {len(names)}")
            extra = [label[sid]] if label is not None else []
            w.writerow([sid] + extra + [repr(float(v)) for v in vec])


def read_feature_csv(path) -> tuple[list[str], list[str], np.ndarray, Optional[list[str]]]:
    """Returns (session_ids, feature_names, matrix, labels-or-None)."""
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = list(r)
    has_label = len(header) > 1 and header[1] == "label"
    start = 2 if has_label else 1
    sids = [row[0] for row in rows]
    labels = [row[1] for row in rows] if has_label else None
    X = np.array([[float(v) for v in row[start:]] for row in rows], float).reshape(len(rows), -1)
    return sids, header[start:], X, labels

