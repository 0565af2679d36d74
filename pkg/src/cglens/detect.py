"""Rule-based detection of cloud-game RTP streaming flows."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .capture import Capture
from .core import Direction, FlowKey, PacketRecord, Transport, canonicalize


@dataclass(frozen=True)
class DetectorConfig:
    probe_window_s: float = 3.0
    rtp_fraction: float = 0.95
    min_down_mbps: float = 3.0
    min_down_pps: float = 100.0
    companion_fraction: float = 0.66
    accept_score: float = 1.0

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "DetectorConfig":
        return cls(**(d or {}))


@dataclass(frozen=True)
class StreamingFlow:
    key: FlowKey  # canonical: server -> client
    first_packet_at: float  # seconds, on the input stream's clock
    detector_score: float
    server_side: tuple[str, int]


@dataclass
class DetectionResult:
    flows: list[StreamingFlow]
    # Per accepted flow: packets re-based to the flow's first packet, with
    # keys[0] the downstream (server -> client) orientation.
    packets: dict[FlowKey, Capture]
    stats: dict = field(default_factory=dict)


def _is_rtp_v2(lead: np.ndarray) -> np.ndarray:
    return (lead >= 0) & ((lead >> 6) == 2)


def evaluate_probe(transport: Transport, t_rel: np.ndarray, size: np.ndarray, lead: np.ndarray,
                   from_a: np.ndarray, cfg: DetectorConfig) -> tuple[float, bool]:
    """Score one flow's probe window.

    `from_a` marks packets sent by endpoint A. Returns (score, a_is_server):
    the heavier sender is taken as the server. Score is the share of the
    five predicates that hold.
    """
    win = cfg.probe_window_s
    bytes_a = int(size[from_a].sum())
    bytes_b = int(size[~from_a].sum())
    a_is_server = bytes_a >= bytes_b
    down = from_a if a_is_server else ~from_a
    n_down = int(down.sum())
    checks = []
    checks.append(transport is Transport.UDP)
    checks.append(n_down > 0 and _is_rtp_v2(lead[down]).mean() >= cfg.rtp_fraction)
    down_bytes = bytes_a if a_is_server else bytes_b
    checks.append(down_bytes * 8 / win >= cfg.min_down_mbps * 1e6)
    checks.append(n_down / win >= cfg.min_down_pps)
    n_sub = max(1, int(np.ceil(win - 1e-9)))
    up_t = t_rel[~down]
    occupied = len(np.unique(np.minimum(np.floor(up_t).astype(int), n_sub - 1))) if len(up_t) else 0
    up_bytes = bytes_b if a_is_server else bytes_a
    checks.append(occupied / n_sub >= cfg.companion_fraction and up_bytes < down_bytes)
    return sum(checks) / len(checks), a_is_server


def _flow_table(keys: list[FlowKey], server: tuple[str, int], t0_us: int, ts_us, size, from_server,
                lead) -> Capture:
    canon = keys[0] if keys[0].src == server else keys[0].reversed()
    ts = np.asarray(ts_us, np.int64) - t0_us
    kidx = np.where(np.asarray(from_server, bool), 0, 1)
    return Capture(ts, np.asarray(size, np.int64), kidx, [canon, canon.reversed()],
                   np.asarray(lead, np.int64))


def detect_table(capture: Capture, cfg: DetectorConfig = DetectorConfig()) -> DetectionResult:
    """Detect streaming flows in a whole capture table at once."""
    canon = [canonicalize(k) for k in capture.keys]
    groups: dict[FlowKey, list[int]] = {}
    for i, c in enumerate(canon):
        groups.setdefault(c, []).append(i)
    flows, packets = [], {}
    rejected = 0
    order = []
    for c, idxs in groups.items():
        mask = np.isin(capture.key_index, idxs)
        if not mask.any():
            continue
        order.append((int(capture.ts_us[mask][0]), c, mask))
    for first_us, c, mask in sorted(order, key=lambda x: (x[0], x[1])):
        ts_us = capture.ts_us[mask]
        from_a = np.array([capture.keys[k].src == c.src for k in capture.key_index[mask]], bool)
        probe = ts_us < first_us + round(cfg.probe_window_s * 1e6)
        t_rel = (ts_us[probe] - first_us) / 1e6
        score, a_srv = evaluate_probe(c.transport, t_rel, capture.size[mask][probe],
                                      capture.lead[mask][probe], from_a[probe], cfg)
        if score < cfg.accept_score:
            rejected += 1
            continue
        server = c.src if a_srv else c.dst
        key = canonicalize(c, server)
        flows.append(StreamingFlow(key, first_us / 1e6, score, server))
        from_server = from_a if a_srv else ~from_a
        packets[key] = _flow_table([key], server, first_us, ts_us, capture.size[mask],
                                   from_server, capture.lead[mask])
    return DetectionResult(flows, packets, {"flows_seen": len(order), "flows_rejected": rejected,
                                            "flows_accepted": len(flows)})


class _FlowState:
    __slots__ = ("first", "buffer", "decided", "accepted", "server", "ts", "size", "from_a", "lead")

    def __init__(self, first: float):
        self.first = first
        self.buffer: list[PacketRecord] = []
        self.decided = False
        self.accepted = False
        self.server = None
        self.ts, self.size, self.from_a, self.lead = [], [], [], []


class FlowDetector:
    """Incremental detector: feed time-ordered records, then `finish()`.

    Each flow is decided once its life reaches the probe window (or at the
    end of input); accepted flows are never retracted.
    """

    def __init__(self, cfg: DetectorConfig = DetectorConfig()):
        self.cfg = cfg
        self._flows: dict[FlowKey, _FlowState] = {}
        self._order: list[FlowKey] = []
        self.accepted: list[StreamingFlow] = []

    def feed(self, rec: PacketRecord) -> None:
        key = rec.flow
        st = self._flows.get(key)
        if st is None:
            st = self._flows[key] = _FlowState(rec.timestamp)
            self._order.append(key)
        if not st.decided:
            if round(rec.timestamp * 1e6) >= round(st.first * 1e6) + round(self.cfg.probe_window_s * 1e6):
                self._decide(key, st)
            else:
                st.buffer.append(rec)
                return
        if st.accepted:
            self._append(st, rec)

    def _append(self, st: _FlowState, rec: PacketRecord) -> None:
        st.ts.append(round(rec.timestamp * 1e6))
        st.size.append(rec.payload_size)
        st.from_a.append(rec.direction is Direction.DOWNSTREAM)
        st.lead.append(-1 if rec.lead_byte is None else rec.lead_byte)

    def _decide(self, key: FlowKey, st: _FlowState) -> None:
        st.decided = True
        buf = st.buffer
        st.buffer = []
        first_us = round(st.first * 1e6)
        t_rel = np.array([(round(r.timestamp * 1e6) - first_us) / 1e6 for r in buf])
        size = np.array([r.payload_size for r in buf], np.int64)
        lead = np.array([-1 if r.lead_byte is None else r.lead_byte for r in buf], np.int64)
        from_a = np.array([r.direction is Direction.DOWNSTREAM for r in buf], bool)
        score, a_srv = evaluate_probe(key.transport, t_rel, size, lead, from_a, self.cfg)
        if score < self.cfg.accept_score:
            return
        st.accepted = True
        st.server = key.src if a_srv else key.dst
        self.accepted.append(StreamingFlow(canonicalize(key, st.server), st.first, score, st.server))
        for r in buf:
            self._append(st, r)

    def finish(self) -> DetectionResult:
        for key in self._order:
            st = self._flows[key]
            if not st.decided:
                self._decide(key, st)
        packets = {}
        for key in self._order:
            st = self._flows[key]
            if not st.accepted:
                continue
            from_a = np.array(st.from_a, bool)
            from_server = from_a if st.server == key.src else ~from_a
            canon = canonicalize(key, st.server)
            packets[canon] = _flow_table([canon], st.server, round(st.first * 1e6), st.ts, st.size,
                                         from_server, st.lead)
        flows = sorted(self.accepted, key=lambda f: (round(f.first_packet_at * 1e6), f.key))
        n = len(self._order)
        return DetectionResult(flows, packets, {"flows_seen": n, "flows_rejected": n - len(flows),
                                                "flows_accepted": len(flows)})


def detect(records: Iterable[PacketRecord], cfg: DetectorConfig = DetectorConfig()) -> DetectionResult:
    det = FlowDetector(cfg)
    for rec in records:
        det.feed(rec)
    return det.finish()
