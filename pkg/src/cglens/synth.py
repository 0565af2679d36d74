"""Synthetic labeled cloud-game sessions and variation-based augmentation.

A session is planned second by second (launch schedule, then a semi-Markov
stage path with per-stage volume envelopes). Packets are realised from the
plan on demand, so per-slot volumetrics can be obtained without
materialising a full-length capture.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Optional

import numpy as np

from .capture import Capture, LabeledSession, LabelValidationError, ResolutionClass, StreamConfig
from .core import (CATALOG, GAMEPLAY_STAGES, ActivityPattern, FlowKey, GameTitle, SlotIndex,
                   StageLabel, Transport, parse_title)
from .qoe import QoESample

RESOLUTION_FACTOR = {"SD": 0.75, "HD": 0.85, "FHD": 1.0, "QHD": 1.15, "UHD": 1.3}  # launch packet rates
SPARSE_MIN_GAP = 0.25  # relative size gap kept between a sparse packet and its neighbours
STEADY_MIN_RATIO = 1.3  # minimum ratio between steady band centres sharing a slot
RTP_LEAD = (0x80, 0x90)


@dataclass(frozen=True)
class SteadyBand:
    center: int
    spread: float  # relative half-width of the size band
    rate: float  # packets per second at FHD


@dataclass(frozen=True)
class LaunchSlotSpec:
    full_rate: float
    steady: tuple[SteadyBand, ...]
    sparse_rate: float
    sparse_range: tuple[int, int]


@dataclass(frozen=True)
class StageLevel:
    down: tuple[float, float]  # fraction of session peak
    up: tuple[float, float]
    up_spike_prob: float = 0.0
    up_spike: tuple[float, float] = (0.5, 0.9)


@dataclass(frozen=True)
class StageDynamics:
    jump: np.ndarray  # 3x3 over (Idle, Passive, Active), zero diagonal
    dwell_mean: tuple[float, float, float]
    dwell_min: tuple[float, float, float]
    initial: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def occupancy(self) -> np.ndarray:
        """Long-run share of time in each stage."""
        jump = np.asarray(self.jump, float)
        w, v = np.linalg.eig(jump.T)
        pi = np.real(v[:, np.argmin(np.abs(w - 1))])
        pi = pi / pi.sum()
        share = pi * np.asarray(self.dwell_mean)
        return share / share.sum()


@dataclass(frozen=True)
class TitleProfile:
    name: str
    title: GameTitle
    genre: str
    pattern: ActivityPattern
    launch_schedule: tuple[LaunchSlotSpec, ...]
    stage_levels: dict  # StageLabel -> StageLevel
    dynamics: StageDynamics
    launch_duration: tuple[int, int] = (10, 40)
    bandwidth_mbps: dict = field(default_factory=dict)  # resolution -> (lo, hi)
    bandwidth_scale: float = 1.0
    up_peak_mbps: tuple[float, float] = (0.6, 1.2)
    max_payload: int = 1432

    def validate(self, variation: float = 0.10) -> None:
        if self.title is not GameTitle.UNKNOWN and CATALOG[self.title].pattern is not self.pattern:
            raise LabelValidationError(f"{self.name}: pattern contradicts the title catalog")
        for i, slot in enumerate(self.launch_schedule):
            centers = sorted(b.center for b in slot.steady)
            for b in slot.steady:
                if not b.spread < variation:
                    raise LabelValidationError(f"{self.name} slot {i}: steady spread {b.spread} >= {variation}")
                if not 0 < b.center < self.max_payload:
                    raise LabelValidationError(f"{self.name} slot {i}: steady centre outside payload range")
            for a, b in zip(centers, centers[1:]):
                if b < STEADY_MIN_RATIO * a:
                    raise LabelValidationError(f"{self.name} slot {i}: steady centres {a} and {b} too close")
            lo, hi = slot.sparse_range
            if not 0 < lo < hi < self.max_payload:
                raise LabelValidationError(f"{self.name} slot {i}: bad sparse range {slot.sparse_range}")
        jump = np.asarray(self.dynamics.jump, float)
        if jump.shape != (3, 3) or np.any(np.diag(jump) != 0) or not np.allclose(jump.sum(axis=1), 1):
            raise LabelValidationError(f"{self.name}: jump matrix must be row-stochastic with zero diagonal")
        if any(m < lo or lo < 1 for m, lo in zip(self.dynamics.dwell_mean, self.dynamics.dwell_min)):
            raise LabelValidationError(f"{self.name}: dwell means must be >= dwell minima >= 1")
        if self.pattern is ActivityPattern.CONTINUOUS_PLAY:
            passive = self.dynamics.occupancy()[GAMEPLAY_STAGES.index(StageLabel.PASSIVE)]
            if passive >= 0.05:
                raise LabelValidationError(f"{self.name}: continuous-play passive share {passive:.3f} >= 0.05")

    def peak_range(self, resolution: ResolutionClass) -> tuple[float, float]:
        lo, hi = self.bandwidth_mbps[ResolutionClass(resolution).value]
        return lo * self.bandwidth_scale, hi * self.bandwidth_scale


# --------------------------------------------------------------------------
# Profile files

def _level(d: dict) -> StageLevel:
    return StageLevel(tuple(d["down"]), tuple(d["up"]), d.get("up_spike_prob", 0.0),
                      tuple(d.get("up_spike", (0.5, 0.9))))


def _dynamics(d: dict) -> StageDynamics:
    order = [s.value for s in GAMEPLAY_STAGES]
    jump = np.array([[d["jump"][a].get(b, 0.0) for b in order] for a in order], float)
    return StageDynamics(jump, tuple(float(d["dwell_mean"][s]) for s in order),
                         tuple(float(d["dwell_min"][s]) for s in order),
                         tuple(float(d.get("initial", {}).get(s, 0.0)) for s in order)
                         if "initial" in d else (0.0, 0.0, 1.0))


def _slot(d: dict) -> LaunchSlotSpec:
    bands = tuple(SteadyBand(int(b["center"]), float(b["spread"]), float(b["rate"])) for b in d["steady"])
    return LaunchSlotSpec(float(d["full_rate"]), bands, float(d["sparse_rate"]),
                          tuple(int(v) for v in d["sparse_range"]))


def load_profiles(path=None, variation: float = 0.10) -> dict[str, TitleProfile]:
    """Load and validate title profiles; the packaged file is used by default."""
    if path is None:
        text = resources.files("cglens").joinpath("data/profiles.json").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    doc = json.loads(text)
    levels = {StageLabel(k): _level(v) for k, v in doc["stage_levels"].items()}
    templates = {k: _dynamics(v) for k, v in doc["dynamics"].items()}
    out = {}
    for p in doc["profiles"]:
        title = parse_title(p["title"])
        pattern = ActivityPattern(p["pattern"]) if "pattern" in p else CATALOG[title].pattern
        genre = p.get("genre") or (CATALOG[title].genre if title in CATALOG else "Unknown")
        prof = TitleProfile(
            name=p["name"], title=title, genre=genre, pattern=pattern,
            launch_schedule=tuple(_slot(s) for s in p["launch_schedule"]),
            stage_levels={**levels, **{StageLabel(k): _level(v) for k, v in p.get("stage_levels", {}).items()}},
            dynamics=templates[p["dynamics"]],
            launch_duration=tuple(p.get("launch_duration", doc.get("launch_duration", (10, 40)))),
            bandwidth_mbps={k: tuple(v) for k, v in doc["bandwidth_mbps"].items()},
            bandwidth_scale=float(p.get("bandwidth_scale", 1.0)),
            up_peak_mbps=tuple(doc.get("up_peak_mbps", (0.6, 1.2))),
            max_payload=int(doc.get("max_payload", 1432)),
        )
        prof.validate(variation)
        out[prof.name] = prof
    return out


def catalog_profiles(profiles: dict[str, TitleProfile]) -> list[TitleProfile]:
    """Profiles of catalog titles, in catalog order."""
    by_title = {p.title: p for p in profiles.values() if p.title is not GameTitle.UNKNOWN}
    return [by_title[t] for t in CATALOG if t in by_title]


# --------------------------------------------------------------------------
# Session planning

@dataclass
class SessionPlan:
    """Per-second plan of one session; gameplay seconds carry exact packet totals."""

    profile: TitleProfile
    config: StreamConfig
    duration: int
    launch_end: int
    stages: list  # StageLabel per second
    down_bytes: np.ndarray  # per gameplay second (0 for launch seconds)
    down_count: np.ndarray
    up_bytes: np.ndarray  # per second, every second
    up_count: np.ndarray
    down_peak_bps: float
    up_peak_bps: float
    seeds: tuple  # SeedSequence children for packet realisation and QoE


def _stage_path(dyn: StageDynamics, start: int, end: int, rng: np.random.Generator) -> list[tuple[int, StageLabel]]:
    marks = []
    t = start
    k = int(rng.choice(3, p=np.asarray(dyn.initial) / np.sum(dyn.initial)))
    while t < end:
        marks.append((t, GAMEPLAY_STAGES[k]))
        lo, mean = dyn.dwell_min[k], dyn.dwell_mean[k]
        dwell = lo + (rng.exponential(mean - lo) if mean > lo else 0.0)
        t += max(1, int(round(dwell)))
        k = int(rng.choice(3, p=dyn.jump[k]))
    return marks


def plan_session(profile: TitleProfile, duration: float, config: StreamConfig = StreamConfig(),
                 rng_seed: int = 0, window: float = 5.0) -> SessionPlan:
    if not duration > window:
        raise LabelValidationError(f"duration {duration}s must exceed the {window}s launch window")
    duration = int(math.ceil(duration))
    root = np.random.SeedSequence(rng_seed)
    plan_seq, launch_seq, game_seq, qoe_seq = root.spawn(4)
    rng = np.random.default_rng(plan_seq)
    lo, hi = profile.launch_duration
    launch_end = int(min(max(rng.integers(lo, hi + 1), math.ceil(window)), duration))
    down_peak = rng.uniform(*profile.peak_range(config.resolution_class)) * 1e6
    up_peak = rng.uniform(*profile.up_peak_mbps) * 1e6
    marks = _stage_path(profile.dynamics, launch_end, duration, rng)
    stages = [StageLabel.LAUNCH] * launch_end
    for (t0, st), nxt in zip(marks, marks[1:] + [(duration, None)]):
        stages.extend([st] * (min(nxt[0], duration) - t0))
    down_b = np.zeros(duration, np.int64)
    down_n = np.zeros(duration, np.int64)
    up_b = np.zeros(duration, np.int64)
    up_n = np.zeros(duration, np.int64)
    launch_up = profile.stage_levels[StageLabel.LAUNCH].up
    mp = profile.max_payload
    for s, st in enumerate(stages):
        lvl = profile.stage_levels[st]
        if st is not StageLabel.LAUNCH:
            b = int(round(rng.uniform(*lvl.down) * down_peak / 8))
            down_b[s] = b
            down_n[s] = math.ceil(b / (mp * rng.uniform(0.82, 0.95)))
        spike = lvl.up_spike_prob > 0 and rng.random() < lvl.up_spike_prob
        frac = rng.uniform(*(lvl.up_spike if spike else (launch_up if st is StageLabel.LAUNCH else lvl.up)))
        b = int(round(frac * up_peak / 8))
        up_b[s] = b
        up_n[s] = max(1, math.ceil(b / rng.uniform(90, 150)))
    return SessionPlan(profile, config, duration, launch_end, stages, down_b, down_n, up_b, up_n,
                       down_peak, up_peak, (launch_seq, game_seq, qoe_seq))


# --------------------------------------------------------------------------
# Packet realisation

def _even_sizes(total: int, n: int) -> np.ndarray:
    q, r = divmod(int(total), int(n))
    sizes = np.full(n, q, np.int64)
    sizes[:r] += 1
    return sizes


def _spread_times(second: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """n increasing integer-microsecond times inside one second."""
    if n == 0:
        return np.zeros(0, np.int64)
    base = (np.arange(n) + rng.uniform(0.05, 0.95, n)) / n
    return second * 1_000_000 + np.floor(base * 1e6).astype(np.int64)


def _launch_slot(spec: LaunchSlotSpec, second: int, factor: float, max_payload: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Downstream launch packets of one second: (times_us, sizes)."""
    lo_t, hi_t = 0.001, 0.998
    trains = []
    for band in spec.steady:
        n = int(rng.poisson(band.rate * factor))
        if n == 0:
            continue
        m = max(1, int(round(n / 11)))
        for part in np.array_split(np.arange(n), m):
            if len(part):
                trains.append((band, len(part)))
    order = rng.permutation(len(trains))
    seg = (hi_t - lo_t) / max(1, len(trains))
    t_parts, s_parts, kinds = [], [], []
    busy = []
    for slot_i, ti in enumerate(order):
        band, k = trains[ti]
        start = lo_t + slot_i * seg + rng.uniform(0, max(0.0, seg - 0.02))
        gaps = rng.uniform(0.0003, 0.001, k)
        times = start + np.concatenate([[0.0], np.cumsum(gaps[1:])])
        busy.append((times[0] - 0.002, times[-1] + 0.002))
        sizes = np.round(band.center * (1 + rng.uniform(-band.spread, band.spread, k))).astype(np.int64)
        t_parts.append(times)
        s_parts.append(sizes)
        kinds.append(np.ones(k, np.int8))
    n_sparse = int(rng.poisson(spec.sparse_rate * factor))
    sparse_t = []
    for _ in range(n_sparse):
        for _try in range(20):
            t = rng.uniform(lo_t, hi_t)
            if not any(a <= t <= b for a, b in busy):
                break
        sparse_t.append(t)
    t_parts.append(np.array(sparse_t, float))
    s_parts.append(np.zeros(n_sparse, np.int64))
    kinds.append(np.full(n_sparse, 2, np.int8))
    n_full = int(rng.poisson(spec.full_rate * factor))
    t_parts.append(rng.uniform(lo_t, hi_t, n_full))
    s_parts.append(np.full(n_full, max_payload, np.int64))
    kinds.append(np.zeros(n_full, np.int8))
    t = np.concatenate(t_parts)
    s = np.concatenate(s_parts)
    kind = np.concatenate(kinds)
    order = np.argsort(t, kind="stable")
    t, s, kind = t[order], s[order], kind[order]
    _assign_sparse_sizes(s, kind, spec, rng)
    us = second * 1_000_000 + np.floor(t * 1e6).astype(np.int64)
    us = np.maximum.accumulate(us - np.arange(len(us))) + np.arange(len(us))  # strictly increasing
    return us, s


def _assign_sparse_sizes(sizes: np.ndarray, kind: np.ndarray, spec: LaunchSlotSpec,
                         rng: np.random.Generator) -> None:
    """Draw sparse sizes so each one clearly differs from nearby non-full packets."""
    nonfull = np.flatnonzero(kind != 0)
    lo, hi = spec.sparse_range
    centers = [b.center for b in spec.steady]
    for pos, i in enumerate(nonfull):
        if kind[i] != 2:
            continue
        near = [sizes[nonfull[j]] for j in range(max(0, pos - 2), min(len(nonfull), pos + 3))
                if j != pos and (kind[nonfull[j]] == 1 or j < pos)]
        near += centers
        cand = int(rng.integers(lo, hi + 1))
        for _ in range(64):
            if all(abs(cand - v) >= SPARSE_MIN_GAP * max(cand, v) for v in near):
                break
            cand = int(rng.integers(lo, hi + 1))
        sizes[i] = cand  # later sparse packets check against this one


SERVER_ADDR = "203.0.113.10"
CLIENT_ADDR = "192.168.1.20"


def flow_keys(rng_seed: int) -> tuple[FlowKey, FlowKey]:
    """(downstream, upstream) keys of a synthetic streaming flow."""
    rng = np.random.default_rng(np.random.SeedSequence([rng_seed, 7]))
    sport = int(rng.integers(49000, 49100))
    cport = int(rng.integers(50000, 60000))
    down = FlowKey(SERVER_ADDR, sport, CLIENT_ADDR, cport, Transport.UDP)
    return down, down.reversed()


@dataclass
class SynthSession:
    plan: SessionPlan
    labels: LabeledSession
    rng_seed: int

    @property
    def duration(self) -> int:
        return self.plan.duration

    def launch_capture(self, until: Optional[float] = None) -> Capture:
        """Streaming-flow packets of the launch phase (optionally truncated)."""
        plan = self.plan
        end = plan.launch_end if until is None else min(plan.launch_end, int(math.ceil(until)))
        rng = np.random.default_rng(plan.seeds[0])
        factor = RESOLUTION_FACTOR[plan.config.resolution_class.value]
        sched = plan.profile.launch_schedule
        ts, size, kidx = [], [], []
        for s in range(end):
            t, sz = _launch_slot(sched[min(s, len(sched) - 1)], s, factor, plan.profile.max_payload, rng)
            ts.append(t)
            size.append(sz)
            kidx.append(np.zeros(len(t), np.int64))
            n_up = int(plan.up_count[s])
            ts.append(_spread_times(s, n_up, rng))
            size.append(_even_sizes(plan.up_bytes[s], n_up))
            kidx.append(np.ones(n_up, np.int64))
        cap = self._table(ts, size, kidx, rng)
        return cap.until(until) if until is not None else cap

    def gameplay_capture(self, start: Optional[int] = None, end: Optional[int] = None) -> Capture:
        plan = self.plan
        start = plan.launch_end if start is None else max(start, plan.launch_end)
        end = plan.duration if end is None else min(end, plan.duration)
        ts, size, kidx = [], [], []
        for s in range(start, end):
            rng = np.random.default_rng(np.random.SeedSequence([self.rng_seed, 11, s]))
            nd, nu = int(plan.down_count[s]), int(plan.up_count[s])
            ts += [_spread_times(s, nd, rng), _spread_times(s, nu, rng)]
            size += [_even_sizes(plan.down_bytes[s], nd), _even_sizes(plan.up_bytes[s], nu)]
            kidx += [np.zeros(nd, np.int64), np.ones(nu, np.int64)]
        return self._table(ts, size, kidx, np.random.default_rng(np.random.SeedSequence([self.rng_seed, 13, start])))

    def _table(self, ts, size, kidx, rng) -> Capture:
        ts = np.concatenate(ts) if ts else np.zeros(0, np.int64)
        size = np.concatenate(size) if size else np.zeros(0, np.int64)
        kidx = np.concatenate(kidx) if kidx else np.zeros(0, np.int64)
        order = np.argsort(ts, kind="stable")
        lead = np.array(RTP_LEAD, np.int64)[rng.integers(0, 2, len(ts))]
        return Capture(ts[order], size[order], kidx[order], list(flow_keys(self.rng_seed)), lead)

    def capture(self) -> Capture:
        """The whole streaming flow as one table (large for long sessions)."""
        return Capture.concat([self.launch_capture(), self.gameplay_capture()])

    def volumetrics(self, width: float = 1.0) -> np.ndarray:
        """Per-slot raw volumetrics, identical to measuring the realised capture."""
        from .activity import volumetrics_series
        plan = self.plan
        launch = self.launch_capture()
        n_slots = int(math.ceil(plan.duration / width))
        out = volumetrics_series(launch.ts, launch.size, launch.key_index == 0, width, n_slots)
        secs = np.arange(plan.launch_end, plan.duration)
        if len(secs):
            slots = np.floor(secs / width).astype(np.int64)
            for col, vals in enumerate((plan.down_bytes * 8, plan.up_bytes * 8, plan.down_count, plan.up_count)):
                out[:, col] += np.bincount(slots, weights=vals[secs].astype(float), minlength=n_slots)[:n_slots] / width
        return out

    def qoe_samples(self) -> list[QoESample]:
        """Per-second QoE measurements consistent with the planned traffic."""
        plan = self.plan
        rng = np.random.default_rng(plan.seeds[2])
        fps = plan.config.frame_rate_setting
        vol = self.volumetrics(1.0)
        out = []
        for s, st in enumerate(plan.stages):
            if st is StageLabel.ACTIVE:
                fr = fps * rng.uniform(0.85, 1.0)
            elif st is StageLabel.PASSIVE:
                fr = fps * rng.uniform(0.45, 0.75)
            elif st is StageLabel.IDLE:
                fr = rng.uniform(10, 28)
            else:
                fr = fps * rng.uniform(0.5, 1.0)
            lat = rng.uniform(10, 35) if rng.random() > 0.01 else rng.uniform(50, 150)
            loss = rng.uniform(0, 0.0005) if rng.random() > 0.01 else rng.uniform(0.002, 0.02)
            out.append(QoESample(round(min(fr, fps), 2), float(vol[s, 0]), round(lat, 2),
                                 round(loss, 6), SlotIndex(s, 1.0)))
        return out


def synthesize(profile: TitleProfile, duration: float, config: StreamConfig = StreamConfig(),
               rng_seed: int = 0, session_id: Optional[str] = None, window: float = 5.0,
               variation: float = 0.10) -> SynthSession:
    """Plan a labeled session; packets are realised lazily from the plan."""
    profile.validate(variation)
    plan = plan_session(profile, duration, config, rng_seed, window)
    marks = [(0.0, StageLabel.LAUNCH)]
    for s in range(1, plan.duration):
        if plan.stages[s] is not plan.stages[s - 1]:
            marks.append((float(s), plan.stages[s]))
    sid = session_id or f"{profile.name.lower().replace(' ', '_').replace(':', '')}-{rng_seed}"
    labels = LabeledSession(sid, profile.title, profile.genre, profile.pattern, tuple(marks), config,
                            profile.name)
    return SynthSession(plan, labels, rng_seed)


def random_config(rng: np.random.Generator) -> StreamConfig:
    res = ResolutionClass(rng.choice([r.value for r in ResolutionClass]))
    fps = int(rng.choice([30, 60, 120], p=[0.15, 0.7, 0.15]))
    platform = str(rng.choice(["Windows/app", "macOS/app", "Android/browser", "Windows/browser"]))
    return StreamConfig(res, fps, platform)


# --------------------------------------------------------------------------
# Background traffic for capture files

def background_flows(duration: float, rng_seed: int = 0) -> Capture:
    """A DNS-like exchange and a TCP bulk download, both non-streaming."""
    rng = np.random.default_rng(np.random.SeedSequence([rng_seed, 17]))
    dns = FlowKey("192.168.1.20", int(rng.integers(40000, 45000)), "192.0.2.53", 53, Transport.UDP)
    web = FlowKey("198.51.100.7", 443, "192.168.1.20", int(rng.integers(45000, 49000)), Transport.TCP)
    t_dns = np.sort(rng.choice(int(duration * 1e6), 10, replace=False))
    k_dns = np.arange(10) % 2  # query, reply
    s_dns = np.where(k_dns == 0, rng.integers(30, 60, 10), rng.integers(60, 200, 10))
    n_web = int(min(duration, 4.0) * 1500)
    t_web = np.sort(rng.choice(int(min(duration, 4.0) * 1e6), n_web, replace=False)) + int(0.2e6)
    parts = [
        Capture(t_dns, s_dns, k_dns, [dns, dns.reversed()], rng.integers(0, 256, 10)),
        Capture(t_web, np.full(n_web, 1448), np.zeros(n_web, np.int64), [web], rng.integers(0, 256, n_web)),
    ]
    return Capture.concat(parts)


# --------------------------------------------------------------------------
# Augmentation

@dataclass(frozen=True)
class AugmentParams:
    size_jitter: float = 0.02  # relative
    time_jitter: float = 0.002  # seconds
    rng_seed: int = 0
    variation: float = 0.10  # V the augmented data must stay labelable under
    slot: float = 1.0  # shifted packets never leave their original slot of this width

    def __post_init__(self):
        if not 0 <= self.size_jitter < self.variation / 2:
            raise ValueError(f"size_jitter must lie in [0, V/2) = [0, {self.variation / 2})")
        if self.time_jitter < 0:
            raise ValueError("time_jitter must be non-negative")


def augment(capture: Capture, labels: LabeledSession, params: AugmentParams,
            max_payload: int = 1432, suffix: Optional[str] = None) -> tuple[Capture, LabeledSession]:
    """Jitter payload sizes and arrival times; labels are carried over unchanged.

    Sizes within one slot share a random factor in 1 +/- size_jitter, so
    their relative differences (and group labels) survive. Full-size
    packets keep their size. Time shifts are clipped to half the
    gap to each neighbour (so order is preserved and no ties appear) and
    to the packet's original slot.
    """
    rng = np.random.default_rng(params.rng_seed)
    n = len(capture)
    size = capture.size.copy()
    width = int(round(params.slot * 1e6))
    if params.size_jitter > 0 and n:
        # one factor per slot keeps within-slot size ratios, hence group labels
        slot_ids = capture.ts_us // width
        first, inverse = np.unique(slot_ids, return_inverse=True)
        u = rng.uniform(-params.size_jitter, params.size_jitter, len(first))[inverse]
        jittered = np.round(size * (1 + u)).astype(np.int64)
        jittered = np.clip(jittered, 1, max_payload - 1)
        size = np.where(size >= max_payload, size, np.where(size > 0, jittered, 0))
    ts = capture.ts_us.copy()
    if params.time_jitter > 0 and n:
        shift = np.round(rng.uniform(-params.time_jitter, params.time_jitter, n) * 1e6).astype(np.int64)
        gap = np.diff(ts)
        room_prev = np.concatenate([[ts[0]], np.maximum(gap - 1, 0) // 2])
        room_next = np.concatenate([np.maximum(gap - 1, 0) // 2, [np.iinfo(np.int64).max // 4]])
        slot_lo = (ts // width) * width
        lo = np.maximum(ts - room_prev, slot_lo) - ts
        hi = np.minimum(ts + room_next, slot_lo + width - 1) - ts
        tied = np.concatenate([[False], gap == 0]) | np.concatenate([gap == 0, [False]])
        shift = np.where(tied, 0, np.clip(shift, lo, hi))
        ts = ts + shift
    out = Capture(ts, size, capture.key_index.copy(), list(capture.keys), capture.lead.copy())
    new_labels = labels if suffix is None else replace(labels, session_id=labels.session_id + suffix)
    return out, new_labels
