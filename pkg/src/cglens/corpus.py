"""Corpus directories on disk: synthetic session files, manifest, and flow loading."""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .capture import Capture, LabeledSession, read_capture_table, read_labels, write_capture, write_labels
from .config import EngineConfig
from .detect import detect_table
from .qoe import write_samples
from .synth import AugmentParams, TitleProfile, augment, background_flows, random_config, synthesize

log = logging.getLogger(__name__)

MANIFEST = "manifest.csv"
MANIFEST_COLUMNS = ("session_id", "group", "title", "pattern", "duration_s", "seed", "capture", "labels", "qoe")
# Enough stream time to hold the detector probe and the launch window for flows starting late.
TITLE_READ_S = 30.0


class NoStreamingFlow(RuntimeError):
    pass


@dataclass(frozen=True)
class CorpusEntry:
    session_id: str
    group: str  # originating session; augmented variants share it
    title: str
    pattern: str
    duration_s: float
    seed: int
    capture: Path
    labels: Path
    qoe: Optional[Path] = None

    def read_labels(self) -> LabeledSession:
        return read_labels(self.labels)


def map_sessions(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Apply `fn` to every item, optionally in worker processes; results keep item order."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


# --------------------------------------------------------------------------
# Writing

def _slug(name: str) -> str:
    keep = "".join(c.lower() if c.isalnum() else "_" for c in name)
    return "_".join(p for p in keep.split("_") if p)


def session_seed(seed: int, profile_index: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, profile_index, index]).generate_state(1)[0])


@dataclass(frozen=True)
class SynthJob:
    profile: TitleProfile
    profile_index: int
    index: int
    seed: int
    duration: float
    out_dir: str
    window: float = 5.0
    variation: float = 0.10
    augment_count: int = 0
    background: bool = True


def _write_one(sid: str, group: str, seed: int, cap: Capture, labels: LabeledSession, samples, job: SynthJob) -> dict:
    out = Path(job.out_dir)
    if job.background:
        cap = Capture.concat([cap, background_flows(job.duration, seed)])
    pcap, lab, qoe = out / f"{sid}.pcap", out / f"{sid}.labels.csv", out / f"{sid}.qoe.csv"
    write_capture(pcap, cap)
    write_labels(labels, lab)
    write_samples(samples, qoe)
    return {"session_id": sid, "group": group, "title": labels.title.value, "pattern": labels.pattern.value,
            "duration_s": repr(float(job.duration)), "seed": seed, "capture": pcap.name, "labels": lab.name,
            "qoe": qoe.name}


def synth_session_files(job: SynthJob) -> list[dict]:
    """Generate one session (and its augmented variants) into `job.out_dir`; returns manifest rows."""
    seed = session_seed(job.seed, job.profile_index, job.index)
    sid = f"{_slug(job.profile.name)}-{job.index:03d}"
    config = random_config(np.random.default_rng(np.random.SeedSequence([seed, 1])))
    session = synthesize(job.profile, job.duration, config, seed, sid, job.window, job.variation)
    cap = session.capture()
    samples = session.qoe_samples()
    rows = [_write_one(sid, sid, seed, cap, session.labels, samples, job)]
    for k in range(job.augment_count):
        params = AugmentParams(rng_seed=session_seed(seed, 1000, k), variation=job.variation)
        acap, alabels = augment(cap, session.labels, params, job.profile.max_payload, suffix=f"-aug{k + 1}")
        rows.append(_write_one(alabels.session_id, sid, seed, acap, alabels, samples, job))
    return rows


def write_manifest(rows: Sequence[dict], out_dir) -> Path:
    path = Path(out_dir) / MANIFEST
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, MANIFEST_COLUMNS)
        w.writeheader()
        for row in sorted(rows, key=lambda r: r["session_id"]):
            w.writerow(row)
    return path


# --------------------------------------------------------------------------
# Reading

def read_corpus(corpus_dir) -> list[CorpusEntry]:
    """Entries of a corpus directory, sorted by session_id.

    Uses the manifest when present; otherwise pairs every `*.labels.csv`
    with the `.pcap` of the same stem.
    """
    root = Path(corpus_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus directory {root} does not exist")
    entries = []
    manifest = root / MANIFEST
    if manifest.exists():
        with open(manifest, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                qoe = row.get("qoe") or ""
                entries.append(CorpusEntry(row["session_id"], row.get("group") or row["session_id"], row["title"],
                                           row["pattern"], float(row.get("duration_s") or 0), int(row.get("seed") or 0),
                                           root / row["capture"], root / row["labels"], root / qoe if qoe else None))
    else:
        for lab_path in sorted(root.glob("*.labels.csv")):
            stem = lab_path.name[: -len(".labels.csv")]
            lab = read_labels(lab_path)
            qoe = root / f"{stem}.qoe.csv"
            entries.append(CorpusEntry(lab.session_id, lab.session_id, lab.title.value, lab.pattern.value, 0.0, 0,
                                       root / f"{stem}.pcap", lab_path, qoe if qoe.exists() else None))
    return sorted(entries, key=lambda e: e.session_id)


def streaming_flows(path: os.PathLike | str, cfg: EngineConfig, until: Optional[float] = None) -> list[Capture]:
    """Accepted streaming flows of a capture, each re-based to its first packet.

    With `until`, only that much capture time is read first; the whole file
    is read when no flow shows up in it.
    """
    if until is not None:
        cap, _ = read_capture_table(path, until)
        result = detect_table(cap, cfg.detector)
        if result.flows:
            return [result.packets[f.key] for f in result.flows]
    cap, _ = read_capture_table(path)
    result = detect_table(cap, cfg.detector)
    return [result.packets[f.key] for f in result.flows]


def load_flow(path: os.PathLike | str, cfg: EngineConfig, until: Optional[float] = None) -> Capture:
    flows = streaming_flows(path, cfg, until)
    if not flows:
        raise NoStreamingFlow(f"{path}: no streaming flow")
    if len(flows) > 1:
        log.warning("%s: %d streaming flows; using the first", path, len(flows))
    return flows[0]
