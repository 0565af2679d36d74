"""Aggregate CSVs over many session reports: stage minutes, throughput samples, QoE fractions."""

from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from pathlib import Path
from typing import Sequence

from .core import StageLabel

log = logging.getLogger(__name__)

REPORT_SUFFIX = ".report.json"
STAGE_MINUTES_CSV = "stage_minutes.csv"
THROUGHPUT_CSV = "throughput.csv"
QOE_FRACTIONS_CSV = "qoe_fractions.csv"
LEVELS = ("Good", "Medium", "Bad")


def load_reports(report_dir) -> list[dict]:
    paths = sorted(Path(report_dir).glob("*" + REPORT_SUFFIX))
    reports = []
    for p in paths:
        with open(p, encoding="utf-8") as fh:
            reports.append(json.load(fh))
    return sorted(reports, key=lambda r: r["session_id"])


def _scopes(report: dict) -> list[tuple[str, str]]:
    return [("title", report["title"]["label"]), ("pattern", report["pattern"]["label"])]


def stage_minutes(reports: Sequence[dict]) -> list[dict]:
    """Mean minutes per session in each stage, per predicted title."""
    by_title = defaultdict(list)
    for r in reports:
        by_title[r["title"]["label"]].append(r["summary"]["stage_minutes"])
    rows = []
    for title in sorted(by_title):
        mins = by_title[title]
        row = {"title": title, "sessions": len(mins)}
        for s in StageLabel:
            row[s.value] = sum(m.get(s.value, 0.0) for m in mins) / len(mins)
        rows.append(row)
    return rows


def throughput_samples(reports: Sequence[dict]) -> list[dict]:
    """Gameplay downstream throughput per slot, listed under both the title and the pattern."""
    rows = []
    for scope in ("title", "pattern"):
        for r in reports:
            group = dict(_scopes(r))[scope]
            for i, v in enumerate(r["summary"]["gameplay_down_mbps"]):
                rows.append({"scope": scope, "group": group, "session_id": r["session_id"], "sample": i,
                             "down_mbps": v})
    return rows


def qoe_fractions(reports: Sequence[dict]) -> list[dict]:
    """Share of sessions at each session-level QoE level, objective and effective.

    Reports without QoE samples are left out.
    """
    counts = defaultdict(lambda: {lvl: 0 for lvl in LEVELS})
    for r in reports:
        q = r.get("qoe")
        if not q:
            continue
        for scope, group in _scopes(r):
            counts[(scope, group, "objective")][q["objective_session"]] += 1
            counts[(scope, group, "effective")][q["effective_session"]] += 1
    rows = []
    for (scope, group, family) in sorted(counts, key=lambda k: (k[0] != "title", k[1], k[2] != "objective")):
        c = counts[(scope, group, family)]
        n = sum(c.values())
        rows.append({"scope": scope, "group": group, "family": family, "sessions": n,
                     **{lvl.lower(): c[lvl] / n for lvl in LEVELS}})
    return rows


def _write(path: Path, rows: list[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, columns)
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def write_reports(reports: Sequence[dict], out_dir) -> list[Path]:
    if not reports:
        raise ValueError("no session reports to aggregate")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / STAGE_MINUTES_CSV, out / THROUGHPUT_CSV, out / QOE_FRACTIONS_CSV]
    _write(paths[0], stage_minutes(reports), ["title", "sessions"] + [s.value for s in StageLabel])
    _write(paths[1], throughput_samples(reports), ["scope", "group", "session_id", "sample", "down_mbps"])
    _write(paths[2], qoe_fractions(reports), ["scope", "group", "family", "sessions", "good", "medium", "bad"])
    return paths
