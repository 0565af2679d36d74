"""Command-line entry point: analyze, train, synth, report, importance."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import forest
from .activity import ATTRS
from .capture import CaptureFormatError, LabelSchemaError, LabelValidationError
from .config import ConfigError, EngineConfig
from .core import GameTitle
from .corpus import (TITLE_READ_S, CorpusEntry, NoStreamingFlow, SynthJob, load_flow, map_sessions, read_corpus,
                     streaming_flows, synth_session_files, write_manifest)
from .forest import ArityError, TrainingError
from .launch import feature_names, flow_volume_names, read_feature_csv
from .pipeline import (Dataset, ModelMismatch, Models, analyze_flow, balance_classes, baseline_vector,
                       flow_volumetrics, pattern_outcomes, pattern_summary, per_class_accuracy, session_split,
                       snapshot_dataset, stage_dataset, stage_runs, stage_table, title_vector, train_task)
from .qoe import CalibrationTable, read_samples
from .reports import REPORT_SUFFIX, load_reports, write_reports
from .synth import catalog_profiles, load_profiles

log = logging.getLogger("cglens")

EXIT_OK, EXIT_IO, EXIT_NO_FLOW, EXIT_MISMATCH, EXIT_INVALID = 0, 1, 2, 3, 4
TASKS = ("title", "stage", "pattern")


class UsageError(ValueError):
    pass


def model_path(models_dir, task: str, baseline: bool = False) -> Path:
    return Path(models_dir) / (f"{task}_baseline.json" if baseline else f"{task}.json")


def load_models(models_dir, required: tuple = ()) -> Models:
    root = Path(models_dir)
    if not root.is_dir():
        raise UsageError(f"models directory {root} does not exist")
    found = {}
    for task in TASKS:
        p = model_path(root, task)
        if p.exists():
            found[task] = forest.load_model(p)
        elif task in required:
            raise UsageError(f"missing {task} model {p}")
        else:
            log.warning("no %s model in %s; that stage of the pipeline is skipped", task, root)
    if not found:
        raise UsageError(f"no models found in {root}")
    return Models(found.get("title"), found.get("stage"), found.get("pattern"))


# --------------------------------------------------------------------------
# analyze

@dataclass(frozen=True)
class AnalyzeJob:
    capture: str
    qoe: Optional[str]
    models_dir: str
    doc: dict
    out_dir: str


def _slot_rows(report) -> list[list]:
    rows = []
    for i, stage in enumerate(report.stages):
        raw = report.raw[i].tolist()
        sm = ["" if np.isnan(v) else repr(float(v)) for v in report.smoothed[i]]
        rows.append([i, repr(i * report.slot_s), stage] + [repr(float(v)) for v in raw] + sm)
    return rows


def _analyze_one(job: AnalyzeJob) -> list[str]:
    """Analyze one capture file; returns the written session ids."""
    cfg = EngineConfig(job.doc)
    models = load_models(job.models_dir)
    models.check(cfg)
    table = CalibrationTable.load(cfg.calibration_path)
    flows = streaming_flows(job.capture, cfg)
    if not flows:
        raise NoStreamingFlow(f"{job.capture}: no streaming flow")
    samples = read_samples(job.qoe) if job.qoe else None
    stem = Path(job.capture).name.rsplit(".", 1)[0]
    written = []
    for k, flow in enumerate(flows):
        sid = stem if len(flows) == 1 else f"{stem}.flow{k}"
        report = analyze_flow(flow, models, cfg, sid, str(flow.keys[0]), samples, table)
        log.info("%s: title %s (%.2f) from the first %.1f s", sid, report.title, report.title_confidence,
                 cfg.grouper.window)
        out = Path(job.out_dir)
        with open(out / (sid + REPORT_SUFFIX), "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2)
            fh.write("\n")
        with open(out / f"{sid}.slots.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["slot", "start_s", "stage", *ATTRS, *(f"rel_{a}" for a in ATTRS)])
            w.writerows(_slot_rows(report))
        written.append(sid)
    return written


def _try_analyze(job: AnalyzeJob):
    try:
        return _analyze_one(job)
    except NoStreamingFlow as exc:
        return exc


def cmd_analyze(args, cfg: EngineConfig) -> int:
    captures = [Path(c) for c in args.captures]
    if args.qoe and len(captures) != 1:
        raise UsageError("--qoe applies to a single capture")
    for c in captures:
        if not c.exists():
            raise UsageError(f"capture {c} does not exist")
    models = load_models(args.models_dir)
    models.check(cfg)  # fail fast, before any worker starts
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for c in sorted(captures):
        qoe = args.qoe
        if qoe is None:
            sibling = c.with_name(c.name.rsplit(".", 1)[0] + ".qoe.csv")
            qoe = str(sibling) if sibling.exists() else None
        jobs.append(AnalyzeJob(str(c), qoe, str(args.models_dir), cfg.doc, str(out)))
    results = map_sessions(_try_analyze, jobs, args.workers)
    status = EXIT_OK
    for job, res in zip(jobs, results):
        if isinstance(res, NoStreamingFlow):
            print(f"error: {res}", file=sys.stderr)
            status = EXIT_NO_FLOW
        else:
            for sid in res:
                print(out / (sid + REPORT_SUFFIX))
    return status


# --------------------------------------------------------------------------
# train

@dataclass(frozen=True)
class FeatureJob:
    entry: CorpusEntry
    doc: dict
    task: str
    baseline: bool = False


def _session_features(job: FeatureJob):
    cfg = EngineConfig(job.doc)
    if job.task == "title":
        flow = load_flow(job.entry.capture, cfg, until=TITLE_READ_S)
        if job.baseline:
            return baseline_vector(flow, cfg.grouper)
        return title_vector(flow, cfg.grouper, cfg.learn_max_payload)
    flow = load_flow(job.entry.capture, cfg)
    return flow_volumetrics(flow, cfg.tracker.slot), job.entry.read_labels()


def corpus_split(entries: list[CorpusEntry], test_fraction: float, seed: int):
    """One split for every task: stratified by title, whole session groups on one side."""
    return session_split([e.title for e in entries], [e.group for e in entries], test_fraction, seed)


def _task_entries(entries: list[CorpusEntry], task: str) -> np.ndarray:
    if task == "title":
        return np.array([e.title != GameTitle.UNKNOWN.value for e in entries], bool)
    return np.array([e.pattern != "Undecided" for e in entries], bool)


def _print_table(title: str, rows: list[tuple]) -> None:
    print(title)
    width = max(len(str(r[0])) for r in rows)
    for r in rows:
        print("  " + str(r[0]).ljust(width) + "  " + "  ".join(str(v) for v in r[1:]))


def _build_sessions(entries, cfg, workers):
    jobs = [FeatureJob(e, cfg.doc, "stage") for e in entries]
    return map_sessions(_session_features, jobs, workers)


def _train_title(args, cfg, entries, train_m, test_m) -> dict:
    jobs = [FeatureJob(e, cfg.doc, "title", args.baseline) for e in entries]
    X = np.array(map_sessions(_session_features, jobs, args.workers))
    names = flow_volume_names(cfg.grouper) if args.baseline else feature_names(cfg.grouper)
    data = Dataset(X, [e.title for e in entries], [e.group for e in entries], names)
    model = train_task("title", data.subset(train_m), cfg, args.seed, args.n_trees, args.max_depth,
                       {"features": "flow-volume" if args.baseline else "packet-groups"})
    test = data.subset(test_m)
    acc = per_class_accuracy(model, test)
    counts = {c: test.y.count(c) for c in set(test.y)}
    counts["overall"] = len(test.y)
    _print_table("title accuracy (held out)", [("class", "sessions", "accuracy")] +
                 [(c, counts[c], f"{v:.3f}") for c, v in acc.items()])
    return model, {"per_class": acc, "test_sessions": len(test.y), "train_sessions": int(train_m.sum())}


def _train_stage(args, cfg, entries, train_m, test_m):
    sessions = _build_sessions(entries, cfg, args.workers)
    tr = [s for s, m in zip(sessions, train_m) if m]
    te = [s for s, m in zip(sessions, test_m) if m]
    model = train_task("stage", stage_dataset(tr, cfg), cfg, args.seed, args.n_trees, args.max_depth)
    table = stage_table(model, te, cfg)
    rows = [("pattern", "stage", "slots", "accuracy")]
    for pat, fam in table.items():
        for st, v in fam.items():
            rows.append((pat, st, v["slots"], f"{v['accuracy']:.3f}"))
    _print_table("stage accuracy per slot (held out)", rows)
    return model, {"per_family": table}


def _train_pattern(args, cfg, entries, train_m, test_m):
    sessions = _build_sessions(entries, cfg, args.workers)
    stage_file = model_path(args.models_dir, "stage")
    stage_model = None
    if stage_file.exists():
        stage_model = forest.load_model(stage_file)
        Models(stage=stage_model).check(cfg)
    else:
        log.warning("no stage model at %s; pattern training uses ground-truth stages", stage_file)
    tr = stage_runs([s for s, m in zip(sessions, train_m) if m], cfg, stage_model)
    te = stage_runs([s for s, m in zip(sessions, test_m) if m], cfg, stage_model)
    data = balance_classes(snapshot_dataset(tr, cfg))
    model = train_task("pattern", data, cfg, args.seed, args.n_trees, args.max_depth,
                       {"stages": "predicted" if stage_model else "ground-truth"})
    summary = pattern_summary(pattern_outcomes(te, model, cfg))
    rows = [("metric", "value")] + [(k, f"{v:.3f}" if isinstance(v, float) else v) for k, v in summary.items()]
    _print_table(f"pattern inference at threshold {cfg.tracker.pattern_threshold} (held out)", rows)
    return model, summary


def cmd_train(args, cfg: EngineConfig) -> int:
    if args.baseline and args.task != "title":
        raise UsageError("--baseline applies to the title task")
    entries = read_corpus(args.corpus)
    if not entries:
        raise UsageError(f"corpus {args.corpus} has no sessions")
    train_m, test_m = corpus_split(entries, args.test_fraction, args.seed)
    keep = _task_entries(entries, args.task)
    entries = [e for e, k in zip(entries, keep) if k]
    train_m, test_m = train_m[keep], test_m[keep]
    classes = {e.title if args.task == "title" else e.pattern for e in entries}
    if args.task != "stage" and len(classes) < 2:
        raise TrainingError(f"{args.task} training needs at least two classes in the corpus, found {sorted(classes)}")
    trainer = {"title": _train_title, "stage": _train_stage, "pattern": _train_pattern}[args.task]
    model, metrics = trainer(args, cfg, entries, train_m, test_m)
    model = forest.Ensemble(model.trees, model.classes, model.n_features, model.max_depth, model.rng_seed,
                            model.feature_names, {**(model.meta or {}), "split_seed": args.seed,
                                                  "test_fraction": args.test_fraction})
    Path(args.models_dir).mkdir(parents=True, exist_ok=True)
    path = model_path(args.models_dir, args.task, args.baseline)
    forest.save_model(model, path)
    with open(path.with_suffix(".metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2)
        fh.write("\n")
    print(path)
    return EXIT_OK


# --------------------------------------------------------------------------
# synth

def cmd_synth(args, cfg: EngineConfig) -> int:
    g = cfg.grouper
    if not args.duration > g.window:
        raise LabelValidationError(f"duration {args.duration}s must exceed the {g.window}s launch window")
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    profiles = load_profiles(args.profiles, g.variation)
    names = list(profiles)
    if args.titles:
        chosen = [n.strip() for n in args.titles.split(",") if n.strip()]
        unknown = [n for n in chosen if n not in profiles]
        if unknown:
            raise UsageError(f"unknown profile(s) {unknown}; available: {names}")
    else:
        chosen = [p.name for p in catalog_profiles(profiles)]
        if args.include_unlisted:
            chosen += [n for n in names if n not in chosen]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [SynthJob(profiles[n], names.index(n), i, args.seed, args.duration, str(out), g.window, g.variation,
                     args.augment, not args.no_background)
            for n in chosen for i in range(args.count)]
    rows = [r for batch in map_sessions(synth_session_files, jobs, args.workers) for r in batch]
    print(write_manifest(rows, out))
    print(f"{len(rows)} sessions written to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# report

def cmd_report(args, cfg: EngineConfig) -> int:
    reports = load_reports(args.reports)
    if not reports:
        raise UsageError(f"no *{REPORT_SUFFIX} files in {args.reports}")
    for p in write_reports(reports, args.out):
        print(p)
    return EXIT_OK


# --------------------------------------------------------------------------
# importance

def _heldout_dataset(args, cfg, model) -> Dataset:
    meta = model.meta or {}
    seed = int(meta.get("split_seed", args.seed))
    frac = float(meta.get("test_fraction", 0.2))
    entries = read_corpus(args.corpus)
    _, test_m = corpus_split(entries, frac, seed)
    keep = _task_entries(entries, args.task)
    entries = [e for e, k, t in zip(entries, keep, test_m) if k and t]
    if args.task == "title":
        baseline = meta.get("features") == "flow-volume"
        jobs = [FeatureJob(e, cfg.doc, "title", baseline) for e in entries]
        X = np.array(map_sessions(_session_features, jobs, args.workers))
        return Dataset(X, [e.title for e in entries], [e.group for e in entries], list(model.feature_names or []))
    sessions = _build_sessions(entries, cfg, args.workers)
    if args.task == "stage":
        return stage_dataset(sessions, cfg)
    stage_file = model_path(args.models_dir, "stage")
    stage_model = forest.load_model(stage_file) if stage_file.exists() else None
    return snapshot_dataset(stage_runs(sessions, cfg, stage_model), cfg)


def cmd_importance(args, cfg: EngineConfig) -> int:
    if (args.corpus is None) == (args.features is None):
        raise UsageError("give exactly one of a corpus directory or --features")
    path = Path(args.model) if args.model else model_path(args.models_dir, args.task)
    if not path.exists():
        raise UsageError(f"model {path} does not exist")
    model = forest.load_model(path)
    if args.features:
        _, names, X, labels = read_feature_csv(args.features)
        if labels is None:
            raise UsageError(f"{args.features} has no label column")
        data = Dataset(X, labels, labels, names)
    else:
        data = _heldout_dataset(args, cfg, model)
        if args.task == "stage":
            data.y = [s.value for s in data.y]
    if data.X.shape[1] != model.n_features:
        raise ArityError(f"model expects {model.n_features} attributes, data has {data.X.shape[1]}")
    imp = forest.permutation_importance(model, data.X, data.y, args.seed, args.repeats)
    names = list(model.feature_names or data.feature_names or [f"attr{i}" for i in range(len(imp))])
    order = sorted(range(len(imp)), key=lambda i: (-imp[i], i))
    rows = [(rank + 1, names[i], float(imp[i])) for rank, i in enumerate(order)]
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "attribute", "importance"])
            w.writerows([(r, n, repr(v)) for r, n, v in rows])
    _print_table(f"permutation importance ({len(data.y)} rows, {args.repeats} repeats)",
                 [("rank", "attribute", "importance")] + [(r, n, f"{v:.4f}") for r, n, v in rows[:args.top]])
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="engine configuration YAML (default: $CG_LENS_CONFIG, then built-in)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=int, default=1, help="worker processes for per-session work")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="cglens", description="Cloud-game streaming context analysis.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="analyze captures into session reports")
    p.add_argument("captures", nargs="+", help="PCAP files")
    p.add_argument("--models-dir", default="models")
    p.add_argument("--out", default="reports")
    p.add_argument("--qoe", help="QoE sample CSV (default: <capture stem>.qoe.csv when present)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", parents=[common], help="train a model on a corpus directory")
    p.add_argument("corpus")
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--models-dir", default="models")
    p.add_argument("--n-trees", type=int)
    p.add_argument("--max-depth", type=int)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--baseline", action="store_true",
                   help="title task: train on the two flow-volume attributes instead of packet groups")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", parents=[common], help="generate a labeled synthetic corpus")
    p.add_argument("--profiles", help="profile definitions JSON (default: built-in)")
    p.add_argument("--titles", help="comma-separated profile names (default: the catalog titles)")
    p.add_argument("--include-unlisted", action="store_true", help="also generate the non-catalog profiles")
    p.add_argument("--count", type=int, default=10, help="sessions per profile")
    p.add_argument("--duration", type=float, default=120.0, help="session length in seconds")
    p.add_argument("--augment", type=int, default=0, help="augmented variants per session")
    p.add_argument("--no-background", action="store_true", help="omit non-streaming background flows")
    p.add_argument("--out", default="corpus")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", parents=[common], help="aggregate session reports into CSVs")
    p.add_argument("reports", help="directory of *.report.json files")
    p.add_argument("--out", default="aggregates")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("importance", parents=[common], help="permutation importance of a trained model")
    p.add_argument("corpus", nargs="?", help="corpus directory; the model's held-out split is used")
    p.add_argument("--task", choices=TASKS, default="pattern")
    p.add_argument("--models-dir", default="models")
    p.add_argument("--model", help="model file (default: <models-dir>/<task>.json)")
    p.add_argument("--features", help="feature CSV with a label column, instead of a corpus")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--top", type=int, default=20, help="rows to print")
    p.add_argument("--out", help="CSV of all attributes ranked")
    p.set_defaults(func=cmd_importance)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = EngineConfig.load(args.config)
        return args.func(args, cfg)
    except NoStreamingFlow as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_FLOW
    except (ModelMismatch, ArityError) as exc:
        print(f"error: model mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (ConfigError, UsageError, LabelValidationError, LabelSchemaError, CaptureFormatError,
            TrainingError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
