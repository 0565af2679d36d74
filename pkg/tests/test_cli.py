import csv
import json

import pytest

from cglens.capture import write_capture
from cglens.cli import main
from cglens.synth import background_flows

TITLES = "Fortnite,Genshin Impact,Hearthstone"


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--titles", TITLES, "--count", "4", "--duration", "70", "--augment", "1",
                 "--seed", "3", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def models(corpus, tmp_path_factory):
    mdir = tmp_path_factory.mktemp("models")
    for task in ("title", "stage", "pattern"):
        assert main(["train", str(corpus), "--task", task, "--models-dir", str(mdir), "--n-trees", "15",
                     "--test-fraction", "0.25"]) == 0
    return mdir


def test_synth_writes_labeled_sessions(corpus):
    with open(corpus / "manifest.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3 * 4 * 2
    aug = [r for r in rows if "-aug" in r["session_id"]]
    assert len(aug) == 12 and all(r["group"] == r["session_id"].split("-aug")[0] for r in aug)
    for r in rows[:3]:
        for col in ("capture", "labels", "qoe"):
            assert (corpus / r[col]).exists()


def test_synth_deterministic_and_worker_independent(tmp_path):
    args = ["synth", "--titles", "Dota 2", "--count", "2", "--duration", "12", "--augment", "1", "--seed", "9"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert main(args + ["--out", str(tmp_path / "c"), "--workers", "2"]) == 0
    a = files(tmp_path / "a")
    assert a == files(tmp_path / "b") == files(tmp_path / "c")
    assert main(args[:-1] + ["10", "--out", str(tmp_path / "d")]) == 0
    assert files(tmp_path / "d") != a


def test_train_writes_models_and_metrics(models, capsys):
    for task in ("title", "stage", "pattern"):
        doc = json.loads((models / f"{task}.json").read_text())
        assert doc["meta"]["split_seed"] == 0 and doc["meta"]["test_fraction"] == 0.25
        assert (models / f"{task}.metrics.json").exists()
    metrics = json.loads((models / "title.metrics.json").read_text())
    assert metrics["per_class"]["overall"] >= 0.9


def test_train_baseline(corpus, tmp_path, capsys):
    assert main(["train", str(corpus), "--task", "title", "--baseline", "--models-dir", str(tmp_path),
                 "--n-trees", "5"]) == 0
    doc = json.loads((tmp_path / "title_baseline.json").read_text())
    assert doc["n_features"] == 10 and doc["meta"]["features"] == "flow-volume"
    assert "title accuracy" in capsys.readouterr().out


def test_analyze_and_report(corpus, models, tmp_path, capsys):
    sid = "fortnite-001"
    out = tmp_path / "reports"
    assert main(["analyze", str(corpus / f"{sid}.pcap"), str(corpus / "genshin_impact-000.pcap"),
                 "--models-dir", str(models), "--out", str(out)]) == 0
    rep = json.loads((out / f"{sid}.report.json").read_text())
    assert rep["title"]["label"] == "Fortnite"
    assert rep["qoe"] is not None  # sibling QoE file picked up
    with open(out / f"{sid}.slots.csv") as fh:
        slots = list(csv.DictReader(fh))
    assert len(slots) == len(rep["timeline"]["stages"]) >= 69
    capsys.readouterr()
    assert main(["report", str(out), "--out", str(tmp_path / "agg")]) == 0
    names = sorted(p.name for p in (tmp_path / "agg").iterdir())
    assert names == ["qoe_fractions.csv", "stage_minutes.csv", "throughput.csv"]


def test_analyze_worker_count_does_not_change_output(corpus, models, tmp_path):
    caps = [str(corpus / f"hearthstone-00{i}.pcap") for i in range(3)]
    assert main(["analyze", *caps, "--models-dir", str(models), "--out", str(tmp_path / "one")]) == 0
    assert main(["analyze", *caps, "--models-dir", str(models), "--out", str(tmp_path / "two"),
                 "--workers", "2"]) == 0
    assert files(tmp_path / "one") == files(tmp_path / "two")


def test_title_from_first_five_seconds_only(corpus, models, tmp_path):
    from cglens.capture import read_capture_table
    cap, epoch = read_capture_table(corpus / "genshin_impact-002.pcap")
    short = tmp_path / "short.pcap"
    write_capture(short, cap.until(5.0), base_time_ns=epoch)
    assert main(["analyze", str(corpus / "genshin_impact-002.pcap"), str(short), "--models-dir", str(models),
                 "--out", str(tmp_path)]) == 0
    full = json.loads((tmp_path / "genshin_impact-002.report.json").read_text())["title"]
    cut = json.loads((tmp_path / "short.report.json").read_text())["title"]
    assert (full["label"], full["confidence"]) == (cut["label"], cut["confidence"])


def test_importance(corpus, models, tmp_path, capsys):
    out = tmp_path / "imp.csv"
    assert main(["importance", str(corpus), "--task", "pattern", "--models-dir", str(models), "--repeats", "2",
                 "--out", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 9 and rows[0]["rank"] == "1"
    assert "permutation importance" in capsys.readouterr().out


def test_importance_from_feature_csv(models, tmp_path):
    import numpy as np
    from cglens.launch import write_feature_csv
    path = tmp_path / "f.csv"
    write_feature_csv(path, [("a", np.zeros(51)), ("b", np.ones(51))], label={"a": "Fortnite", "b": "Hearthstone"})
    assert main(["importance", "--features", str(path), "--task", "title", "--models-dir", str(models)]) == 0
    assert main(["importance", "--task", "title", "--models-dir", str(models)]) == 4


def test_exit_no_flow(models, tmp_path):
    web = tmp_path / "web.pcap"
    write_capture(web, background_flows(6.0, 1))
    assert main(["analyze", str(web), "--models-dir", str(models), "--out", str(tmp_path)]) == 2


def test_exit_model_mismatch(corpus, models, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("launch:\n  window_s: 3.0\n")
    assert main(["analyze", str(corpus / "fortnite-000.pcap"), "--models-dir", str(models), "--out",
                 str(tmp_path), "--config", str(cfg)]) == 3


def test_exit_validation_errors(tmp_path, models):
    assert main(["synth", "--duration", "5", "--out", str(tmp_path / "x")]) == 4
    assert main(["synth", "--titles", "Nope", "--out", str(tmp_path / "x")]) == 4
    assert main(["train", str(tmp_path / "missing"), "--task", "title"]) == 4
    bad = tmp_path / "bad.yaml"
    bad.write_text("bogus: 1\n")
    assert main(["report", str(tmp_path), "--config", str(bad)]) == 4
    assert main(["report", str(tmp_path)]) == 4  # no reports
    broken = tmp_path / "broken.pcap"
    broken.write_bytes(b"\x00" * 30)
    assert main(["analyze", str(broken), "--models-dir", str(models), "--out", str(tmp_path)]) == 4


def test_exit_io_error(corpus, models, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["analyze", str(corpus / "fortnite-000.pcap"), "--models-dir", str(models),
                 "--out", str(blocker)]) == 1
