import logging

import pytest
from hypothesis import given, settings, strategies as st

from cglens.core import ActivityPattern, GameTitle, SlotIndex, StageLabel
from cglens.qoe import (OBJECTIVE, Band, CalibrationTable, ContextSnapshot, QoELevel, QoESample, effective_level,
                        level_fractions, objective_level, read_samples, session_level, write_samples)

G, M, B = QoELevel.GOOD, QoELevel.MEDIUM, QoELevel.BAD
SHOOTER = ActivityPattern.SPECTATE_AND_PLAY


def sample(fps=60.0, mbps=20.0, lat=20.0, loss=0.0):
    return QoESample(fps, mbps * 1e6, lat, loss)


def ctx(stage, title=GameTitle.FORTNITE, pattern=SHOOTER):
    return ContextSnapshot(title, pattern, stage)


@pytest.mark.parametrize("s, level", [(sample(fps=25), B), (sample(mbps=7), B), (sample(), G),
                                      (sample(fps=40), M), (sample(lat=60), M), (sample(loss=0.02), B)])
def test_objective_examples(s, level):
    assert objective_level(s) is level


def test_effective_examples():
    assert effective_level(sample(fps=15, mbps=2), ctx(StageLabel.IDLE)) is G
    assert objective_level(sample(fps=15, mbps=2)) is B
    assert effective_level(sample(fps=25), ctx(StageLabel.ACTIVE)) is B


@pytest.mark.parametrize("stage", list(StageLabel))
def test_latency_and_loss_verdicts_unchanged(stage):
    for s in (sample(lat=120), sample(loss=0.005), sample(lat=50)):
        assert effective_level(s, ctx(stage)) is objective_level(s)


def test_low_demand_title_halves_throughput_floor():
    s = sample(mbps=5)
    assert effective_level(s, ctx(StageLabel.ACTIVE)) is B
    assert effective_level(s, ctx(StageLabel.ACTIVE, GameTitle.HEARTHSTONE)) is M


@pytest.mark.parametrize("levels, out", [([G, G, B], G), ([G, B], B), ([M, M, M], M), ([G, M, B], B)])
def test_session_level(levels, out):
    assert session_level(levels) is out


def test_session_level_empty():
    with pytest.raises(ValueError):
        session_level([])


def test_level_order_and_fractions():
    assert B < M < G
    assert level_fractions([G, G, B, M]) == {B: 0.25, M: 0.25, G: 0.5}


metrics = st.tuples(st.floats(0, 200), st.floats(0, 100), st.floats(0, 300), st.floats(0, 1))
contexts = st.builds(ContextSnapshot, st.sampled_from(list(GameTitle)),
                     st.sampled_from(list(ActivityPattern)), st.sampled_from(list(StageLabel)))


@settings(max_examples=300)
@given(metrics, st.integers(0, 3), st.floats(0, 100), contexts)
def test_improving_one_metric_never_lowers_level(m, which, delta, c):
    base = sample(*m)
    better = list(m)
    better[which] = better[which] + delta if which < 2 else max(0.0, better[which] - delta / (100 if which == 3 else 1))
    imp = sample(*better)
    assert objective_level(imp) >= objective_level(base)
    assert effective_level(imp, c) >= effective_level(base, c)


@settings(max_examples=300)
@given(metrics, st.sampled_from([StageLabel.IDLE, StageLabel.PASSIVE]), st.sampled_from(list(GameTitle)),
       st.sampled_from(list(ActivityPattern)))
def test_effective_not_below_objective_in_idle_and_passive(m, stage, title, pattern):
    s = sample(*m)
    assert effective_level(s, ContextSnapshot(title, pattern, stage)) >= objective_level(s)


def test_missing_context_falls_back_with_warning(caplog):
    bands = {(OBJECTIVE, "frame_rate"): Band(30, 50, True), (OBJECTIVE, "throughput_mbps"): Band(8, 15, True),
             (OBJECTIVE, "latency_ms"): Band(80, 40, False), (OBJECTIVE, "loss_rate"): Band(0.01, 0.001, False),
             ("pattern:SpectateAndPlay|stage:Idle", "frame_rate"): Band(10, 15, True)}
    table = CalibrationTable(bands)
    with caplog.at_level(logging.WARNING):
        lvl = effective_level(sample(fps=12, mbps=2), ctx(StageLabel.IDLE), table)
    assert lvl is B  # throughput judged on the objective band
    assert "objective bands" in caplog.text
    assert effective_level(sample(fps=12), ctx(StageLabel.IDLE), table) is M


def test_table_round_trip_and_validation(tmp_path):
    t = CalibrationTable.load()
    path = tmp_path / "cal.csv"
    t.write(path)
    back = CalibrationTable.load(path)
    assert back.bands == t.bands and back.reload().bands == t.bands
    text = path.read_text().splitlines()
    path.write_text("\n".join([text[0]] + [line.replace("1,", "2,", 1) for line in text[1:]]))
    with pytest.raises(ValueError, match="newer"):
        CalibrationTable.load(path)
    with pytest.raises(ValueError):
        Band(50, 30, True)


def test_sample_validation():
    with pytest.raises(ValueError):
        sample(loss=1.5)
    with pytest.raises(ValueError):
        sample(fps=-1)


def test_sample_csv_round_trip(tmp_path):
    rows = [QoESample(59.5, 12.5e6, 21.0, 0.0001, SlotIndex(i, 0.5)) for i in range(4)]
    path = tmp_path / "q.csv"
    write_samples(rows, path)
    assert read_samples(path) == rows
    path.write_text("interval_start_s,interval_s,frame_rate,throughput_bps,latency_ms,loss_rate\n0.3,1,60,1,1,0\n")
    with pytest.raises(ValueError, match="multiple"):
        read_samples(path)
