import math

import pytest

from repeatnet.report import emit_metrics, emit_plot, read_metrics_csv
from repeatnet.stats import Aggregate, aggregate_runs, format_table, relative_contribution
from repeatnet.train import MetricsRecord, RunSummary

from oracles import relcont, sample_std


@pytest.mark.parametrize("base,rep,dense,printed", [
    (91.19, 91.70, 93.60, 21.16),
    (63.35, 75.24, 80.19, 70.61),
    (66.24, 69.96, 72.67, 57.85),
    (92.6, 94.4, 96.8, 42.9),
])
def test_relcont_examples(base, rep, dense, printed):
    digits = 1 if printed == 42.9 else 2
    assert round(relative_contribution(base, rep, dense), digits) == printed


def test_relcont_c8_unrounded():
    assert relative_contribution(92.6, 94.4, 96.8) == pytest.approx(42.857142857, abs=1e-8)


def test_relcont_sign_and_range():
    assert relative_contribution(50, 40, 60) == pytest.approx(-100.0)
    assert relative_contribution(50, 70, 60) == pytest.approx(200.0)
    assert relative_contribution(50, 40, 60) == pytest.approx(relcont(50, 40, 60))


def test_relcont_zero_gain():
    with pytest.raises(ZeroDivisionError):
        relative_contribution(60.0, 61.0, 60.0)


def test_aggregate_two_points():
    agg = aggregate_runs([46.2, 47.0])
    assert agg.mean == pytest.approx(46.6)
    assert agg.std == pytest.approx(0.565685, abs=1e-6)
    assert agg.n == 2


def test_aggregate_identical():
    assert aggregate_runs([50.0] * 5).std == 0.0


def test_aggregate_summaries_and_dicts():
    runs = [RunSummary(v, v, 1, 32, 2, seed, "cfgA") for seed, v in enumerate([1.0, 2.0, 4.0])]
    agg = aggregate_runs(runs)
    assert agg.mean == pytest.approx(7 / 3)
    assert agg.std == pytest.approx(sample_std([1.0, 2.0, 4.0]))
    dicts = [{"final_test_acc": v, "config_id": "cfgA"} for v in (1.0, 2.0, 4.0)]
    assert aggregate_runs(dicts) == agg


def test_aggregate_errors():
    with pytest.raises(ValueError, match="different configs"):
        aggregate_runs([{"final_test_acc": 1.0, "config_id": "a"}, {"final_test_acc": 2.0, "config_id": "b"}])
    with pytest.raises(ValueError, match="at least 2"):
        aggregate_runs([1.0])


def test_table_layout():
    text = format_table([("Dense", "1x", Aggregate(46.61, 0.37, 10))])
    header, rule, row = text.splitlines()
    assert header.split() == ["Method", "Scale", "factor", "Mean", "Acc.", "Std", "Dev"]
    assert row.split() == ["Dense", "1x", "46.61", "0.37"]
    assert len(rule) == len(header)


def records(n):
    return [MetricsRecord(e, 2.0 / (e + 1), 10.0 * e, 9.5 * e, 0.1 * 0.1 ** (e // 2), 1.23 + e) for e in range(n)]


def test_metrics_csv_header_only(tmp_path):
    emit_metrics([], tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text() == "epoch,train_loss,train_acc,test_acc,lr\n"


def test_metrics_csv_one_row_roundtrip(tmp_path):
    recs = records(1)
    emit_metrics(recs, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert len(lines) == 2
    back = read_metrics_csv(tmp_path / "m.csv")
    assert back[0]["train_loss"] == recs[0].train_loss and back[0]["epoch"] == 0


def test_metrics_floats_exact(tmp_path):
    recs = records(5)
    emit_metrics(recs, tmp_path / "m.csv")
    for r, b in zip(recs, read_metrics_csv(tmp_path / "m.csv")):
        assert b["lr"] == r.lr and b["test_acc"] == r.test_acc


def test_metrics_jsonl(tmp_path):
    emit_metrics(records(3), tmp_path / "m.jsonl", fmt="jsonl")
    assert len((tmp_path / "m.jsonl").read_text().splitlines()) == 3
    with pytest.raises(ValueError):
        emit_metrics(records(1), tmp_path / "m.xml", fmt="xml")


def test_metrics_unwritable(tmp_path):
    with pytest.raises(OSError):
        emit_metrics(records(1), tmp_path / "missing" / "m.csv")


def test_plot_stable_and_labeled(tmp_path):
    series = {"base": [(0, 10.0), (1, 20.0)], "s depth": [(0, 12.0), (1, 30.5)]}
    emit_plot(series, tmp_path / "a.svg", title="acc", xlabel="epoch", ylabel="test acc")
    emit_plot(series, tmp_path / "b.svg", title="acc", xlabel="epoch", ylabel="test acc")
    a = (tmp_path / "a.svg").read_bytes()
    assert a == (tmp_path / "b.svg").read_bytes()
    text = a.decode()
    assert text.startswith("<svg") and text.count("<polyline") == 2
    assert ">epoch<" in text and ">test acc<" in text and ">s depth<" in text


def test_plot_degenerate_ranges(tmp_path):
    emit_plot({}, tmp_path / "empty.svg")
    emit_plot({"flat": [(1, 5.0)]}, tmp_path / "flat.svg")
    assert "nan" not in (tmp_path / "flat.svg").read_text()
    assert math.isfinite(len((tmp_path / "empty.svg").read_text()))
