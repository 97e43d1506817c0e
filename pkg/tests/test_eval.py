import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcmos.eval import (
    EvaluationError,
    SigmoidMapping,
    evaluate_model,
    export_timeline,
    fit_mapping,
    pcc,
    rmse,
)
from vcmos.features import FeatureMatrix
from vcmos.model import QualityTimeline


def test_pcc_examples():
    x = np.array([1.0, 2.0, 4.0, 7.0])
    assert pcc(x, x) == pytest.approx(1.0, abs=1e-15)
    assert pcc(x, -x) == pytest.approx(-1.0, abs=1e-15)
    y = np.array([2.0, 1.0, 5.0, 6.0])
    assert pcc(2 * x + 3, y) == pytest.approx(pcc(x, y), abs=1e-14)


def test_pcc_against_numpy():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=50), rng.normal(size=50)
    assert pcc(x, y) == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-14)


def test_pcc_errors():
    with pytest.raises(EvaluationError):
        pcc([1, 1, 1], [1, 2, 3])
    with pytest.raises(EvaluationError):
        pcc([1], [1])
    with pytest.raises(EvaluationError):
        pcc([1, 2], [1, 2, 3])


@given(
    st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=30),
    st.floats(0.1, 50), st.floats(-50, 50),
)
def test_pcc_affine_invariance(values, scale, shift):
    x = np.array(values)
    if np.ptp(x) < 1e-3:
        return
    y = np.sin(x) + 0.1 * x
    if np.ptp(y) < 1e-3:
        return
    assert pcc(scale * x + shift, y) == pytest.approx(pcc(x, y), abs=1e-9)


def test_rmse_examples():
    assert rmse([1, 2, 3], [1, 2, 3]) == 0.0
    assert rmse([1, 2, 3], [2, 3, 4]) == 1.0
    assert rmse([0, 0], [3, 4]) == pytest.approx(np.sqrt(12.5))
    with pytest.raises(EvaluationError):
        rmse([1, 2], [1])


def test_mapping_identity_data():
    x = np.random.default_rng(0).uniform(1, 5, 100)
    mapping = fit_mapping(x, x)
    assert rmse(mapping.predict(x), x) < 0.05


def test_mapping_recovers_monotone_rescaling():
    rng = np.random.default_rng(1)
    mos = rng.uniform(1, 5, 60)
    vmaf = 25.0 * (mos - 1.0)
    mapping = fit_mapping(vmaf, mos)
    mapped = mapping.predict(vmaf)
    assert np.array_equal(np.argsort(mapped, kind="stable"), np.argsort(vmaf, kind="stable"))
    assert pcc(mapped, mos) == pytest.approx(pcc(vmaf, mos), abs=1e-3)
    assert rmse(mapped, mos) < 0.05


def test_mapping_degenerate():
    with pytest.raises(EvaluationError, match="degenerate"):
        fit_mapping([3.0] * 5, [1, 2, 3, 4, 5])
    with pytest.raises(EvaluationError):
        fit_mapping([1, 2, 3], [1, 2, 3])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_mapping_monotone_and_clamped(seed):
    rng = np.random.default_rng(seed)
    raw = rng.normal(size=30)
    mos = np.clip(3 + raw + rng.normal(scale=0.5, size=30), 1, 5)
    mapping = fit_mapping(raw, mos)
    grid = np.linspace(-10, 10, 400)
    out = mapping.predict(grid)
    assert (np.diff(out) >= 0).all()
    assert out.min() >= 1.0 and out.max() <= 5.0
    assert mapping.c_ >= 0 and mapping.b_ >= mapping.a_


def test_mapping_is_sklearn_estimator():
    m = SigmoidMapping(max_iter=100)
    assert m.get_params() == {"max_iter": 100, "clamp": (1.0, 5.0)}
    x = np.linspace(0, 1, 10)
    assert m.fit(x, 1 + 4 * x).score(x, 1 + 4 * x) > 0.99


def test_evaluate_perfect_predictions():
    mos = np.random.default_rng(2).uniform(1, 5, 40)
    report = evaluate_model(mos, mos)
    assert report.pcc == pytest.approx(1.0, abs=1e-6)
    assert report.rmse < 0.05


def test_evaluate_shuffled_labels_are_near_chance():
    rng = np.random.default_rng(3)
    n = 100
    raw = rng.uniform(1, 5, n)
    labels = rng.uniform(1, 5, n)
    shuffles = [rng.permutation(labels) for _ in range(100)]
    baseline = [abs(pcc(raw, s)) for s in shuffles]
    mapped = [abs(evaluate_model(raw, s).pcc) for s in shuffles]
    # permutation baseline of the unmapped scores
    assert np.median(mapped) <= np.percentile(baseline, 95)
    # two-sided 1% critical value of |r| under independence, n = 100
    assert np.percentile(mapped, 95) < 2.576 / np.sqrt(n - 1)


def test_evaluate_deterministic():
    rng = np.random.default_rng(4)
    raw, mos = rng.normal(size=30), rng.uniform(1, 5, 30)
    a, b = evaluate_model(raw, mos), evaluate_model(raw, mos)
    assert a.pcc == b.pcc and a.rmse == b.rmse and np.array_equal(a.mapped, b.mapped)


def test_evaluate_with_calibration_split():
    rng = np.random.default_rng(5)
    mos = rng.uniform(1, 5, 80)
    raw = 20 * mos + rng.normal(scale=2, size=80)
    report = evaluate_model(raw[40:], mos[40:], calibration=(raw[:40], mos[:40]))
    assert report.n_clips == 40 and report.pcc > 0.95


def test_report_files(tmp_path):
    mos = np.array([1.5, 2.0, 3.5, 4.0, 4.5])
    report = evaluate_model(mos * 10, mos, clip_ids=list("abcde"))
    doc = report.to_json(tmp_path / "r.json", model="lstm", features="vif,skip")
    assert json.loads((tmp_path / "r.json").read_text()) == doc
    assert {"model", "features", "pcc", "rmse", "n_clips"} <= set(doc)
    report.write_scatter(tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["clip_id", "mos", "raw", "mapped"] and rows[1][0] == "a" and len(rows) == 6


def test_export_timeline(tmp_path):
    n = 180
    q = np.linspace(0.5, 5.5, n)
    freeze = np.zeros(n)
    freeze[50:61] = np.arange(11)
    feats = FeatureMatrix(np.column_stack([np.ones(n), freeze]), ("skip", "freeze"))
    export_timeline(QualityTimeline(q), tmp_path / "t.csv", feats, extra={"vmaf": np.full(n, 80.0)})
    rows = list(csv.DictReader(open(tmp_path / "t.csv")))
    assert len(rows) == 180
    assert list(rows[0]) == ["frame", "q_raw", "q_clamped", "freeze_div10", "skip_div10", "vmaf"]
    assert float(rows[60]["freeze_div10"]) == 1.0
    assert float(rows[0]["q_clamped"]) == 1.0 and float(rows[-1]["q_clamped"]) == 5.0
    assert float(rows[0]["skip_div10"]) == 0.1


def test_export_timeline_errors(tmp_path):
    with pytest.raises(EvaluationError, match="empty"):
        export_timeline(QualityTimeline(np.array([])), tmp_path / "t.csv")
    with pytest.raises(EvaluationError, match="frames"):
        export_timeline(np.ones(5), tmp_path / "t.csv", {"freeze": np.zeros(4)})


def test_export_timeline_without_features(tmp_path):
    export_timeline(np.array([3.0, 3.5]), tmp_path / "t.csv")
    rows = list(csv.DictReader(open(tmp_path / "t.csv")))
    assert rows[0]["freeze_div10"] == "" and rows[1]["q_raw"] == "3.5"
