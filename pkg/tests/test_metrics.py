from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gtd.data import read_dataset
from gtd.errors import FormatError
from gtd.metrics import (
    bucket_sizes,
    evaluate_predictions,
    evaluate_samples,
    mfss,
    moc,
    pairwise_dissimilarity,
    prediction_record,
    quartile_report,
    read_predictions,
    write_predictions,
)

FIXTURES = Path(__file__).parent / "fixtures"


def test_moc_examples():
    # class 0: 2/2, class 1: 1/2
    assert moc([0, 0, 1, 0], [0, 0, 1, 1]) == 75.0
    assert moc([1, 1, 1], [1, 1, 1]) == 100.0
    # classes absent from ground truth do not count
    assert moc([2, 2, 0], [0, 0, 0]) == pytest.approx(100 / 3)
    assert moc([5, 0, 1, 1], [9, 9, 1, 1], region=slice(2, 4)) == 100.0
    with pytest.raises(ValueError):
        moc([0, 1], [0])
    with pytest.raises(ValueError):
        moc([0, 1], [0, 1], region=slice(1, 1))


def test_evaluate_samples_mean_and_top1():
    gt = np.zeros(10, dtype=int)
    s40 = np.r_[np.zeros(4), np.ones(6)].astype(int)
    s60 = np.r_[np.zeros(6), np.ones(4)].astype(int)
    assert evaluate_samples([s40, s60], gt) == (50.0, 60.0)
    with pytest.raises(ValueError):
        evaluate_samples([], gt)


def test_mfss_examples():
    assert pairwise_dissimilarity([[0, 1, 2, 3], [0, 1, 2, 0]]) == 25.0
    assert pairwise_dissimilarity([[1, 1], [1, 1], [1, 1]]) == 0.0
    assert pairwise_dissimilarity([[0, 0], [1, 1]]) == 100.0
    # three samples: pairs (a,b)=50, (a,c)=100, (b,c)=50
    assert pairwise_dissimilarity([[0, 0], [0, 1], [1, 1]]) == pytest.approx(200 / 3)
    assert mfss([[[0, 0], [1, 1]], [[0, 0], [0, 0]]]) == 50.0
    with pytest.raises(ValueError):
        pairwise_dissimilarity([[0, 1]])
    with pytest.raises(ValueError):
        mfss([])


sample_sets = st.integers(2, 6).flatmap(
    lambda n: st.lists(st.lists(st.integers(0, 3), min_size=n, max_size=n), min_size=2, max_size=6)
)


@given(samples=sample_sets, seed=st.integers(0, 1000))
def test_mfss_invariances(samples, seed):
    base = pairwise_dissimilarity(samples)
    assert 0.0 <= base <= 100.0
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(samples))
    assert pairwise_dissimilarity([samples[i] for i in perm]) == pytest.approx(base)
    relabel = rng.permutation(4)
    assert pairwise_dissimilarity([relabel[np.asarray(s)] for s in samples]) == pytest.approx(base)
    if len(samples) == 2:
        assert pairwise_dissimilarity(samples[::-1]) == base


@given(pred=st.lists(st.integers(0, 3), min_size=1, max_size=20), seed=st.integers(0, 1000))
def test_moc_range_and_relabel_invariance(pred, seed):
    gt = np.random.default_rng(seed).integers(0, 4, len(pred))
    val = moc(pred, gt)
    assert 0.0 <= val <= 100.0
    relabel = np.random.default_rng(seed + 1).permutation(4)
    assert moc(relabel[np.asarray(pred)], relabel[gt]) == pytest.approx(val)
    assert moc(gt, gt) == 100.0


@pytest.mark.parametrize("z, sizes", [(10, [3, 3, 2, 2]), (8, [2, 2, 2, 2]), (4, [1, 1, 1, 1]), (7, [2, 2, 2, 1])])
def test_bucket_sizes(z, sizes):
    assert bucket_sizes(z) == sizes


def test_quartile_report_example():
    obs = [40, 10, 30, 20, 80, 70, 60, 50]
    fmoc = [4, 1, 3, 2, 8, 7, 6, 5]
    q = quartile_report(obs, fmoc, fmoc)
    assert [b.size for b in q] == [2, 2, 2, 2]
    assert [b.observed_mfss for b in q] == [15.0, 35.0, 55.0, 75.0]
    assert [b.future_mean_moc for b in q] == [1.5, 3.5, 5.5, 7.5]
    with pytest.raises(ValueError):
        quartile_report([1, 2, 3], [1, 2, 3], [1, 2, 3])
    with pytest.raises(ValueError):
        quartile_report([1, 2, 3, 4], [1, 2, 3], [1, 2, 3, 4])


def _fixture_gt():
    ds = read_dataset(FIXTURES / "prediction_gt")
    return {r.id: r.labels for r in ds.records}


def test_prediction_fixture_reproduces_hand_values():
    """Values worked out by hand from the eight sampled frames in the fixture."""
    reports = evaluate_predictions(read_predictions(FIXTURES / "predictions.jsonl"), _fixture_gt())
    assert len(reports) == 1
    r = reports[0]
    assert (r.alpha, r.beta, r.videos, r.samples) == (0.5, 0.5, 2, 2)
    assert r.mean_moc == 81.25
    assert r.top1_moc == 100.0
    assert r.mfss_observed == 25.0
    assert r.mfss_future == 37.5
    by_id = {v.id: v for v in r.per_video}
    assert (by_id["vid_a"].future_mean_moc, by_id["vid_a"].observed_mfss, by_id["vid_a"].future_mfss) == (87.5, 0.0, 25.0)
    assert (by_id["vid_b"].future_mean_moc, by_id["vid_b"].observed_mfss, by_id["vid_b"].future_mfss) == (75.0, 50.0, 50.0)
    assert r.spearman_obs_mfss_vs_moc is None and r.quartiles == []
    text = r.table()
    assert "Mean MoC" in text and "Top-1 MoC" in text and "MFSS" in text
    kinds = [row["kind"] for row in r.records()]
    assert kinds == ["summary", "video", "video"]


def test_predictions_round_trip_and_errors(tmp_path):
    recs = [prediction_record("b", 1, [0, 1, 2], 1, 0.2, 0.3), prediction_record("a", 0, [2, 2, 0], 2, 0.2, 0.3)]
    assert recs[0]["observed"] == [0] and recs[0]["future"] == [1, 2]
    p = tmp_path / "p.jsonl"
    write_predictions(p, recs)
    back = read_predictions(p)
    assert [r["id"] for r in back] == ["a", "b"]
    p.write_text('{"id": "a", "m": 0, "labels": [1, 2], "observed": [1], "future": [1]}\n')
    with pytest.raises(FormatError):
        read_predictions(p)
    p.write_text("not json\n")
    with pytest.raises(FormatError):
        read_predictions(p)
    with pytest.raises(FormatError):
        read_predictions(tmp_path / "missing.jsonl")
    with pytest.raises(FormatError):
        evaluate_predictions(recs, {"a": np.array([2, 2, 0])})


def test_spearman_and_quartiles_present_with_enough_videos():
    gt = {f"v{i}": np.zeros(6, dtype=int) for i in range(8)}
    preds = []
    for i in range(8):
        # video i: samples disagree on i//2 observed frames and score worse in the future
        a = [0] * 6
        b = [1 if j < i % 4 else 0 for j in range(3)] + [0, 0, 1 if i >= 4 else 0]
        preds += [prediction_record(f"v{i}", 0, a, 3, 0.5, 0.5), prediction_record(f"v{i}", 1, b, 3, 0.5, 0.5)]
    (r,) = evaluate_predictions(preds, gt)
    assert len(r.quartiles) == 4 and r.spearman_obs_mfss_vs_moc is not None
    assert -1.0 <= r.spearman_obs_mfss_vs_moc <= 1.0
