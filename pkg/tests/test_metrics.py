import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from decoy.core import RoundOutcome
from decoy.errors import ContractError
from decoy.metrics import (HeatGrid, MetricReport, average_precision, dtw, dtw_per_step, evaluate, frechet,
                           grid_for, heatmap, mae, mean_euclidean, outcome_agreement, pct_diff, pearson, rmse,
                           roc_auc, wasserstein1d)
from decoy.replay import replay_round
from oracles import brute_dtw, brute_frechet, cdf_w1, pairwise_auc, two_pass_pearson

coords = st.floats(-50, 50, allow_nan=False, width=32)


def seq(max_len=5):
    return st.integers(1, max_len).flatmap(lambda n: arrays(np.float64, (n, 2), elements=coords))


@settings(max_examples=150, deadline=None)
@given(seq(), seq())
def test_dtw_and_frechet_match_enumeration(a, b):
    assert dtw(a, b) == pytest.approx(brute_dtw(a, b), rel=1e-9, abs=1e-9)
    assert frechet(a, b) == pytest.approx(brute_frechet(a, b), rel=1e-9, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(seq(8), seq(8))
def test_distance_properties(a, b):
    assert dtw(a, a) == 0 and frechet(a, a) == 0
    assert dtw(a, b) == pytest.approx(dtw(b, a))
    assert frechet(a, b) == pytest.approx(frechet(b, a))
    assert frechet(a, b) <= dtw(a, b) + 1e-9


def test_trajectory_examples():
    a = np.array([[0, 0], [1, 0], [2, 0]])
    b = a + [0, 1]
    assert dtw(a, b) == pytest.approx(3.0)
    assert dtw_per_step(a, b) == pytest.approx(1.0)
    assert frechet(a, b) == pytest.approx(1.0)
    assert mean_euclidean(a, b) == pytest.approx(1.0) and rmse(a, b) == pytest.approx(1.0)
    assert dtw([[0, 0], [0, 0], [1, 0]], [[0, 0], [1, 0]]) == 0
    with pytest.raises(ContractError):
        mean_euclidean(a, b[:2])
    with pytest.raises(ContractError):
        dtw(np.zeros((2, 2)), np.zeros((2, 3)))


@settings(max_examples=150, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=30), st.lists(st.floats(-100, 100), min_size=1,
                                                                          max_size=30))
def test_w1_matches_cdf_integral_and_scipy(p, q):
    got = wasserstein1d(p, q)
    assert got == pytest.approx(cdf_w1(p, q), rel=1e-9, abs=1e-9)
    assert got == pytest.approx(scipy.stats.wasserstein_distance(p, q), rel=1e-9, abs=1e-9)


def test_w1_examples():
    assert wasserstein1d([0, 0], [1, 1]) == 1.0
    assert wasserstein1d([0, 1], [0, 1]) == 0.0
    assert wasserstein1d([0], [0, 3]) == pytest.approx(1.5)
    with pytest.raises(ContractError):
        wasserstein1d([], [1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=3, max_size=40))
def test_pearson_matches_two_pass(rows):
    x, y = map(np.array, zip(*rows))
    if np.ptp(x) < 1e-3 or np.ptp(y) < 1e-3:
        return
    assert pearson(x, y) == pytest.approx(two_pass_pearson(list(x), list(y)), abs=1e-9)


def test_pearson_and_mae_examples():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert mae([1, 2], [2, 4]) == 1.5
    with pytest.raises(ContractError):
        pearson([1, 1, 1], [1, 2, 3])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=40))
def test_auc_matches_pairwise(rows):
    s, y = map(np.array, zip(*rows))
    if y.all() or not y.any():
        assert np.isnan(roc_auc(s, y))
        return
    assert roc_auc(s, y) == pytest.approx(pairwise_auc(s, y))
    assert roc_auc(-s, y) == pytest.approx(1 - roc_auc(s, y))


def test_average_precision_examples():
    assert average_precision([0.9, 0.8, 0.1], [1, 1, 0]) == pytest.approx(1.0)
    assert average_precision([0.9, 0.8, 0.1], [0, 1, 1]) == pytest.approx((0.5 + 2 / 3) / 2)


def test_outcome_agreement():
    ct, t = RoundOutcome("CT", "time_expired", 9300), RoundOutcome("T", "elimination", 10)
    assert outcome_agreement([(ct, ct), (t, t)]) == 1.0
    assert outcome_agreement([(ct, t), (t, t)]) == 0.5
    with pytest.raises(ContractError):
        outcome_agreement([])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (20, 2), elements=st.floats(-5, 15)))
def test_heatmap_conserves_samples(pts):
    h = heatmap([pts[:7], pts[7:]], (0.0, 0.0), (10, 10))
    assert h.values.sum() == 20
    assert h.percentages().values.sum() == pytest.approx(100.0)


def test_heatmap_cells_and_diff(tmp_path):
    h1 = heatmap([[[0.5, 0.5], [1.5, 0.5]]], (0, 0), (2, 2))
    h2 = heatmap([[[0.5, 0.5], [0.5, 0.6]]], (0, 0), (2, 2))
    np.testing.assert_array_equal(h1.values, [[1, 0], [1, 0]])
    d = pct_diff(h1, h2)
    np.testing.assert_allclose(d.values, [[-50, 0], [50, 0]])
    assert d.values.sum() == pytest.approx(0.0)
    with pytest.raises(ContractError):
        pct_diff(h1, heatmap([], (0, 0), (3, 3)))
    h1.save(tmp_path / "h.csv")
    again = HeatGrid.load(tmp_path / "h.csv")
    assert again.matches(h1)
    np.testing.assert_array_equal(again.values, h1.values)


def test_grid_for_covers_bounds(level):
    origin, shape = grid_for(level.bounds)
    assert origin == tuple(level.bounds.lo[:2])
    assert shape[0] * 1.0 >= level.bounds.hi[0] - origin[0]


def test_report_summary_uses_population_std():
    r = MetricReport()
    for v in (1.0, 3.0):
        r.add("dtw", "T", v)
    r.add("dtw", "CT", 5.0)
    row = r.summary()["dtw"]
    assert row["T"] == (2.0, 1.0) and row["CT"] == (5.0, 0.0)
    assert row["Overall"][0] == pytest.approx(3.0)
    assert "dtw" in r.to_text()


def test_evaluate_movement_replays(level, graph, rounds, tmp_path):
    reps = [replay_round(level, graph, r, "movement") for r in rounds[:2]]
    rep = evaluate(rounds[:2], reps)
    s = rep.summary()
    assert s["euclidean"]["Overall"][0] < 0.1
    assert set(s) >= {"dtw", "dtw_per_step", "euclidean", "rmse", "frechet"}
    rep.save(tmp_path / "m.json")
    assert (tmp_path / "m.txt").exists()
    with pytest.raises(ContractError):
        evaluate(rounds[:2], reps[:1])
