import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ordered_steps.core import StepComponentMatrix
from ordered_steps.dp_assign import brute_force
from ordered_steps.evalkit import (
    GroundTruth,
    Prediction,
    average_precision,
    corpus_stats,
    infer,
    longest_increasing_subsequence_length,
    mean_average_precision,
    occurrence_order,
    order_consistency,
    positive_mask,
    recall,
    uniform_baseline,
)
from ordered_steps.model import ComponentClassifierBank, step_scores


def test_uniform_baseline():
    assert uniform_baseline(10, 2).times == (2, 7)
    assert uniform_baseline(4, 4).times == (0, 1, 2, 3)
    with pytest.raises(ValueError):
        uniform_baseline(2, 3)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 30).flatmap(lambda K: st.tuples(st.just(K), st.integers(K, 500))))
def test_uniform_baseline_collision_free(args):
    K, T = args
    t = uniform_baseline(T, K).times
    assert all(b > a for a, b in zip(t, t[1:])) and 0 <= t[0] and t[-1] < T


def test_prediction_must_increase():
    with pytest.raises(ValueError):
        Prediction((3, 3))


def test_recall_examples():
    gt = {"a": GroundTruth((((0.0, 2.0),), ((5.0, 6.0),)))}
    assert recall({"a": Prediction((1, 5))}, gt) == 1.0
    gts = {"a": gt["a"], "b": GroundTruth((((0.0, 1.0),), ()))}
    # a: step0 hit, step1 miss; b: step0 hit, step1 missing in GT
    assert recall({"a": Prediction((0, 9)), "b": Prediction((0, 5))}, gts) == 0.5
    assert recall({"a": Prediction((0, 9)), "b": Prediction((4, 5))}, gts) == 0.25


def test_recall_boundaries_inclusive():
    # segment 2 has midpoint 2.5
    assert recall({"v": Prediction((2,))}, {"v": GroundTruth((((2.5, 3.0),),))}) == 1.0
    assert recall({"v": Prediction((2,))}, {"v": GroundTruth((((1.0, 2.5),),))}) == 1.0
    assert recall({"v": Prediction((2,))}, {"v": GroundTruth((((2.6, 3.0),),))}) == 0.0
    # half-second segments: segment 2 is [1.0, 1.5), midpoint 1.25
    assert recall({"v": Prediction((2,))}, {"v": GroundTruth((((1.25, 2.0),),))}, seconds_per_segment=0.5) == 1.0


def test_recall_any_vs_first_interval():
    gt = {"v": GroundTruth((((0.0, 1.0), (8.0, 9.0)),))}
    assert recall({"v": Prediction((8,))}, gt) == 1.0
    assert recall({"v": Prediction((8,))}, gt, match="first") == 0.0


def test_recall_errors():
    gt = {"v": GroundTruth((((0.0, 1.0),),))}
    with pytest.raises(ValueError):
        recall({"w": Prediction((0,))}, gt)
    with pytest.raises(ValueError):
        recall({"v": Prediction((0, 1))}, gt)
    with pytest.raises(ValueError):
        GroundTruth((((3.0, 1.0),),))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10), st.floats(-5, 5))
def test_recall_invariant_under_monotone_rescaling(seed, a, b):
    rng = np.random.default_rng(seed)
    A = StepComponentMatrix(np.eye(3, dtype=int))
    bank = ComponentClassifierBank(rng.normal(size=(3, 2)), rng.normal(size=3), 0.0)
    X = rng.normal(size=(20, 2))
    p1 = infer(bank, A, X)
    scaled = ComponentClassifierBank(a * bank.weights, a * bank.biases + b, 0.0)
    p2 = infer(scaled, A, X)
    gt = {"v": GroundTruth((((0.0, 7.0),), ((6.0, 12.0),), ((12.0, 20.0),)))}
    assert recall({"v": p1}, gt) == recall({"v": p2}, gt)


def test_infer_examples():
    A = StepComponentMatrix(np.eye(2, dtype=int))
    X = np.zeros((6, 2))
    X[1, 0] = X[4, 1] = 1.0
    bank = ComponentClassifierBank(10 * np.eye(2), np.zeros(2), 0.5)
    p = infer(bank, A, X)
    assert p.times == (1, 4)
    assert p.scores.shape == (6, 2)
    assert infer(ComponentClassifierBank.zeros(2, 2), A, X).times == (0, 1)
    with pytest.raises(ValueError):
        infer(bank, A, np.zeros((1, 2)))


def test_infer_matches_brute_force():
    rng = np.random.default_rng(0)
    A = StepComponentMatrix(np.array([[1, 1, 0], [0, 1, 1]]))
    for _ in range(50):
        bank = ComponentClassifierBank(rng.normal(size=(3, 4)), rng.normal(size=3), 0.0)
        X = rng.normal(size=(5, 4))
        f = step_scores(bank, A, X)
        best = max(itertools.combinations(range(5), 2), key=lambda p: f[p[0], 0] + f[p[1], 1])
        p = infer(bank, A, X)
        assert f[p.times[0], 0] + f[p.times[1], 1] == pytest.approx(f[best[0], 0] + f[best[1], 1], abs=1e-12)
        assert p.times == brute_force(-f).times


def ap_oracle(scores, pos):
    # direct PR-curve: for every distinct threshold, precision and recall of
    # {score >= threshold}; AP = sum over thresholds of (delta recall) * precision
    n_pos = sum(pos)
    ap, prev_r = 0.0, 0.0
    for thr in sorted(set(scores), reverse=True):
        sel = [p for s, p in zip(scores, pos) if s >= thr]
        r = sum(sel) / n_pos
        ap += (r - prev_r) * (sum(sel) / len(sel))
        prev_r = r
    return ap


def test_ap_examples():
    assert average_precision([3, 2, 1, 0], [1, 1, 0, 0]) == 1.0
    assert average_precision([0, 1, 2, 3, 4], [1, 0, 0, 0, 0]) == pytest.approx(1 / 5)
    with pytest.raises(ValueError):
        average_precision([1, 2], [0, 0])


def test_ap_matches_oracles():
    skm = pytest.importorskip("sklearn.metrics")
    rng = np.random.default_rng(1)
    for _ in range(40):
        s = rng.integers(0, 6, size=20).astype(float) if rng.random() < 0.5 else rng.normal(size=20)
        y = rng.random(20) < 0.3
        if not y.any():
            y[0] = True
        ours = average_precision(s, y)
        assert abs(ours - ap_oracle(list(s), list(y))) < 1e-9
        assert abs(ours - skm.average_precision_score(y, s)) < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_ap_bounds_and_perfect_iff_separated(seed):
    rng = np.random.default_rng(seed)
    s = rng.integers(0, 5, size=12).astype(float)
    y = rng.random(12) < 0.4
    if not y.any():
        y[3] = True
    ap = average_precision(s, y)
    assert 0.0 <= ap <= 1.0
    separated = (~y).sum() == 0 or s[y].min() > s[~y].max()
    assert (ap == 1.0) == separated


def test_positive_mask_and_map():
    gt = GroundTruth((((0.0, 1.0),), ((3.0, 4.0),)))
    m = positive_mask(gt, 5)
    assert m[:, 0].tolist() == [True, False, False, False, False]
    assert m[:, 1].tolist() == [False, False, False, True, False]
    S = np.where(m, 1.0, 0.0)
    assert mean_average_precision([S], [gt]) == 1.0
    # step 1 has no positive in the second video, so its score there ties
    # with the true positive: AP(step 1) = 0.5, AP(step 0) = 1
    gt2 = GroundTruth((((0.0, 1.0),), ()))
    assert mean_average_precision([S, S], [gt, gt2]) == 0.75
    with pytest.raises(ValueError):
        mean_average_precision([S], [GroundTruth(((), ()))])
    with pytest.raises(ValueError):
        mean_average_precision([np.full((5, 2), np.nan)], [gt])


def test_order_consistency():
    assert order_consistency([2, 1, 3]) == pytest.approx(2 / 3)
    assert order_consistency([1, 2, 3, 4]) == 1.0
    assert order_consistency([5, 4, 3, 2, 1]) == pytest.approx(1 / 5)
    with pytest.raises(ValueError):
        order_consistency([])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=9))
def test_lis_matches_exhaustive(xs):
    best = 0
    for r in range(1, len(xs) + 1):
        for idx in itertools.combinations(range(len(xs)), r):
            sub = [xs[i] for i in idx]
            if all(b > a for a, b in zip(sub, sub[1:])):
                best = r
    assert longest_increasing_subsequence_length(xs) == best


def test_corpus_stats():
    gt = GroundTruth((((0.0, 1.0),), ((2.0, 3.0),)))
    s = corpus_stats([gt], [4])
    assert s["background_fraction"] == 0.5
    assert s["missing_step_fraction"] == 0.0
    assert s["order_consistency"] == 1.0
    swapped = GroundTruth((((5.0, 6.0),), ((0.0, 1.0),), ()))
    assert occurrence_order(swapped) == [1, 0]
    s = corpus_stats([gt, swapped], [4, 8])
    assert s["missing_step_fraction"] == pytest.approx(1 / 5)
    assert s["order_consistency"] == pytest.approx(0.75)
