import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphwalk.errors import InvalidInputError
from graphwalk.hyperopt import (
    class_metrics,
    hyperparameters_json,
    precision_recall,
    random_search,
    tune_hcrf,
    tune_layer,
    tune_layers,
)
from graphwalk.weights import LAMBDA_GRID


def test_hand_count():
    labels = np.array([1, 1, 1, 1, 1, 0])
    ref = np.array([1, 1, 1, 1, 0, 1])
    assert precision_recall(labels, ref, 1) == (0.8, 0.8)
    assert precision_recall(ref, ref, 1) == (1.0, 1.0)


def test_empty_denominators():
    assert precision_recall(np.zeros(4), np.array([0, 1, 1, 0]), 1) == (1.0, 0.0)
    assert precision_recall(np.zeros(4), np.zeros(4), 1) == (1.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=50), st.integers(0, 2**31))
def test_metric_bounds_and_support(ref, seed):
    ref = np.array(ref)
    lab = np.random.default_rng(seed).integers(0, 4, ref.size)
    for c in range(4):
        p, r = precision_recall(lab, ref, c)
        assert 0 <= p <= 1 and 0 <= r <= 1
        tp = np.sum((lab == c) & (ref == c))
        if np.any(ref == c):
            assert r * np.sum(ref == c) == pytest.approx(tp)


def peaked(v):
    score = 1.0 - abs(v - 0.7)
    return [score, score], [score, score]


def test_synthetic_maximum_found_for_many_seeds():
    for seed in range(50):
        res = random_search(peaked, seed=seed)
        assert res.best == 0.7
        assert all(t.value in LAMBDA_GRID for t in res.trials)


def test_constant_objective_stops_after_21():
    res = random_search(lambda v: ([0.5], [0.5]), seed=3)
    assert len(res.trials) == 21 and res.n_improvements == 0


def test_log_reproducible():
    a = random_search(peaked, seed=11).log_lines()
    b = random_search(peaked, seed=11).log_lines()
    assert a == b
    assert json.loads(a[0])["trial"] == 0


def test_stopping_bound():
    rng = np.random.default_rng(0)
    table = {v: (rng.random(), rng.random()) for v in LAMBDA_GRID}
    for seed in range(20):
        res = random_search(lambda v: ([table[v][0]], [table[v][1]]), seed=seed)
        assert len(res.trials) <= (res.n_improvements + 1) * 20 + 1


def test_tune_layer_and_empty():
    ref = np.array([0, 1, 1, 0, 2])

    def seg(lam):
        return ref if lam == 0.3 else np.zeros(5, int)

    assert tune_layer(seg, ref, 3).best == 0.3
    with pytest.raises(InvalidInputError):
        tune_layer(seg, np.array([]), 3)


def test_tune_layers_coarse_to_fine():
    order = []
    refs = [np.array([0, 1]), np.array([1])]

    def seg(r, lam, frozen):
        order.append((r, tuple(sorted(frozen))))
        return refs[r] if lam == 0.5 else 1 - refs[r]

    frozen, results = tune_layers(seg, refs, 2, background=None)
    assert frozen == {0: 0.5, 1: 0.5}
    assert order[0] == (1, ())
    assert all(f == (1,) for r, f in order if r == 0)


def test_tune_hcrf_zero_coupling_trial():
    refs = [np.array([0, 1, 0])]
    res = tune_hcrf(lambda v: [refs[0] if v >= 0.4 else np.array([1, 1, 0])], refs, 2)
    assert res.best >= 0.4
    assert class_metrics(np.array([1, 1, 0]), refs[0], [0]) == ([1.0], [0.5])


def test_hyperparameters_json():
    row = json.loads(hyperparameters_json({1: 0.3, 0: 0.6}, 0.2, "fpg"))
    assert row == {"variant": "fpg", "lambda_prior_r0": 0.6, "lambda_prior_r1": 0.3, "lambda_hcrf": 0.2}
