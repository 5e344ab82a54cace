import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from angular_lt.prune import (PruneScoreTable, avh_score, avh_share, classwise_random_prune,
                              el2n_score, ensemble_protocol, prune_by_score, random_prune)
from angular_lt.angular import angles
from angular_lt.numeric import argmax_tiebreak


def test_el2n_uniform_vs_one_hot():
    assert abs(el2n_score(np.full((1, 10), 0.1), [4])[0] - math.sqrt(0.9)) < 1e-12


def test_el2n_averages_members():
    a = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
    np.testing.assert_allclose(el2n_score(a, [0]), [math.sqrt(2) / 2])
    with pytest.raises(ValueError, match="empty"):
        el2n_score(np.zeros((0, 1, 2)), [0])


def test_avh_equal_angles():
    assert abs(avh_share(np.full((1, 7), 1.3), [2])[0] - 1 / 7) < 1e-12
    with pytest.raises(ValueError, match="sample 0"):
        avh_share(np.zeros((1, 3)), [0])


def test_avh_ensemble_mean():
    angs = np.array([[[1.0, 3.0]], [[1.0, 1.0]]])
    np.testing.assert_allclose(avh_score(angs, [0]), [(0.25 + 0.5) / 2])


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12))
def test_avh_bound_for_angular_correct(seed, m):
    # argmin angle on the true class means its share is at most the average share
    r = np.random.default_rng(seed)
    a = angles(r.standard_normal((40, 5)), r.standard_normal((m, 5)))
    y = r.integers(0, m, 40)
    share = avh_share(a, y)
    correct = argmax_tiebreak(np.pi - a, axis=1) == y
    assert np.all(share[correct] <= 1 / m + 1e-12)


def test_n_keep_round_half_up():
    assert random_prune(5, 0.5, 0).kept.size == 3
    assert random_prune(10, 0.0, 0).kept.size == 10
    with pytest.raises(ValueError):
        random_prune(10, 1.0, 0)


def test_random_prune_seeded_and_sorted():
    a, b = random_prune(100, 0.3, 5), random_prune(100, 0.3, 5)
    np.testing.assert_array_equal(a.kept, b.kept)
    assert a.kept.size == 70 and np.all(np.diff(a.kept) > 0)


def test_classwise_random_keeps_every_class(caplog):
    labels = np.array([0] * 10 + [1])
    plan = classwise_random_prune(labels, 0.9, 0)
    np.testing.assert_array_equal(np.bincount(labels[plan.kept]), [1, 1])
    assert "class 1" in caplog.text


def test_prune_by_score_directions_and_ties():
    s = np.array([0.5, 0.1, 0.5, 0.9, 0.1])
    np.testing.assert_array_equal(prune_by_score(s, 0.4, "low").kept, [0, 2, 3])
    np.testing.assert_array_equal(prune_by_score(s, 0.4, "high").kept, [0, 1, 4])
    # ties: the stable order drops the lowest index first among equal low scores
    np.testing.assert_array_equal(prune_by_score(s, 0.2, "low").kept, [0, 2, 3, 4])
    np.testing.assert_array_equal(prune_by_score(s, 0.0).kept, np.arange(5))
    with pytest.raises(ValueError):
        prune_by_score(s, 0.2, "sideways")


def test_score_table_rows():
    t = PruneScoreTable(np.array([0.3, 0.7]), "avh", 5, 3, (1, 2), np.array([1, 0]))
    assert t.to_rows() == [(0, 1, 0.3, "avh", 5, 3), (1, 0, 0.7, "avh", 5, 3)]


def test_ensemble_protocol_with_stub_members():
    from angular_lt.dataset import Dataset
    from conftest import tiny_net

    r = np.random.default_rng(0)
    ds = Dataset(r.standard_normal((12, 4)), r.integers(0, 3, 12), 3)
    calls = []

    def member(seed, epochs):
        calls.append((seed, epochs))
        return tiny_net(seed)

    table, correct = ensemble_protocol(ds, "avh", 3, 2, [11, 12, 13, 14], member)
    assert calls == [(11, 2), (12, 2), (13, 2)]
    assert table.scores.shape == (12,) and correct.shape == (12,)
    assert np.all(table.scores[correct] <= 1 / 3 + 1e-12)
    with pytest.raises(ValueError, match="need 3 seeds"):
        ensemble_protocol(ds, "avh", 3, 2, [1], member)
    with pytest.raises(ValueError):
        ensemble_protocol(ds, "random", 1, 2, [1], member)
