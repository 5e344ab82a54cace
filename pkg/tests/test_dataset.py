import math
import os
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from angular_lt.dataset import (ClassBalancedStream, Dataset, LTSpec, SynthSpec, class_means,
                                default_groups, group_split, load_csv, longtail_counts, mixup,
                                one_hot, save_csv, subsample_longtail, synth_gaussian_balanced,
                                synth_gaussian_lt)


def brute_counts(n, m, beta):
    # round half up of n/m * beta^(-c/(m-1)), by exhaustive integer search around the real value
    out = []
    for c in range(m):
        x = (n / m) * beta ** (-c / (m - 1))
        best = max(k for k in range(int(x) + 2) if Fraction(k) <= Fraction(x) + Fraction(1, 2))
        out.append(max(1, best))
    return out


def test_longtail_cifar10_schedule():
    expected = [5000, 2997, 1797, 1077, 646, 387, 232, 139, 83, 50]
    assert brute_counts(50000, 10, 100) == expected
    np.testing.assert_array_equal(longtail_counts(LTSpec(50000, 10, 100)), expected)


def test_longtail_balanced_and_floor():
    np.testing.assert_array_equal(longtail_counts(LTSpec(100, 10, 1)), [10] * 10)
    assert longtail_counts(LTSpec(20, 10, 1e6)).min() == 1


@settings(max_examples=60)
@given(st.integers(2, 30), st.integers(1, 200), st.floats(1, 500))
def test_longtail_properties(m, per, beta):
    counts = longtail_counts(LTSpec(m * per, m, beta))
    assert counts[0] == per
    assert np.all(np.diff(counts) <= 0)
    assert counts.min() >= 1
    assert list(counts) == brute_counts(m * per, m, beta)


@pytest.mark.parametrize("spec,msg", [(LTSpec(100, 1, 10), "2 classes"),
                                      (LTSpec(100, 10, 0.5), ">= 1"),
                                      (LTSpec(5, 10, 10), "smaller")])
def test_longtail_errors(spec, msg):
    with pytest.raises(ValueError, match=msg):
        longtail_counts(spec)


def test_dataset_is_read_only_and_validated():
    ds = Dataset(np.zeros((3, 2)), [0, 1, 1], 2)
    with pytest.raises(ValueError):
        ds.features[0, 0] = 1.0
    with pytest.raises(ValueError, match="line up"):
        Dataset(np.zeros((3, 2)), [0, 1], 2)
    with pytest.raises(ValueError, match="labels"):
        Dataset(np.zeros((2, 2)), [0, 2], 2)
    np.testing.assert_array_equal(ds.class_counts, [1, 2])


def test_subsample_longtail_counts_and_order():
    spec = SynthSpec(dim=3, num_classes=4, n_max=10, imbalance=1, seed=1)
    bal = synth_gaussian_balanced(spec, per_class=20, split="train")
    counts = [10, 6, 3, 1]
    sub = subsample_longtail(bal, counts, seed=5)
    np.testing.assert_array_equal(sub.class_counts, counts)
    # selected rows keep the original relative order
    pos = [int(np.flatnonzero((bal.features == row).all(axis=1))[0]) for row in sub.features]
    assert pos == sorted(pos)
    again = subsample_longtail(bal, counts, seed=5)
    np.testing.assert_array_equal(sub.features, again.features)


def test_subsample_names_short_class():
    spec = SynthSpec(dim=3, num_classes=3, n_max=5, seed=1)
    bal = synth_gaussian_balanced(spec, per_class=4)
    with pytest.raises(ValueError, match="class 2"):
        subsample_longtail(bal, [1, 1, 5], seed=0)


def test_synthetic_lt_counts_and_means():
    spec = SynthSpec(seed=3)
    ds = synth_gaussian_lt(spec)
    np.testing.assert_array_equal(ds.class_counts, longtail_counts(spec.lt))
    np.testing.assert_allclose(np.linalg.norm(class_means(spec), axis=1), spec.radius)
    test = synth_gaussian_balanced(spec)
    np.testing.assert_array_equal(test.class_counts, [100] * 10)
    np.testing.assert_array_equal(synth_gaussian_lt(spec).features, ds.features)
    assert not np.array_equal(synth_gaussian_lt(SynthSpec(seed=4)).features, ds.features)


def test_synthetic_sample_statistics():
    spec = SynthSpec(dim=5, num_classes=2, sigma=0.5, radius=2.0, seed=0)
    ds = synth_gaussian_balanced(spec, per_class=4000)
    mu = class_means(spec)
    for c in range(2):
        x = ds.features[ds.labels == c]
        np.testing.assert_allclose(x.mean(axis=0), mu[c], atol=0.04)
        np.testing.assert_allclose(x.std(axis=0), 0.5, atol=0.03)


def test_class_balanced_stream_is_balanced():
    labels = np.array([0] * 50 + [1] * 5 + [2] * 1)
    s = ClassBalancedStream(labels, 3, seed=0)
    idx = s.take(300)
    np.testing.assert_array_equal(np.bincount(labels[idx], minlength=3), [100, 100, 100])
    # each class cycles through all of its samples before repeating
    first_class1 = [i for i in idx if labels[i] == 1][:5]
    assert sorted(first_class1) == list(range(50, 55))
    np.testing.assert_array_equal(ClassBalancedStream(labels, 3, seed=0).take(300), idx)


def test_class_balanced_stream_empty_class():
    with pytest.raises(ValueError, match="class 1"):
        ClassBalancedStream([0, 0, 2], 3, seed=0)


def test_mixup_convex_and_fixed_lambda():
    xa, xb = np.ones((2, 3)), np.zeros((2, 3))
    qa, qb = one_hot([0, 1], 2), one_hot([1, 0], 2)
    x, q = mixup(xa, qa, xb, qb, lam=0.25)
    np.testing.assert_allclose(x, 0.25)
    np.testing.assert_allclose(q, [[0.25, 0.75], [0.75, 0.25]])
    x, q = mixup(xa, qa, xb, qb, alpha=1.0, rng=np.random.default_rng(0))
    np.testing.assert_allclose(q.sum(axis=1), 1.0)
    assert np.all((x >= 0) & (x <= 1))
    with pytest.raises(ValueError):
        mixup(xa, qa, xb[:1], qb, lam=0.5)


def test_group_split_validation():
    g = group_split(10, [(0, 3), (3, 7), (7, 10)])
    assert g.tail == (7, 10)
    with pytest.raises(ValueError, match="gap at 3"):
        group_split(10, [(0, 3), (4, 7), (7, 10)])
    with pytest.raises(ValueError, match="overlap at 2"):
        group_split(10, [(0, 3), (2, 7), (7, 10)])
    with pytest.raises(ValueError, match="gap at 9"):
        group_split(10, [(0, 3), (3, 7), (7, 9)])


def test_default_groups():
    assert default_groups(100).mid == (36, 71)
    assert default_groups(10).head == (0, 3)
    g = default_groups(20)
    assert g.head[0] == 0 and g.tail[1] == 20


def test_csv_round_trip_is_exact(tmp_path):
    ds = synth_gaussian_lt(SynthSpec(dim=4, num_classes=3, n_max=7, seed=2))
    p = tmp_path / "d.csv"
    save_csv(ds, p)
    back = load_csv(p, 3)
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)
    first = p.read_bytes()
    save_csv(back, p)
    assert p.read_bytes() == first
    assert b"\r" not in first


def test_csv_errors_report_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("label,f0,f1\n0,1.0,2.0\n1,abc,2\n")
    with pytest.raises(ValueError, match=r"bad.csv:3"):
        load_csv(p)
    p.write_text("label,f0,f1\n0,1.0\n")
    with pytest.raises(ValueError, match=r":2: expected 3 fields"):
        load_csv(p)
    p.write_text("y,f0\n0,1\n")
    with pytest.raises(ValueError, match=":1:"):
        load_csv(p)
