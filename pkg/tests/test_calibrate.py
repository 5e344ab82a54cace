import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from angular_lt.calibrate import (CalibrationProfile, abs_apply, bias_profile, build_profile,
                                  class_mean_confidence, default_abs_settings, with_strength)
from angular_lt.numeric import softmax


def test_class_mean_confidence_examples():
    np.testing.assert_allclose(class_mean_confidence([[0.8, 0.2], [0.6, 0.4]]), [0.7, 0.3])
    np.testing.assert_allclose(class_mean_confidence([[1, 0], [0, 1]]), [0.5, 0.5])
    with pytest.raises(ValueError):
        class_mean_confidence(np.zeros((0, 3)))


def test_bias_profile_forms():
    m = np.array([0.1, 0.2, 0.3])
    np.testing.assert_allclose(bias_profile(m, "linear"), [0, 0.5, 1])
    F = bias_profile(m, "sine")
    assert F[0] == 0 and F[2] == 1
    assert abs(F[1] - math.sin(math.pi / 4)) < 1e-12
    np.testing.assert_array_equal(bias_profile([0.2, 0.2], "sine"), [0, 0])
    with pytest.raises(ValueError):
        bias_profile([0.1, np.nan])


def test_default_settings():
    assert default_abs_settings(10) == ("sine", 0.25)
    assert default_abs_settings(100) == ("linear", 0.1)


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1), st.floats(0, 1), st.sampled_from(["sine", "linear"]))
def test_gamma_bounds(seed, s, form):
    r = np.random.default_rng(seed)
    prof = build_profile(softmax(r.standard_normal((20, 6)), axis=1), s, form)
    assert np.all(prof.gamma >= 1 - s - 1e-15) and np.all(prof.gamma <= 1)


def test_zero_strength_is_identity(rng):
    train = softmax(rng.standard_normal((30, 5)), axis=1)
    test = softmax(rng.standard_normal((10, 5)), axis=1)
    scores, norm = abs_apply(test, build_profile(train, 0.0))
    np.testing.assert_array_equal(scores, test)
    np.testing.assert_allclose(norm, test)


def test_abs_damps_the_most_confident_class():
    train = np.array([[0.7, 0.2, 0.1]] * 4)
    prof = build_profile(train, 0.5, "linear")
    np.testing.assert_allclose(prof.gamma, [0.5, 1 - 0.5 * (0.1 / 0.6), 1.0])
    scores, norm = abs_apply([[0.45, 0.40, 0.15]], prof)
    assert int(np.argmax(scores)) == 1
    np.testing.assert_allclose(norm.sum(), 1.0)


def test_abs_rejects_bad_inputs(rng):
    with pytest.raises(ValueError, match="s must"):
        build_profile(np.full((2, 3), 1 / 3), 1.5)
    prof = build_profile(np.full((2, 3), 1 / 3), 0.1)
    with pytest.raises(ValueError, match="classes"):
        abs_apply(np.ones((1, 4)) / 4, prof)


def test_with_strength_and_text_round_trip(rng):
    prof = build_profile(softmax(rng.standard_normal((30, 4)), axis=1), 0.2, "sine")
    p2 = with_strength(prof, 0.1)
    np.testing.assert_allclose(p2.gamma, 1 - 0.1 * prof.F)
    back = CalibrationProfile.from_text(prof.to_text())
    np.testing.assert_array_equal(back.gamma, prof.gamma)
    np.testing.assert_array_equal(back.mean_conf, prof.mean_conf)
    assert back.s == prof.s and back.form == "sine"
