"""Test-time bias-directed re-weighting of angular probabilities.

Classes that collect more probability mass on the training set are damped at
test time by ``gamma_c = 1 - s * F_c`` where F is a normalized profile of the
per-class mean training confidence.
"""

from dataclasses import dataclass

import numpy as np

from .losses import shape_form


@dataclass(frozen=True)
class CalibrationProfile:
    mean_conf: np.ndarray
    F: np.ndarray
    s: float
    form: str
    gamma: np.ndarray

    def to_text(self):
        """key=value sidecar; arrays are space-separated with 17 significant digits."""
        fmt = lambda a: " ".join(format(float(v), ".17g") for v in a)  # noqa: E731
        return (f"s={self.s!r}\nform={self.form}\nmean_conf={fmt(self.mean_conf)}\n"
                f"F={fmt(self.F)}\ngamma={fmt(self.gamma)}\n")

    @classmethod
    def from_text(cls, text):
        kv = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
        arr = lambda k: np.array([float(v) for v in kv[k].split()])  # noqa: E731
        return cls(arr("mean_conf"), arr("F"), float(kv["s"]), kv["form"], arr("gamma"))


def class_mean_confidence(train_probs):
    """Mean probability each class receives over all training samples."""
    p = np.atleast_2d(np.asarray(train_probs, dtype=np.float64))
    if p.shape[0] == 0:
        raise ValueError("no training predictions")
    return p.mean(axis=0)


def bias_profile(mean_conf, form="sine"):
    """Normalize mean confidences into [0, 1] with a sine or linear form.

    Equal confidences everywhere mean there is no bias to remove, so F is zero.
    """
    m = np.asarray(mean_conf, dtype=np.float64)
    if np.isnan(m).any():
        raise ValueError("NaN in mean confidences")
    lo, hi = m.min(), m.max()
    if hi == lo:
        return np.zeros_like(m)
    return shape_form((m - lo) / (hi - lo), form)


def default_abs_settings(num_classes):
    return ("sine", 0.25) if num_classes <= 10 else ("linear", 0.1)


def build_profile(train_probs, s=None, form=None):
    d_form, d_s = default_abs_settings(np.asarray(train_probs).shape[1])
    form = d_form if form is None else form
    s = d_s if s is None else float(s)
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [0, 1], got {s}")
    m = class_mean_confidence(train_probs)
    F = bias_profile(m, form)
    return CalibrationProfile(m, F, s, form, 1.0 - s * F)


def with_strength(profile, s):
    return CalibrationProfile(profile.mean_conf, profile.F, float(s), profile.form, 1.0 - s * profile.F)


def abs_apply(test_probs, profile):
    """Return ``(scores, normalized)``; predictions should use argmax of scores."""
    p = np.atleast_2d(np.asarray(test_probs, dtype=np.float64))
    if p.shape[1] != profile.gamma.size:
        raise ValueError(f"probabilities have {p.shape[1]} classes, profile has {profile.gamma.size}")
    scores = p * profile.gamma
    total = scores.sum(axis=1, keepdims=True)
    normalized = np.divide(scores, total, out=np.zeros_like(scores), where=total > 0)
    return scores, normalized
