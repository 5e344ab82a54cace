"""Per-class profiles and summary statistics behind the analysis figures."""

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .angular import TRAIN_NORM_FLOOR
from .calibrate import abs_apply
from .losses import minmax
from .model import forward, head_logits
from .numeric import softmax


@dataclass(frozen=True)
class ProfileSeries:
    values: np.ndarray
    raw: np.ndarray
    kind: str
    normalization: str = "minmax"

    def to_rows(self):
        return [(c, float(v)) for c, v in enumerate(self.values)]


def weight_norm_profile(W):
    """Row norms of the classifier, min-max normalized (all ones when equal)."""
    norms = np.linalg.norm(np.asarray(W, dtype=np.float64), axis=1)
    return ProfileSeries(minmax(norms, degenerate=1.0), norms, "weight_norm")


def _logits(params, ds, mode):
    cache = forward(params, ds.features)
    return head_logits(params, cache, mode, TRAIN_NORM_FLOOR)


def mean_logit_profile(params, ds, mode="angular"):
    if len(ds) == 0:
        raise ValueError("empty dataset")
    raw = _logits(params, ds, mode).mean(axis=0)
    return ProfileSeries(minmax(raw, degenerate=1.0), raw, f"mean_{mode}_logit")


def mean_prob_profile(params, ds, mode="angular", calibration=None):
    """Per-class mean softmax probability, optionally after re-weighting (left unnormalized)."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    p = softmax(_logits(params, ds, mode), axis=1)
    kind = f"mean_{mode}_prob"
    if calibration is not None:
        p = abs_apply(p, calibration)[1]
        kind += "_abs"
    raw = p.mean(axis=0)
    return ProfileSeries(raw, raw, kind, "none")


def smoothness(series):
    """Largest jump between adjacent classes; smaller means smoother."""
    v = np.asarray(getattr(series, "values", series), dtype=np.float64)
    if v.size < 2:
        return 0.0
    return float(np.max(np.abs(np.diff(v))))


def flatness_ratio(series):
    v = np.asarray(getattr(series, "raw", series), dtype=np.float64)
    return float(v.max() / v.min()) if v.min() > 0 else float("inf")


def rank_correlation(a, b):
    """Spearman rho, or None when either side is constant."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return None
    return float(stats.spearmanr(a, b).statistic)


def linear_correlation(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return None
    return float(stats.pearsonr(a, b).statistic)


def weight_norm_index_correlation(W):
    norms = np.linalg.norm(np.asarray(W, dtype=np.float64), axis=1)
    return rank_correlation(norms, np.arange(norms.size))


def hardness_accuracy(avh_scores, labels, per_class_accuracy, angular_correct=None):
    """Correlate per-class mean AVH with per-class accuracy.

    When ``angular_correct`` (per-sample, True if every ensemble member got the
    sample right by angular argmax) is given, also count samples that break
    the bound AVH <= 1/M.
    """
    scores = np.asarray(avh_scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    acc = np.asarray(per_class_accuracy, dtype=np.float64)
    m = acc.size
    present = np.bincount(labels, minlength=m) > 0
    per_class = np.array([scores[labels == c].mean() if present[c] else np.nan for c in range(m)])
    keep = present & np.isfinite(acc)
    rec = {
        "per_class_avh": [None if np.isnan(v) else float(v) for v in per_class],
        "pearson": linear_correlation(per_class[keep], acc[keep]),
        "spearman": rank_correlation(per_class[keep], acc[keep]),
    }
    if angular_correct is not None:
        mask = np.asarray(angular_correct, dtype=bool)
        rec["angular_correct"] = int(mask.sum())
        # tiny slack: the bound is exact in real arithmetic, equality is hit at ties
        rec["bound_violations"] = int(np.sum(scores[mask] > 1.0 / m + 1e-12))
    return rec
