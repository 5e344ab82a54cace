"""Training objectives and their analytic gradients with respect to logits.

Every batch loss here is a mean over rows of a per-row loss evaluated on
``softmax(logits)``; the returned gradient already includes the 1/n factor.
"""

from dataclasses import dataclass, replace

import numpy as np

from .numeric import log_softmax, softmax

LOG_FLOOR = 1e-300
R_MAX = 1.0 - 1e-6

_clamped_logs = 0


def clamped_log_count():
    """How many log(0) evaluations were clamped at LOG_FLOOR so far."""
    return _clamped_logs


def _safe_log(p, q):
    global _clamped_logs
    bad = (p <= 0) & (q > 0)
    if bad.any():
        _clamped_logs += int(bad.sum())
    return np.log(np.maximum(p, LOG_FLOOR))


def cross_entropy(p, q):
    """-sum q log p with 0 log 0 = 0. Works row-wise on 2-D input."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    terms = np.where(q > 0, q * _safe_log(p, q), 0.0)
    return -np.sum(terms, axis=-1)


def entropy(p):
    p = np.asarray(p, dtype=np.float64)
    return -np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0), axis=-1)


def aem_loss(p, q):
    """Cross-entropy plus the entropy of the prediction; zero only at p = q one-hot."""
    return cross_entropy(p, q) + entropy(p)


def shape_form(x, form):
    """Map values already scaled to [0, 1] through a linear or concave (sine) form."""
    if form == "linear":
        return x
    if form in ("concave", "sine"):
        return np.sin(np.pi * x / 2)
    raise ValueError(f"unknown form {form!r}")


def minmax(v, degenerate=1.0):
    v = np.asarray(v, dtype=np.float64)
    if np.isnan(v).any():
        raise ValueError("NaN in input")
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.full_like(v, degenerate)
    return (v - lo) / (hi - lo)


def smoothing_factors(values, form="concave", head=1.0, tail=0.0):
    """Per-class smoothing factor, increasing in ``values`` (counts or confidences).

    Values are min-max normalized, passed through ``form`` and mapped affinely
    onto [tail, head]. ``head=1, tail=0`` gives the bare normalized form.
    """
    return tail + (head - tail) * shape_form(minmax(values), form)


def las_targets(class_counts, form="concave", head=1.0, tail=0.0):
    """Rows are the label-aware smoothed target distribution for each true class."""
    counts = np.asarray(class_counts, dtype=np.float64)
    m = counts.size
    if m < 2:
        raise ValueError("label-aware smoothing needs at least 2 classes")
    if np.any(counts <= 0):
        raise ValueError("class counts must be positive")
    f = smoothing_factors(counts, form, head, tail)
    return las_targets_from_factors(f)


def las_targets_from_factors(f):
    f = np.asarray(f, dtype=np.float64)
    m = f.size
    t = np.repeat((f / (m - 1))[:, None], m, axis=1)
    t[np.arange(m), np.arange(m)] = 1.0 - f
    return t


@dataclass(frozen=True)
class SmoothingState:
    R: np.ndarray
    tau: float = 0.75
    form: str = "concave"
    batch: int = 0


def alas_init(class_counts, tau=0.75, form="concave", head=1.0, tail=0.0):
    r0 = np.clip(smoothing_factors(class_counts, form, head, tail), 0.0, R_MAX)
    return SmoothingState(R=r0, tau=float(tau), form=form, batch=0)


def alas_step(r_prev, tau, f_value):
    """One moving-average step of the regularization factor, clamped to [0, R_MAX]."""
    return np.clip((tau * np.asarray(f_value) + np.asarray(r_prev)) / 2.0, 0.0, R_MAX)


def alas_update(state, probs, labels):
    """Refresh per-class factors from a batch of angular probabilities.

    For each class present, the mean probability its own samples assign to
    it is taken; those means are min-max normalized over the present classes
    and shaped by ``state.form``. Absent classes keep their previous factor.
    Returns ``(new_state, targets)`` where targets carry ``1 - R_y`` on the
    true class and zero elsewhere.
    """
    if state is None or state.R is None:
        raise ValueError("smoothing state is not initialized")
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    m = state.R.size
    present = np.flatnonzero(np.bincount(labels, minlength=m))
    means = np.array([probs[labels == c, c].mean() for c in present])
    r = state.R.copy()
    if present.size:
        f = shape_form(minmax(means), state.form)
        r[present] = alas_step(state.R[present], state.tau, f)
    new = replace(state, R=r, batch=state.batch + 1)
    return new, alas_targets(new, labels)


def alas_targets(state, labels):
    labels = np.asarray(labels, dtype=np.int64)
    t = np.zeros((labels.size, state.R.size))
    t[np.arange(labels.size), labels] = 1.0 - state.R[labels]
    return t


LOSSES = ("ce", "aem")


def loss_and_grad(loss_id, logits, targets):
    """Mean batch loss and its gradient with respect to ``logits``.

    ``targets`` holds per-row target weights. They need not sum to one; the
    weighted negative log-likelihood used with smoothed labels relies on that.
    """
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    q = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if z.shape != q.shape:
        raise ValueError(f"logits {z.shape} and targets {q.shape} differ in shape")
    n = z.shape[0]
    logp = log_softmax(z, axis=1)
    p = np.exp(logp)
    qsum = q.sum(axis=1, keepdims=True)
    ce = -np.sum(q * logp, axis=1)
    grad = qsum * p - q
    if loss_id == "ce":
        loss = ce
    elif loss_id == "aem":
        plogp = np.sum(p * logp, axis=1, keepdims=True)
        loss = ce - plogp[:, 0]
        # d/dz sum p log p = p * (log p - sum p log p)
        grad = grad - p * (logp - plogp)
    else:
        raise ValueError(f"unknown loss {loss_id!r}")
    return float(loss.mean()), grad / n


def probs_of(logits):
    return softmax(logits, axis=1)
