"""Angles between features and classifier rows, and the angular logits built on them.

The angular logit for class c is ``pi - angle(phi, W_c)``. It depends only on
directions, so rescaling a feature or any classifier row leaves it unchanged.
"""

import numpy as np

from .numeric import arccos_grad, safe_arccos, softmax

# Norm floor for training and evaluation, where a feature row can be exactly zero.
TRAIN_NORM_FLOOR = 1e-12


def _row_norms(a, what, floor):
    n = np.linalg.norm(a, axis=1)
    if floor is None:
        bad = np.flatnonzero(n == 0)
        if bad.size:
            raise ValueError(f"zero-norm {what} row at index {int(bad[0])}")
        return n
    return np.maximum(n, floor)


def cosine(features, weights, norm_floor=None):
    phi = np.atleast_2d(np.asarray(features, dtype=np.float64))
    w = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    if phi.shape[1] != w.shape[1]:
        raise ValueError(f"feature width {phi.shape[1]} != weight width {w.shape[1]}")
    fn = _row_norms(phi, "feature", norm_floor)
    wn = _row_norms(w, "weight", norm_floor)
    # normalize before the product so huge rows cannot overflow
    return (phi / fn[:, None]) @ (w / wn[:, None]).T


def angles(features, weights, norm_floor=None):
    """Matrix of angles in [0, pi] between each feature row and each weight row."""
    return safe_arccos(cosine(features, weights, norm_floor))


def angular_logits(features, weights, norm_floor=None):
    return np.pi - angles(features, weights, norm_floor)


def angular_probs(features, weights, norm_floor=None):
    return softmax(angular_logits(features, weights, norm_floor), axis=1)


def angular_logits_backward(features, weights, d_logits, norm_floor=None):
    """Pull a gradient on angular logits back to the features and weight rows.

    With u = phi.W_c / (|phi| |W_c|) and logit = pi - arccos(u), the chain runs
    through the eps-clamped arccos derivative. A norm sitting on the floor is
    treated as constant.
    """
    phi = np.atleast_2d(np.asarray(features, dtype=np.float64))
    w = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    g = np.asarray(d_logits, dtype=np.float64)

    fn_raw = np.linalg.norm(phi, axis=1)
    wn_raw = np.linalg.norm(w, axis=1)
    fn = _row_norms(phi, "feature", norm_floor)
    wn = _row_norms(w, "weight", norm_floor)
    u = (phi / fn[:, None]) @ (w / wn[:, None]).T

    # d logit / d u = -d arccos / d u
    gu = g * -arccos_grad(u)
    # Where the floor is active the norm is a constant, so its term drops out.
    f_live = fn_raw >= fn
    w_live = wn_raw >= wn

    wu = w / wn[:, None]
    d_phi = (gu @ wu) / fn[:, None]
    d_phi -= np.where(f_live[:, None], np.sum(gu * u, axis=1)[:, None] * phi / (fn * fn)[:, None], 0.0)

    pu = phi / fn[:, None]
    d_w = (gu.T @ pu) / wn[:, None]
    d_w -= np.where(w_live[:, None], np.sum(gu * u, axis=0)[:, None] * w / (wn * wn)[:, None], 0.0)
    return d_phi, d_w
