"""Numerically safe primitives and seeded random streams shared by every module."""

import numpy as np

ARCCOS_EPS = 1e-7

# Named stream ids; every random draw in the package goes through one of these.
STREAMS = {
    "data": 1,
    "test": 2,
    "init": 3,
    "batch": 4,
    "mixup": 5,
    "ensemble": 6,
    "prune": 7,
    "subsample": 8,
}


def rng_stream(seed, stream, *sub):
    """Return an independent ``numpy.random.Generator`` for ``(seed, stream, *sub)``.

    ``stream`` is either a name from ``STREAMS`` or an integer id. Extra integer
    components (an ensemble member index, say) select further independent
    sub-streams. Same arguments give a bit-identical sequence on every platform.
    """
    if isinstance(stream, str):
        stream = STREAMS[stream]
    key = (int(stream),) + tuple(int(s) for s in sub)
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise ValueError("empty logits")
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise ValueError("empty logits")
    z = z - np.max(z, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def safe_arccos(u, grad_path=False):
    """arccos with clamping so overshoot from rounding never yields NaN.

    The value path clamps to [-1, 1]. The gradient path clamps to
    [-1 + eps, 1 - eps] because d/du arccos(u) is singular at |u| = 1.
    """
    u = np.asarray(u, dtype=np.float64)
    if np.isnan(u).any():
        raise ValueError("safe_arccos: NaN input")
    lim = 1.0 - ARCCOS_EPS if grad_path else 1.0
    out = np.arccos(np.clip(u, -lim, lim))
    return float(out) if out.ndim == 0 else out


def arccos_grad(u):
    """d/du arccos(u), evaluated at the gradient-path clamp."""
    u = np.clip(np.asarray(u, dtype=np.float64), -1.0 + ARCCOS_EPS, 1.0 - ARCCOS_EPS)
    return -1.0 / np.sqrt(1.0 - u * u)


def argmax_tiebreak(v, axis=-1):
    """Index of the maximum; ties go to the lowest index."""
    v = np.asarray(v)
    if v.size == 0:
        raise ValueError("argmax of empty vector")
    # np.argmax already returns the first occurrence of the maximum.
    out = np.argmax(v, axis=axis)
    return int(out) if np.ndim(out) == 0 else out


def check_finite(a, what="array"):
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"non-finite values in {what}")
    return a
