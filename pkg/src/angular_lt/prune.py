"""Sample scoring for data pruning (EL2N, AVH, random) and the prune plans built from them."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .angular import TRAIN_NORM_FLOOR, angles
from .dataset import one_hot
from .model import forward
from .numeric import argmax_tiebreak, rng_stream, softmax

log = logging.getLogger(__name__)

METRICS = ("random", "class_random", "el2n", "avh")


@dataclass(frozen=True)
class PruneScoreTable:
    scores: np.ndarray
    metric: str
    k: int = 1
    epochs: int = 0
    seeds: tuple = ()
    labels: np.ndarray = field(default=None, repr=False)

    def to_rows(self):
        labels = self.labels if self.labels is not None else np.full(self.scores.size, -1)
        return [(i, int(y), float(s), self.metric, self.k, self.epochs)
                for i, (y, s) in enumerate(zip(labels, self.scores))]


@dataclass(frozen=True)
class PrunePlan:
    fraction: float
    direction: str
    kept: np.ndarray


def el2n_score(member_probs, labels):
    """Mean over ensemble members of ||p(x) - onehot(y)||_2."""
    probs = np.asarray(member_probs, dtype=np.float64)
    if probs.ndim == 2:
        probs = probs[None]
    if probs.shape[0] == 0:
        raise ValueError("ensemble is empty")
    t = one_hot(labels, probs.shape[2])
    return np.mean(np.linalg.norm(probs - t[None], axis=2), axis=0)


def avh_share(angle_rows, labels):
    a = np.atleast_2d(np.asarray(angle_rows, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    total = a.sum(axis=1)
    bad = np.flatnonzero(total <= 0)
    if bad.size:
        raise ValueError(f"all-zero angle row at sample {int(bad[0])}")
    return a[np.arange(a.shape[0]), labels] / total


def avh_score(member_angles, labels):
    """Mean over ensemble members of the true-class angle's share of all angles."""
    angs = np.asarray(member_angles, dtype=np.float64)
    if angs.ndim == 2:
        angs = angs[None]
    if angs.shape[0] == 0:
        raise ValueError("ensemble is empty")
    return np.mean([avh_share(a, labels) for a in angs], axis=0)


def _n_keep(n, fraction):
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"prune fraction must lie in [0, 1), got {fraction}")
    return int(math.floor((1.0 - fraction) * n + 0.5))


def random_prune(n, fraction, seed):
    keep = _n_keep(n, fraction)
    rng = rng_stream(seed, "prune", 0)
    kept = np.sort(rng.permutation(n)[:keep])
    return PrunePlan(fraction, "random", kept)


def classwise_random_prune(labels, fraction, seed):
    labels = np.asarray(labels, dtype=np.int64)
    rng = rng_stream(seed, "prune", 1)
    kept = []
    for c in range(int(labels.max()) + 1 if labels.size else 0):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            continue
        keep = _n_keep(idx.size, fraction)
        if keep == 0:
            log.warning("class %d would be emptied by pruning; keeping one sample", c)
            keep = 1
        kept.append(rng.permutation(idx)[:keep])
    kept = np.sort(np.concatenate(kept)) if kept else np.zeros(0, dtype=np.int64)
    return PrunePlan(fraction, "class_random", kept)


def prune_by_score(scores, fraction, direction="drop_lowest"):
    """Drop the lowest (or highest) scoring fraction. Ties order by sample index."""
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.size
    keep = _n_keep(n, fraction)
    order = np.argsort(scores, kind="stable")
    if direction in ("drop_lowest", "low"):
        kept = order[n - keep:]
    elif direction in ("drop_highest", "high"):
        kept = order[:keep]
    else:
        raise ValueError(f"unknown prune direction {direction!r}")
    return PrunePlan(fraction, "drop_lowest" if direction in ("drop_lowest", "low") else "drop_highest",
                     np.sort(kept))


def member_outputs(params, ds):
    """Linear softmax probabilities and feature-weight angles of one trained model."""
    cache = forward(params, ds.features)
    return softmax(cache.linear, axis=1), angles(cache.features, params.W, TRAIN_NORM_FLOOR)


def ensemble_protocol(train, metric, k, epochs, seeds, train_member):
    """Score every training sample with an ensemble of briefly trained models.

    ``train_member(seed, epochs)`` must return trained parameters; members are
    evaluated in seed order and their scores averaged.
    """
    if k < 1:
        raise ValueError("ensemble size must be >= 1")
    seeds = tuple(int(s) for s in seeds)[:k]
    if len(seeds) < k:
        raise ValueError(f"need {k} seeds, got {len(seeds)}")
    probs, angs = [], []
    for s in seeds:
        p, a = member_outputs(train_member(s, epochs), train)
        probs.append(p)
        angs.append(a)
    if metric == "el2n":
        scores = el2n_score(probs, train.labels)
    elif metric == "avh":
        scores = avh_score(angs, train.labels)
    else:
        raise ValueError(f"metric {metric!r} is not ensemble-based")
    table = PruneScoreTable(scores, metric, k, epochs, seeds, train.labels)
    correct = np.all([argmax_tiebreak(np.pi - a, axis=1) == train.labels for a in angs], axis=0)
    return table, correct


def plan_for(metric, train, fraction, seed, table=None, direction="drop_lowest"):
    if metric == "random":
        return random_prune(len(train), fraction, seed)
    if metric == "class_random":
        return classwise_random_prune(train.labels, fraction, seed)
    if table is None:
        raise ValueError(f"metric {metric!r} needs a score table")
    return prune_by_score(table.scores, fraction, direction)
