"""Long-tailed datasets: count schedules, synthetic generation, sampling, mixup, CSV IO."""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .numeric import rng_stream


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        x = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ValueError(f"features {x.shape} and labels {y.shape} do not line up")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain non-finite values")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, indices, name=None):
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes, name or self.name)


@dataclass(frozen=True)
class LTSpec:
    total: int
    num_classes: int
    imbalance: float = 100.0


@dataclass(frozen=True)
class GroupSpec:
    head: tuple
    mid: tuple
    tail: tuple

    def items(self):
        return (("head", self.head), ("mid", self.mid), ("tail", self.tail))


@dataclass(frozen=True)
class SynthSpec:
    dim: int = 20
    num_classes: int = 10
    radius: float = 3.0
    sigma: float = 1.0
    n_max: int = 500
    imbalance: float = 100.0
    test_per_class: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")

    @property
    def lt(self):
        return LTSpec(self.n_max * self.num_classes, self.num_classes, self.imbalance)


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def longtail_counts(spec):
    """Per-class sample counts decaying exponentially from N/M down to N/(M*beta)."""
    n, m, beta = spec.total, spec.num_classes, float(spec.imbalance)
    if m < 2:
        raise ValueError("need at least 2 classes")
    if beta < 1:
        raise ValueError(f"imbalance ratio must be >= 1, got {beta}")
    if n < m:
        raise ValueError(f"total {n} smaller than number of classes {m}")
    base = n / m
    counts = [max(1, _round_half_up(base * beta ** (-c / (m - 1)))) for c in range(m)]
    return np.array(counts, dtype=np.int64)


def subsample_longtail(balanced, counts, seed):
    """Draw counts[c] samples of each class uniformly without replacement.

    Selected samples keep their original relative order.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape[0] != balanced.num_classes:
        raise ValueError("counts length must equal number of classes")
    rng = rng_stream(seed, "subsample")
    keep = []
    for c in range(balanced.num_classes):
        idx = np.flatnonzero(balanced.labels == c)
        if counts[c] > idx.size:
            raise ValueError(f"class {c} has {idx.size} samples, {counts[c]} requested")
        keep.append(rng.choice(idx, size=int(counts[c]), replace=False))
    keep = np.sort(np.concatenate(keep)) if keep else np.zeros(0, dtype=np.int64)
    return balanced.subset(keep)


def class_means(spec):
    rng = rng_stream(spec.seed, "data", 0)
    g = rng.standard_normal((spec.num_classes, spec.dim))
    return spec.radius * g / np.linalg.norm(g, axis=1, keepdims=True)


def _gaussian_samples(means, counts, sigma, rng):
    labels = np.repeat(np.arange(means.shape[0]), counts)
    noise = rng.standard_normal((labels.size, means.shape[1]))
    return means[labels] + sigma * noise, labels


def synth_gaussian_lt(spec):
    """Long-tailed Gaussian blobs whose class means sit on a sphere of radius r."""
    means = class_means(spec)
    counts = longtail_counts(spec.lt)
    x, y = _gaussian_samples(means, counts, spec.sigma, rng_stream(spec.seed, "data", 1))
    return Dataset(x, y, spec.num_classes, name=f"synth-lt-b{spec.imbalance:g}")


def synth_gaussian_balanced(spec, per_class=None, split="test"):
    """Balanced draw sharing the class means of ``synth_gaussian_lt(spec)``."""
    per_class = spec.test_per_class if per_class is None else per_class
    means = class_means(spec)
    counts = np.full(spec.num_classes, per_class, dtype=np.int64)
    sub = {"train": 2, "test": 3}[split]
    x, y = _gaussian_samples(means, counts, spec.sigma, rng_stream(spec.seed, "data", sub))
    return Dataset(x, y, spec.num_classes, name=f"synth-balanced-{split}")


class ClassBalancedStream:
    """Infinite index stream where every class is drawn equally often.

    Classes are visited in shuffled rounds (each round is a permutation of all
    classes); within a class, indices cycle through fresh seeded permutations,
    so small classes are oversampled with replacement across cycles.
    """

    def __init__(self, labels, num_classes, seed):
        labels = np.asarray(labels)
        self._pools = [np.flatnonzero(labels == c) for c in range(num_classes)]
        for c, pool in enumerate(self._pools):
            if pool.size == 0:
                raise ValueError(f"class {c} is empty")
        self._rng = rng_stream(seed, "batch", 1)
        self._perms = [self._rng.permutation(p) for p in self._pools]
        self._pos = [0] * num_classes
        self._round = []
        self.num_classes = num_classes

    def _next_class(self):
        if not self._round:
            self._round = list(self._rng.permutation(self.num_classes)[::-1])
        return int(self._round.pop())

    def _next_index(self, c):
        if self._pos[c] == self._perms[c].size:
            self._perms[c] = self._rng.permutation(self._pools[c])
            self._pos[c] = 0
        i = self._perms[c][self._pos[c]]
        self._pos[c] += 1
        return int(i)

    def __iter__(self):
        return self

    def __next__(self):
        return self._next_index(self._next_class())

    def take(self, n):
        return np.array([next(self) for _ in range(n)], dtype=np.int64)


def class_balanced_stream(ds, seed):
    return ClassBalancedStream(ds.labels, ds.num_classes, seed)


def one_hot(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def mixup(xa, qa, xb, qb, alpha=1.0, rng=None, lam=None):
    """Convex combination of two batches and their label distributions.

    One lambda ~ Beta(alpha, alpha) is drawn per pair unless ``lam`` is given.
    """
    xa, xb = np.asarray(xa, dtype=np.float64), np.asarray(xb, dtype=np.float64)
    qa, qb = np.asarray(qa, dtype=np.float64), np.asarray(qb, dtype=np.float64)
    if xa.shape != xb.shape or qa.shape != qb.shape or xa.shape[0] != qa.shape[0]:
        raise ValueError("mixup batches must have matching shapes")
    if lam is None:
        if not alpha > 0:
            raise ValueError("mixup alpha must be > 0")
        lam = rng.beta(alpha, alpha, size=xa.shape[0])
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (xa.shape[0],))[:, None]
    return lam * xa + (1 - lam) * xb, lam * qa + (1 - lam) * qb


def group_split(num_classes, ranges):
    """Validate head/mid/tail half-open ranges that must tile [0, num_classes)."""
    ranges = [tuple(int(v) for v in r) for r in ranges]
    if len(ranges) != 3:
        raise ValueError("need exactly three ranges (head, mid, tail)")
    pos = 0
    for lo, hi in sorted(ranges):
        if lo > pos:
            raise ValueError(f"gap at {pos}")
        if lo < pos:
            raise ValueError(f"overlap at {lo}")
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi})")
        pos = hi
    if pos != num_classes:
        raise ValueError(f"gap at {pos}" if pos < num_classes else f"range exceeds {num_classes}")
    return GroupSpec(*ranges)


def default_groups(num_classes):
    if num_classes == 10:
        cuts = (3, 7)
    elif num_classes == 100:
        cuts = (36, 71)
    elif num_classes == 1000:
        cuts = (390, 835)
    else:
        cuts = (round(0.3 * num_classes), round(0.7 * num_classes))
    return group_split(num_classes, [(0, cuts[0]), (cuts[0], cuts[1]), (cuts[1], num_classes)])


def save_csv(ds, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"f{j}" for j in range(ds.dim)])
        for y, row in zip(ds.labels, ds.features):
            w.writerow([int(y)] + [repr(float(v)) for v in row])


def load_csv(path, num_classes=None, name=None):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    d = len(header) - 1
    if d < 1 or header[0] != "label" or header[1:] != [f"f{j}" for j in range(d)]:
        raise ValueError(f"{path}:1: header must be label,f0,...,f{{d-1}}")
    if len(rows) == 1:
        raise ValueError(f"{path}: no data rows")
    labels = np.empty(len(rows) - 1, dtype=np.int64)
    feats = np.empty((len(rows) - 1, d))
    for i, row in enumerate(rows[1:]):
        lineno = i + 2
        if len(row) != d + 1:
            raise ValueError(f"{path}:{lineno}: expected {d + 1} fields, got {len(row)}")
        try:
            labels[i] = int(row[0])
            feats[i] = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        if labels[i] < 0:
            raise ValueError(f"{path}:{lineno}: negative label")
    m = int(labels.max()) + 1 if num_classes is None else num_classes
    return Dataset(feats, labels, m, name=name or str(path))
