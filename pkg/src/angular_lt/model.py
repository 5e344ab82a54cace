"""MLP feature extractor with a linear classifier head, manual backprop and SGD."""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .angular import angular_logits, angular_logits_backward
from .numeric import check_finite, rng_stream

CLASSIFIER_W = "classifier.weight"
CLASSIFIER_B = "classifier.bias"
LWS = "lws_scale"

_ACTS = {
    "relu": (lambda a: np.maximum(a, 0.0), lambda a: (a > 0).astype(np.float64)),
    "tanh": (np.tanh, lambda a: 1.0 - np.tanh(a) ** 2),
    "identity": (lambda a: a, lambda a: np.ones_like(a)),
}


@dataclass
class ModelParams:
    """Named parameter tensors; extractor layer k is ``extractor.k.{weight,bias}``.

    Weights are stored (out, in) so classifier row c is the weight vector of
    class c. ``version`` is bumped by every optimizer step and lets backward
    detect a cache built against older parameters.
    """

    tensors: dict
    activations: list
    frozen: frozenset = frozenset()
    version: int = 0

    @property
    def num_layers(self):
        return len(self.activations)

    @property
    def W(self):
        return self.tensors[CLASSIFIER_W]

    @property
    def bias(self):
        return self.tensors.get(CLASSIFIER_B)

    @property
    def lws_scale(self):
        return self.tensors.get(LWS)

    @property
    def num_classes(self):
        return self.W.shape[0]

    @property
    def input_dim(self):
        return self.tensors["extractor.0.weight"].shape[1] if self.num_layers else self.W.shape[1]

    def extractor_names(self):
        return [k for k in self.tensors if k.startswith("extractor.")]

    def copy(self):
        return ModelParams({k: v.copy() for k, v in self.tensors.items()},
                           list(self.activations), self.frozen, self.version)


def init_model(input_dim, num_classes, hidden=(32, 16), seed=0, bias=False,
               activation="relu", feature_activation="identity"):
    """He-normal extractor layers and a 1/fan_in-scaled classifier.

    Hidden layers use ``activation``; the last extractor layer, whose output is
    the feature vector, uses ``feature_activation``.
    """
    rng = rng_stream(seed, "init")
    tensors = {}
    acts = []
    fan_in = input_dim
    for k, width in enumerate(hidden):
        tensors[f"extractor.{k}.weight"] = rng.standard_normal((width, fan_in)) * np.sqrt(2.0 / fan_in)
        tensors[f"extractor.{k}.bias"] = np.zeros(width)
        acts.append(activation if k < len(hidden) - 1 else feature_activation)
        fan_in = width
    tensors[CLASSIFIER_W] = rng.standard_normal((num_classes, fan_in)) * np.sqrt(1.0 / fan_in)
    if bias:
        tensors[CLASSIFIER_B] = np.zeros(num_classes)
    return ModelParams(tensors, acts)


def add_lws(params):
    p = params.copy()
    p.tensors[LWS] = np.ones(params.num_classes)
    return p


def drop_lws(params):
    p = params.copy()
    p.tensors.pop(LWS, None)
    return p


@dataclass
class ForwardCache:
    inputs: list
    preacts: list
    features: np.ndarray
    linear: np.ndarray
    version: int

    @property
    def lws_base(self):
        return self.linear


def forward(params, x):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != params.input_dim:
        raise ValueError(f"input width {x.shape[1]} != model input dim {params.input_dim}")
    inputs, preacts = [], []
    h = x
    for k, act in enumerate(params.activations):
        inputs.append(h)
        a = h @ params.tensors[f"extractor.{k}.weight"].T + params.tensors[f"extractor.{k}.bias"]
        preacts.append(a)
        h = _ACTS[act][0](a)
    z = h @ params.W.T
    if params.bias is not None:
        z = z + params.bias
    return ForwardCache(inputs, preacts, h, z, params.version)


def head_logits(params, cache, mode="linear", norm_floor=None):
    """Logits of the requested head: ``linear``, ``angular`` or ``lws``."""
    if mode == "linear":
        return cache.linear
    if mode == "angular":
        return angular_logits(cache.features, params.W, norm_floor)
    if mode == "lws":
        if params.lws_scale is None:
            raise ValueError("model has no lws_scale; lws mode unavailable")
        return cache.linear * params.lws_scale
    raise ValueError(f"unknown head {mode!r}")


def backward(params, cache, d_logits, head="linear", norm_floor=None):
    """Gradients of every parameter given the gradient at the chosen head's logits.

    Frozen parameters receive exact zeros.
    """
    if cache.version != params.version:
        raise ValueError("stale forward cache: parameters changed since forward()")
    g = np.asarray(d_logits, dtype=np.float64)
    grads = {k: np.zeros_like(v) for k, v in params.tensors.items()}

    if head == "angular":
        d_phi, d_w = angular_logits_backward(cache.features, params.W, g, norm_floor)
        grads[CLASSIFIER_W] = d_w
    elif head in ("linear", "lws"):
        if head == "lws":
            if params.lws_scale is None:
                raise ValueError("model has no lws_scale; lws mode unavailable")
            grads[LWS] = np.sum(g * cache.linear, axis=0)
            g = g * params.lws_scale
        grads[CLASSIFIER_W] = g.T @ cache.features
        if params.bias is not None:
            grads[CLASSIFIER_B] = g.sum(axis=0)
        d_phi = g @ params.W
    else:
        raise ValueError(f"unknown head {head!r}")

    extractor_frozen = all(k in params.frozen for k in params.extractor_names())
    if not extractor_frozen:
        d_h = d_phi
        for k in reversed(range(params.num_layers)):
            d_a = d_h * _ACTS[params.activations[k]][1](cache.preacts[k])
            grads[f"extractor.{k}.weight"] = d_a.T @ cache.inputs[k]
            grads[f"extractor.{k}.bias"] = d_a.sum(axis=0)
            if k:
                d_h = d_a @ params.tensors[f"extractor.{k}.weight"]

    for k in params.frozen:
        grads[k] = np.zeros_like(params.tensors[k])
    return grads


@dataclass
class OptState:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocity: dict = field(default_factory=dict)


def sgd_step(params, grads, opt):
    """Momentum SGD with coupled weight decay, in place. Frozen tensors are skipped."""
    for name, w in params.tensors.items():
        if name in params.frozen:
            continue
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {w.shape} for {name}")
        if opt.weight_decay:
            g = g + opt.weight_decay * w
        v = opt.velocity.get(name)
        v = g.copy() if v is None else opt.momentum * v + g
        opt.velocity[name] = v
        w -= opt.lr * v
        check_finite(w, name)
    params.version += 1


def freeze_mask(params, prefixes=("extractor.",)):
    """Boolean per tensor: True where the name starts with one of ``prefixes``."""
    return {k: k.startswith(tuple(prefixes)) for k in params.tensors}


def apply_freeze(params, mask):
    missing = set(params.tensors) ^ set(mask)
    if missing:
        raise ValueError(f"freeze mask does not cover parameters exactly: {sorted(missing)}")
    params.frozen = frozenset(k for k, v in mask.items() if v)
    return params


_MAGIC = "angular-lt-checkpoint 1"


def checkpoint_save(params, path, meta=None):
    """Text manifest terminated by ``end``, then little-endian float64 arrays in order."""
    lines = [_MAGIC, "activations=" + ",".join(params.activations),
             "frozen=" + ",".join(sorted(params.frozen)), f"version={params.version}"]
    for k, v in sorted((meta or {}).items()):
        lines.append(f"meta.{k}={v}")
    for name, t in params.tensors.items():
        shape = " ".join(str(s) for s in t.shape)
        lines.append(f"tensor={name} {t.ndim} {shape}")
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for t in params.tensors.values():
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def checkpoint_load(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = 0
    header = []
    while True:
        nl = blob.find(b"\n", pos)
        if nl < 0:
            raise ValueError(f"{path}: corrupt checkpoint, manifest unterminated at offset {pos}")
        line = blob[pos:nl].decode("utf-8", errors="replace")
        pos = nl + 1
        if line == "end":
            break
        header.append(line)
    if not header or header[0] != _MAGIC:
        raise ValueError(f"{path}: corrupt checkpoint, bad magic at offset 0")
    acts, frozen, version, specs = [], frozenset(), 0, []
    for line in header[1:]:
        key, _, val = line.partition("=")
        if key == "activations":
            acts = val.split(",") if val else []
        elif key == "frozen":
            frozen = frozenset(val.split(",")) if val else frozenset()
        elif key == "version":
            version = int(val)
        elif key == "tensor":
            parts = val.split()
            ndim = int(parts[1])
            specs.append((parts[0], tuple(int(s) for s in parts[2:2 + ndim])))
    tensors = {}
    for name, shape in specs:
        nbytes = 8 * int(np.prod(shape))
        if pos + nbytes > len(blob):
            raise ValueError(f"{path}: corrupt checkpoint, tensor {name} truncated at offset {len(blob)} "
                             f"(needs {pos + nbytes} bytes)")
        tensors[name] = np.frombuffer(blob, dtype="<f8", count=nbytes // 8, offset=pos).astype(np.float64).reshape(shape)
        pos += nbytes
    if pos != len(blob):
        raise ValueError(f"{path}: corrupt checkpoint, {len(blob) - pos} trailing bytes at offset {pos}")
    return ModelParams(tensors, acts, frozen, version)


def params_digest(params):
    """Stable hash of all parameter bytes, used to assert read-only evaluation."""
    h = hashlib.sha256()
    for name, t in params.tensors.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(t, dtype="<f8").tobytes())
    return h.hexdigest()
