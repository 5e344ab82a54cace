"""Two-stage training pipelines, evaluation, and seeded sweeps.

Stage one trains the whole network on long-tailed data (plain CE, CE with
mixup, or angular entropy minimization). Stage two freezes the extractor and
finetunes the classifier on a class-balanced stream, either with label-aware
smoothing plus learnable weight scaling or with the active, angle-driven
smoothing. Test-time re-weighting can be applied to any finished model.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import calibrate, diagnostics, losses
from .angular import TRAIN_NORM_FLOOR
from .dataset import (SynthSpec, class_balanced_stream, default_groups, group_split, mixup,
                      one_hot, synth_gaussian_balanced, synth_gaussian_lt)
from .model import (OptState, add_lws, apply_freeze, backward, forward, freeze_mask, head_logits,
                    init_model, sgd_step)
from .numeric import argmax_tiebreak, rng_stream, softmax
from .prune import avh_score, ensemble_protocol, member_outputs, plan_for

log = logging.getLogger(__name__)

STAGE1 = ("ce", "ce_mixup", "aem")
STAGE2 = ("none", "las_lws", "alas")
POSTHOC = ("none", "abs")
EVAL_MODES = ("linear", "angular", "lws")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    data: SynthSpec = field(default_factory=SynthSpec)
    hidden: tuple = (32, 16)
    bias: bool = False
    feature_activation: str = "identity"
    stage1: str = "ce"
    stage2: str = "none"
    posthoc: str = "none"
    eval_mode: str = ""
    epochs1: int = 100
    epochs2: int = 30
    batch_size: int = 128
    lr: float = 0.1
    lr2: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_drop_at: float = 0.8
    mixup_alpha: float = 1.0
    stage1_head: str = ""
    stage2_head: str = ""
    tau: float = 0.75
    alas_form: str = "concave"
    alas_granularity: str = "batch"
    las_form: str = "concave"
    las_head: float = 0.3
    las_tail: float = 0.0
    abs_s: float = -1.0
    abs_form: str = ""
    groups: tuple = ()
    seed: int = 0

    def __post_init__(self):
        for name, allowed in (("stage1", STAGE1), ("stage2", STAGE2), ("posthoc", POSTHOC)):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.eval_mode and self.eval_mode not in EVAL_MODES:
            raise ValueError(f"eval_mode must be one of {EVAL_MODES}")
        if self.stage2 == "alas" and self.eval_mode == "lws":
            raise ValueError("the active smoothing stage removes weight scaling; lws eval is unavailable")
        if self.alas_granularity not in ("batch", "epoch"):
            raise ValueError("alas_granularity must be 'batch' or 'epoch'")

    @property
    def resolved_eval_mode(self):
        if self.eval_mode:
            return self.eval_mode
        if self.stage2 == "las_lws":
            return "lws"
        if self.stage2 == "alas" or self.stage1 == "aem" or self.posthoc == "abs":
            return "angular"
        return "linear"

    @property
    def resolved_stage1_head(self):
        return self.stage1_head or ("angular" if self.stage1 == "aem" else "linear")

    @property
    def resolved_stage2_head(self):
        return self.stage2_head or ("angular" if self.stage2 == "alas" else "lws")

    @property
    def group_spec(self):
        if self.groups:
            return group_split(self.data.num_classes, self.groups)
        return default_groups(self.data.num_classes)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["groups"] = [list(r) for _, r in self.group_spec.items()]
        d["resolved"] = {"eval_mode": self.resolved_eval_mode,
                         "stage1_head": self.resolved_stage1_head,
                         "stage2_head": self.resolved_stage2_head if self.stage2 != "none" else None}
        return d


# Named method configurations from the ablation matrix.
PRESETS = {
    "baseline_s1": dict(stage1="ce", stage2="none", eval_mode="linear"),
    "l2a_s1": dict(stage1="ce", stage2="none", eval_mode="angular"),
    "mislas_s1": dict(stage1="ce_mixup", stage2="none", eval_mode="linear"),
    "mislas_s2": dict(stage1="ce_mixup", stage2="las_lws", eval_mode="lws"),
    "l2a_s2": dict(stage1="ce_mixup", stage2="las_lws", eval_mode="angular"),
    "abs": dict(stage1="ce", stage2="none", posthoc="abs", eval_mode="angular"),
    "atl_aem": dict(stage1="aem", stage2="none", eval_mode="angular"),
    "atl_alas": dict(stage1="ce_mixup", stage2="alas", eval_mode="angular"),
    "atl_all": dict(stage1="aem", stage2="alas", eval_mode="angular"),
}


def preset(name, **overrides):
    return ExperimentConfig(**{**PRESETS[name], **overrides})


def build_data(cfg):
    spec = replace(cfg.data, seed=cfg.seed)
    return synth_gaussian_lt(spec), synth_gaussian_balanced(spec)


def _lr_at(base, epoch, epochs, drop_at):
    return base * 0.1 if epochs and epoch >= math.floor(drop_at * epochs) else base


def _check(loss, epoch, stage):
    if not np.isfinite(loss):
        raise TrainingDiverged(f"{stage}: loss became non-finite at epoch {epoch}")


def _forward(params, x, epoch, stage):
    cache = forward(params, x)
    if not (np.all(np.isfinite(cache.features)) and np.all(np.isfinite(cache.linear))):
        where = "" if epoch is None else f" at epoch {epoch}"
        raise TrainingDiverged(f"{stage}: activations became non-finite{where}")
    return cache


def _step(params, grads, opt, epoch, stage):
    try:
        sgd_step(params, grads, opt)
    except FloatingPointError as exc:
        raise TrainingDiverged(f"{stage}: {exc} at epoch {epoch}") from None


def stage_one(cfg, train, epochs=None, seed=None):
    """Train extractor and classifier on the (long-tailed) training set."""
    epochs = cfg.epochs1 if epochs is None else epochs
    seed = cfg.seed if seed is None else seed
    params = init_model(train.dim, train.num_classes, cfg.hidden, seed=seed, bias=cfg.bias,
                        feature_activation=cfg.feature_activation)
    opt = OptState(cfg.lr, cfg.momentum, cfg.weight_decay)
    batch_rng = rng_stream(seed, "batch", 0)
    mix_rng = rng_stream(seed, "mixup")
    loss_id = "aem" if cfg.stage1 == "aem" else "ce"
    head = cfg.resolved_stage1_head
    floor = TRAIN_NORM_FLOOR if head == "angular" else None
    targets = one_hot(train.labels, train.num_classes)
    n, bs = len(train), cfg.batch_size
    for epoch in range(epochs):
        opt.lr = _lr_at(cfg.lr, epoch, epochs, cfg.lr_drop_at)
        order = batch_rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            x, q = train.features[idx], targets[idx]
            if cfg.stage1 == "ce_mixup":
                partner = mix_rng.permutation(idx.size)
                x, q = mixup(x, q, x[partner], q[partner], cfg.mixup_alpha, mix_rng)
            cache = _forward(params, x, epoch, "stage one")
            loss, g = losses.loss_and_grad(loss_id, head_logits(params, cache, head, floor), q)
            _check(loss, epoch, "stage one")
            _step(params, backward(params, cache, g, head, floor), opt, epoch, "stage one")
    return params


def stage_two(params, cfg, train, epochs=None):
    """Freeze the extractor and finetune the classifier on a class-balanced stream."""
    epochs = cfg.epochs2 if epochs is None else epochs
    if cfg.stage2 == "none":
        return params
    params = params.copy()
    if cfg.stage2 == "las_lws":
        params = add_lws(params)
    apply_freeze(params, freeze_mask(params))
    head = cfg.resolved_stage2_head
    floor = TRAIN_NORM_FLOOR
    counts = train.class_counts
    opt = OptState(cfg.lr2, cfg.momentum, cfg.weight_decay)
    stream = class_balanced_stream(train, cfg.seed)
    steps = math.ceil(len(train) / cfg.batch_size)

    if cfg.stage2 == "las_lws":
        table = losses.las_targets(counts, cfg.las_form, cfg.las_head, cfg.las_tail)
    else:
        state = losses.alas_init(counts, cfg.tau, cfg.alas_form, cfg.las_head, cfg.las_tail)

    for epoch in range(epochs):
        opt.lr = _lr_at(cfg.lr2, epoch, epochs, cfg.lr_drop_at)
        if cfg.stage2 == "alas" and cfg.alas_granularity == "epoch":
            full = forward(params, train.features)
            probs = softmax(head_logits(params, full, "angular", floor), axis=1)
            state, _ = losses.alas_update(state, probs, train.labels)
        for _ in range(steps):
            idx = stream.take(cfg.batch_size)
            y = train.labels[idx]
            cache = _forward(params, train.features[idx], epoch, "stage two")
            if cfg.stage2 == "las_lws":
                q = table[y]
            elif cfg.alas_granularity == "batch":
                probs = softmax(head_logits(params, cache, "angular", floor), axis=1)
                state, q = losses.alas_update(state, probs, y)
            else:
                q = losses.alas_targets(state, y)
            loss, g = losses.loss_and_grad("ce", head_logits(params, cache, head, floor), q)
            _check(loss, epoch, "stage two")
            _step(params, backward(params, cache, g, head, floor), opt, epoch, "stage two")
    params.frozen = frozenset()
    return params


@dataclass
class EvalReport:
    overall: float
    per_class: list
    groups: dict
    confusion: list
    mode: str
    calibrated: bool = False

    def to_dict(self):
        return asdict(self)


def predict_scores(params, x, mode, profile=None):
    """Scores whose row-wise argmax is the prediction."""
    cache = _forward(params, x, None, "evaluation")
    z = head_logits(params, cache, mode, TRAIN_NORM_FLOOR)
    if profile is None:
        return z
    return calibrate.abs_apply(softmax(z, axis=1), profile)[0]


def evaluate(params, test, mode="linear", profile=None, groups=None):
    """Accuracy report; read-only with respect to ``params``."""
    m = test.num_classes
    groups = groups or default_groups(m)
    pred = argmax_tiebreak(predict_scores(params, test.features, mode, profile), axis=1)
    conf = np.zeros((m, m), dtype=np.int64)
    np.add.at(conf, (test.labels, pred), 1)
    counts = conf.sum(axis=1)
    hits = np.diag(conf)
    per_class = [float(h / c) if c else None for h, c in zip(hits, counts)]
    grp = {}
    for name, (lo, hi) in groups.items():
        tot = counts[lo:hi].sum()
        grp[name] = float(hits[lo:hi].sum() / tot) if tot else None
    overall = float(hits.sum() / counts.sum()) if counts.sum() else 0.0
    return EvalReport(overall, per_class, grp, conf.tolist(), mode, profile is not None)


def train_probs(params, train, mode="angular"):
    cache = forward(params, train.features)
    return softmax(head_logits(params, cache, mode, TRAIN_NORM_FLOOR), axis=1)


def abs_profile(params, cfg, train, s=None, mode="angular"):
    form, d_s = calibrate.default_abs_settings(train.num_classes)
    form = cfg.abs_form or form
    if s is None:
        s = cfg.abs_s if cfg.abs_s >= 0 else d_s
    return calibrate.build_profile(train_probs(params, train, mode), s, form)


def _profile_dict(series):
    return {"kind": series.kind, "normalization": series.normalization,
            "values": [float(v) for v in series.values], "raw": [float(v) for v in series.raw]}


def run_diagnostics(params, train, test, profile=None, final=None):
    d = {}
    d["weight_norm"] = _profile_dict(diagnostics.weight_norm_profile(params.W))
    d["weight_norm_spearman_vs_index"] = diagnostics.weight_norm_index_correlation(params.W)
    lin = diagnostics.mean_logit_profile(params, train, "linear")
    ang = diagnostics.mean_logit_profile(params, train, "angular")
    d["mean_linear_logit"] = _profile_dict(lin)
    d["mean_angular_logit"] = _profile_dict(ang)
    d["smoothness"] = {"linear": diagnostics.smoothness(lin), "angular": diagnostics.smoothness(ang)}
    before = diagnostics.mean_prob_profile(params, test, "angular")
    d["mean_angular_prob_test"] = _profile_dict(before)
    if profile is not None:
        after = diagnostics.mean_prob_profile(params, test, "angular", profile)
        d["mean_angular_prob_test_abs"] = _profile_dict(after)
        d["flatness_ratio"] = {"before": diagnostics.flatness_ratio(before),
                               "after": diagnostics.flatness_ratio(after)}
    if final is not None:
        _, angs = member_outputs(params, test)
        scores = avh_score(angs, test.labels)
        correct = argmax_tiebreak(np.pi - angs, axis=1) == test.labels
        acc = [np.nan if v is None else v for v in final.per_class]
        d["hardness_accuracy"] = diagnostics.hardness_accuracy(scores, test.labels, acc, correct)
    return d


def run_experiment(cfg, data=None):
    """Run the configured pipeline and return a JSON-ready result bundle."""
    train, test = data if data is not None else build_data(cfg)
    groups = cfg.group_spec
    mode = cfg.resolved_eval_mode
    bundle = {"config": cfg.to_dict(),
              "data": {"train_counts": train.class_counts.tolist(),
                       "test_counts": test.class_counts.tolist()},
              "reports": {}}
    reports = bundle["reports"]

    s1 = stage_one(cfg, train)
    for m in ("linear", "angular"):
        reports[f"stage1/{m}"] = evaluate(s1, test, m, groups=groups).to_dict()
    model, stage = s1, "stage1"
    if cfg.stage2 != "none":
        model, stage = stage_two(s1, cfg, train), "stage2"
        modes = ("linear", "angular", "lws") if cfg.stage2 == "las_lws" else ("linear", "angular")
        for m in modes:
            reports[f"stage2/{m}"] = evaluate(model, test, m, groups=groups).to_dict()
        bundle["stage2_weight_norm"] = _profile_dict(diagnostics.weight_norm_profile(model.W))

    profile = None
    final_key = f"{stage}/{mode}"
    if cfg.posthoc == "abs":
        profile = abs_profile(model, cfg, train, mode=mode)
        final_key = f"{stage}/{mode}+abs"
        reports[final_key] = evaluate(model, test, mode, profile, groups).to_dict()
        bundle["calibration"] = {"s": profile.s, "form": profile.form,
                                 "gamma": profile.gamma.tolist(), "F": profile.F.tolist(),
                                 "mean_conf": profile.mean_conf.tolist()}
    elif final_key not in reports:
        reports[final_key] = evaluate(model, test, mode, groups=groups).to_dict()
    bundle["final"] = final_key
    final = EvalReport(**reports[final_key])
    diag_profile = profile or abs_profile(s1, cfg, train)
    bundle["diagnostics"] = {"stage1": run_diagnostics(s1, train, test, diag_profile,
                                                       EvalReport(**reports["stage1/angular"]))}
    if stage == "stage2":
        bundle["diagnostics"]["stage2"] = run_diagnostics(model, train, test, None, final)
    return bundle


def map_ordered(fn, items, threads=1):
    """Apply ``fn`` over ``items``; results come back in input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _summary(values):
    v = np.array([np.nan if x is None else x for x in values], dtype=np.float64)
    sd = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return float(np.mean(v)), sd


def summarize_reports(reports):
    """Mean and sample sd over seeds of overall and group accuracies."""
    row = {}
    for key in ("overall", "head", "mid", "tail"):
        vals = [r.overall if key == "overall" else r.groups[key] for r in reports]
        row[f"{key}_mean"], row[f"{key}_sd"] = _summary(vals)
    return row


def sweep_s(cfg, grid, seeds, threads=1):
    """Re-weighting strength sweep; each seed trains once and is evaluated at every s."""
    def one(seed):
        c = replace(cfg, seed=seed)
        train, test = build_data(c)
        model = stage_two(stage_one(c, train), c, train)
        base = abs_profile(model, c, train, s=0.0)
        return [evaluate(model, test, "angular", calibrate.with_strength(base, s), c.group_spec)
                for s in grid]

    per_seed = map_ordered(one, seeds, threads)
    return [{"param": "s", "value": float(s), "n_seeds": len(seeds),
             **summarize_reports([r[i] for r in per_seed])} for i, s in enumerate(grid)]


def sweep_tau(cfg, grid, seeds, threads=1):
    """Smoothing-strength sweep for the active smoothing stage; stage one is shared per seed."""
    cfg = replace(cfg, stage2="alas")

    def one(seed):
        c = replace(cfg, seed=seed)
        train, test = build_data(c)
        s1 = stage_one(c, train)
        out = []
        for tau in grid:
            ct = replace(c, tau=float(tau))
            out.append(evaluate(stage_two(s1, ct, train), test, ct.resolved_eval_mode,
                                groups=ct.group_spec))
        return out

    per_seed = map_ordered(one, seeds, threads)
    return [{"param": "tau", "value": float(t), "n_seeds": len(seeds),
             **summarize_reports([r[i] for r in per_seed])} for i, t in enumerate(grid)]


def sweep(cfg, param, grid, seeds, threads=1):
    if param == "s":
        return sweep_s(cfg, grid, seeds, threads)
    if param == "tau":
        return sweep_tau(cfg, grid, seeds, threads)
    raise ValueError(f"unknown sweep parameter {param!r}; expected 's' or 'tau'")


def ensemble_seeds(seed, k):
    return [int(rng_stream(seed, "ensemble", j).integers(2**62)) for j in range(k)]


def prune_curve(cfg, metrics, fractions, seeds, k=5, epochs=5, direction="drop_lowest",
                threads=1):
    """Prune-then-retrain accuracy for each (metric, fraction), over seeds.

    Score ensembles train with plain CE on the full long-tailed set. The
    retrained model follows ``cfg``'s stage-one settings and is evaluated in
    its resolved eval mode.
    """
    member_cfg = replace(cfg, stage1="ce", stage1_head="", stage2="none")
    mode = cfg.resolved_eval_mode

    def one(seed):
        c = replace(cfg, seed=seed)
        train, test = build_data(c)
        cache = {}

        def member(s, e):
            if (s, e) not in cache:
                cache[(s, e)] = stage_one(replace(member_cfg, seed=s), train, epochs=e, seed=s)
            return cache[(s, e)]

        tables, correct = {}, None
        for metric in metrics:
            if metric in ("el2n", "avh"):
                tables[metric], correct = ensemble_protocol(
                    train, metric, k, epochs, ensemble_seeds(seed, k), member)
        unpruned = evaluate(stage_one(c, train), test, mode, groups=c.group_spec)
        results = {}
        for metric in metrics:
            for f in fractions:
                plan = plan_for(metric, train, f, seed, tables.get(metric), direction)
                model = stage_one(c, train.subset(plan.kept))
                results[(metric, f)] = evaluate(model, test, mode, groups=c.group_spec)
        return {"results": results, "tables": tables, "unpruned": unpruned,
                "avh_correct": correct, "n_train": len(train)}

    per_seed = map_ordered(one, seeds, threads)
    rows = []
    for metric in metrics:
        for f in fractions:
            reps = [r["results"][(metric, f)] for r in per_seed]
            accs = [r.overall for r in reps]
            mean, sd = _summary(accs)
            rows.append({"metric": metric, "fraction": float(f), "mean_accuracy": mean, "sd": sd,
                         "n_seeds": len(seeds), "per_seed": accs})
    return rows, per_seed
