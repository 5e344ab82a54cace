from dataclasses import replace

import numpy as np
import pytest

from angular_lt import diagnostics as D
from angular_lt.calibrate import with_strength
from angular_lt.dataset import SynthSpec
from angular_lt.framework import (PRESETS, EvalReport, ExperimentConfig, TrainingDiverged, abs_profile,
                                  build_data, evaluate, map_ordered, predict_scores, preset,
                                  prune_curve, run_experiment, stage_one, stage_two, sweep)
from angular_lt.model import init_model, params_digest

SMALL = SynthSpec(dim=6, num_classes=4, n_max=40, test_per_class=20)


def small(name="baseline_s1", **kw):
    return preset(name, data=SMALL, epochs1=kw.pop("epochs1", 3), epochs2=kw.pop("epochs2", 2), **kw)


def test_presets_resolve():
    assert preset("atl_all").resolved_stage1_head == "angular"
    assert preset("atl_all").resolved_stage2_head == "angular"
    assert preset("mislas_s2").resolved_stage2_head == "lws"
    assert preset("mislas_s2").resolved_eval_mode == "lws"
    assert ExperimentConfig().resolved_eval_mode == "linear"
    assert set(PRESETS) >= {"baseline_s1", "l2a_s1", "abs", "atl_aem", "atl_alas", "atl_all"}


def test_invalid_config_combinations():
    with pytest.raises(ValueError, match="stage1"):
        ExperimentConfig(stage1="sgd")
    with pytest.raises(ValueError, match="lws"):
        ExperimentConfig(stage2="alas", eval_mode="lws")


def test_zero_epochs_returns_initial_model():
    cfg = small(epochs1=0)
    train, _ = build_data(cfg)
    p = stage_one(cfg, train)
    q = init_model(train.dim, train.num_classes, cfg.hidden, seed=cfg.seed)
    assert params_digest(p) == params_digest(q)


@pytest.mark.parametrize("name", ["mislas_s2", "atl_alas"])
def test_stage_two_keeps_extractor(name):
    cfg = small(name)
    train, _ = build_data(cfg)
    s1 = stage_one(cfg, train)
    s2 = stage_two(s1, cfg, train)
    for k in s1.extractor_names():
        np.testing.assert_array_equal(s2.tensors[k], s1.tensors[k])
    assert not np.array_equal(s2.W, s1.W)
    assert (s2.lws_scale is not None) == (name == "mislas_s2")


def test_evaluate_is_read_only_and_consistent():
    cfg = small()
    train, test = build_data(cfg)
    p = stage_one(cfg, train)
    before = params_digest(p)
    rep = evaluate(p, test, "angular")
    assert params_digest(p) == before
    conf = np.array(rep.confusion)
    assert conf.sum() == len(test)
    assert rep.overall == pytest.approx(np.trace(conf) / conf.sum())
    assert set(rep.groups) == {"head", "mid", "tail"}


def test_abs_zero_strength_is_bit_identical():
    cfg = small("abs")
    train, test = build_data(cfg)
    p = stage_one(cfg, train)
    prof = abs_profile(p, cfg, train, s=0.0)
    plain = evaluate(p, test, "angular")
    calibrated = evaluate(p, test, "angular", prof)
    assert plain.confusion == calibrated.confusion
    assert np.array_equal(np.argmax(predict_scores(p, test.features, "angular", prof), axis=1),
                          np.argmax(predict_scores(p, test.features, "angular"), axis=1))


def test_run_experiment_reports_every_stage():
    bundle = run_experiment(small("atl_all"))
    assert {"stage1/linear", "stage1/angular", "stage2/linear", "stage2/angular"} <= set(bundle["reports"])
    assert bundle["final"] == "stage2/angular"
    assert "stage2" in bundle["diagnostics"]
    assert bundle["config"]["resolved"]["stage2_head"] == "angular"
    mis = run_experiment(small("mislas_s2"))
    assert mis["final"] == "stage2/lws"
    ab = run_experiment(small("abs"))
    assert ab["final"] == "stage1/angular+abs" and ab["reports"][ab["final"]]["calibrated"]


def test_run_experiment_is_deterministic():
    a = run_experiment(small("atl_alas"))
    b = run_experiment(small("atl_alas"))
    assert a == b


def test_divergence_is_reported():
    with pytest.raises(TrainingDiverged, match="stage one"):
        run_experiment(small(lr=1e30, epochs1=5))


def test_sweep_single_point_matches_run():
    cfg = small("abs", abs_s=0.1)
    rows = sweep(cfg, "s", [0.1], [0])
    assert len(rows) == 1
    bundle = run_experiment(cfg)
    assert rows[0]["overall_mean"] == bundle["reports"][bundle["final"]]["overall"]
    assert rows[0]["overall_sd"] == 0.0
    with pytest.raises(ValueError):
        sweep(cfg, "lr", [0.1], [0])


def test_tau_sweep_rows():
    rows = sweep(small("atl_alas"), "tau", [0.0, 0.5], [0, 1])
    assert [r["value"] for r in rows] == [0.0, 0.5]
    assert all(r["n_seeds"] == 2 for r in rows)


def test_prune_fraction_zero_matches_unpruned():
    rows, per_seed = prune_curve(small(), ["random", "class_random", "el2n", "avh"], [0.0, 0.5], [0],
                                 k=2, epochs=1)
    base = per_seed[0]["unpruned"]
    for metric in ("random", "class_random", "el2n", "avh"):
        rep = per_seed[0]["results"][(metric, 0.0)]
        assert rep.confusion == base.confusion
    assert len(rows) == 8


def test_map_ordered_keeps_input_order():
    assert map_ordered(lambda x: x * x, [3, 1, 2], threads=3) == [9, 1, 4]


def test_abs_flattens_mean_probabilities():
    # default benchmark, seeded: a mild re-weighting flattens the test-set profile
    cfg = preset("baseline_s1", seed=0)
    train, test = build_data(cfg)
    p = stage_one(cfg, train)
    prof = with_strength(abs_profile(p, cfg, train), 0.04)
    before = D.flatness_ratio(D.mean_prob_profile(p, test))
    after = D.flatness_ratio(D.mean_prob_profile(p, test, "angular", prof))
    assert after < before
