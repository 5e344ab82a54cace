"""Command-line entry point.

    angular-lt gen-data --config run.ini --out data/
    angular-lt run      --config run.ini --out out/ --seed 3
    angular-lt sweep    --config sweep.ini --out sweep/ --threads 4
    angular-lt prune    --config prune.ini --out prune/ --prune-direction low
    angular-lt diagnose --config run.ini --out diag/

Every command writes ``results.json`` (with the effective config echoed) and
``metrics.csv`` into the output directory. Reruns with the same config give
byte-identical files.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from . import framework
from .config import ConfigError, load_sections, parse_sections
from .dataset import load_csv, longtail_counts, save_csv, synth_gaussian_balanced, synth_gaussian_lt

log = logging.getLogger("angular_lt")

COMMANDS = ("gen-data", "run", "sweep", "prune", "diagnose")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(obj), fh, indent=2, allow_nan=False)
        fh.write("\n")


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(v) else repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def build_parser():
    p = argparse.ArgumentParser(prog="angular-lt", description="Angle-based long-tailed learning experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="sectioned key=value (or JSON) config file")
    p.add_argument("--seed", type=int, help="root seed; overrides run.seed and run.seeds")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--threads", type=int, help="worker threads for seed fan-out")
    p.add_argument("--eval-mode", choices=framework.EVAL_MODES)
    p.add_argument("--prune-direction", choices=("low", "high"))
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args):
    """Merge the config file with command-line overrides and validate."""
    sections = {k: dict(v) for k, v in load_sections(args.config).items()}
    run = sections.setdefault("run", {})
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("run.seed: must be non-negative")
        run["seed"] = args.seed
        run["seeds"] = []
    if args.threads is not None:
        run["threads"] = args.threads
    if args.eval_mode is not None:
        sections.setdefault("train", {})["eval_mode"] = args.eval_mode
    if args.prune_direction is not None:
        sections.setdefault("prune", {})["direction"] = args.prune_direction
    cfg = parse_sections(sections)
    if cfg.run.threads < 1:
        raise ConfigError("run.threads: must be >= 1")
    if any(s < 0 for s in cfg.seeds):
        raise ConfigError("run.seed: seeds must be non-negative")
    return cfg


def _external_data(cfg, command):
    d = cfg.data
    if not (d.train_path or d.test_path):
        return None
    if command not in ("run", "diagnose"):
        raise ConfigError(f"data.train_path: external data is not supported by '{command}'")
    if not (d.train_path and d.test_path):
        raise ConfigError("data.test_path: both train_path and test_path are required")
    m = cfg.experiment.data.num_classes
    return load_csv(d.train_path, m, "train"), load_csv(d.test_path, m, "test")


def cmd_gen_data(cfg, out):
    spec = replace(cfg.experiment.data, seed=cfg.run.seed)
    train, test = synth_gaussian_lt(spec), synth_gaussian_balanced(spec)
    save_csv(train, os.path.join(out, "train.csv"))
    save_csv(test, os.path.join(out, "test.csv"))
    manifest = {"spec": asdict(spec), "seed": spec.seed,
                "train_counts": train.class_counts, "test_counts": test.class_counts,
                "expected_counts": longtail_counts(spec.lt),
                "files": {"train": "train.csv", "test": "test.csv"}}
    write_json(os.path.join(out, "manifest.json"), manifest)
    write_json(os.path.join(out, "results.json"), {"command": "gen-data", "config": cfg.to_dict(),
                                                    "manifest": manifest})
    write_csv(os.path.join(out, "metrics.csv"), ["class_index", "train_count", "test_count"],
              [(c, int(a), int(b)) for c, (a, b) in enumerate(zip(train.class_counts, test.class_counts))])


def _report_rows(seed, bundle):
    for key, rep in bundle["reports"].items():
        g = rep["groups"]
        yield (seed, key, rep["mode"], int(rep["calibrated"]), rep["overall"],
               g.get("head"), g.get("mid"), g.get("tail"))


def _write_profiles(out, seed, diags):
    pdir = os.path.join(out, "profiles")
    os.makedirs(pdir, exist_ok=True)
    for stage, d in diags.items():
        for name, series in d.items():
            if isinstance(series, dict) and "values" in series:
                write_csv(os.path.join(pdir, f"seed{seed}_{stage}_{name}.csv"), ["class_index", "value"],
                          list(enumerate(series["values"])))


def _experiments(cfg, command):
    data = _external_data(cfg, command)
    seeds = cfg.seeds

    def one(seed):
        return framework.run_experiment(replace(cfg.experiment, seed=seed), data)

    return seeds, framework.map_ordered(one, seeds, cfg.run.threads)


def cmd_run(cfg, out):
    seeds, bundles = _experiments(cfg, "run")
    rows = [r for s, b in zip(seeds, bundles) for r in _report_rows(s, b)]
    write_csv(os.path.join(out, "metrics.csv"),
              ["seed", "report", "mode", "calibrated", "overall", "head", "mid", "tail"], rows)
    for s, b in zip(seeds, bundles):
        _write_profiles(out, s, b["diagnostics"])
    finals = [framework.EvalReport(**b["reports"][b["final"]]) for b in bundles]
    write_json(os.path.join(out, "results.json"),
               {"command": "run", "config": cfg.to_dict(), "seeds": list(seeds),
                "summary": framework.summarize_reports(finals),
                "runs": [{"seed": s, **b} for s, b in zip(seeds, bundles)]})


def cmd_diagnose(cfg, out):
    seeds, bundles = _experiments(cfg, "diagnose")
    rows = []
    for s, b in zip(seeds, bundles):
        _write_profiles(out, s, b["diagnostics"])
        for stage, d in b["diagnostics"].items():
            flat = d.get("flatness_ratio", {})
            ha = d.get("hardness_accuracy", {})
            rows.append((s, stage, d["weight_norm_spearman_vs_index"], d["smoothness"]["linear"],
                         d["smoothness"]["angular"], flat.get("before"), flat.get("after"),
                         ha.get("spearman"), ha.get("bound_violations")))
    write_csv(os.path.join(out, "metrics.csv"),
              ["seed", "stage", "weight_norm_spearman", "smoothness_linear", "smoothness_angular",
               "flatness_before", "flatness_after", "avh_accuracy_spearman", "avh_bound_violations"], rows)
    write_json(os.path.join(out, "results.json"),
               {"command": "diagnose", "config": cfg.to_dict(), "seeds": list(seeds),
                "diagnostics": [{"seed": s, "final": b["final"], **b["diagnostics"]}
                                for s, b in zip(seeds, bundles)]})


def cmd_sweep(cfg, out):
    _external_data(cfg, "sweep")
    sw = cfg.sweep
    rows = framework.sweep(cfg.experiment, sw.param, sw.grid, cfg.seeds, cfg.run.threads)
    cols = ["param", "value", "n_seeds", "overall_mean", "overall_sd", "head_mean", "head_sd",
            "mid_mean", "mid_sd", "tail_mean", "tail_sd"]
    write_csv(os.path.join(out, "metrics.csv"), cols, [[r[c] for c in cols] for r in rows])
    write_json(os.path.join(out, "results.json"),
               {"command": "sweep", "config": cfg.to_dict(), "seeds": list(cfg.seeds), "rows": rows})


def cmd_prune(cfg, out):
    _external_data(cfg, "prune")
    pr = cfg.prune
    direction = "drop_lowest" if pr.direction == "low" else "drop_highest"
    rows, per_seed = framework.prune_curve(cfg.experiment, pr.metrics, pr.fractions, cfg.seeds,
                                           pr.k, pr.epochs, direction, cfg.run.threads)
    write_csv(os.path.join(out, "metrics.csv"), ["metric", "fraction", "mean_accuracy", "sd", "n_seeds"],
              [(r["metric"], r["fraction"], r["mean_accuracy"], r["sd"], r["n_seeds"]) for r in rows])
    header = ["sample_index", "label", "score", "metric", "k", "e"]
    for i, (seed, res) in enumerate(zip(cfg.seeds, per_seed)):
        table_rows = [row for t in res["tables"].values() for row in t.to_rows()]
        if i == 0:
            write_csv(os.path.join(out, "scores.csv"), header, table_rows)
        if len(cfg.seeds) > 1:
            sdir = os.path.join(out, "scores")
            os.makedirs(sdir, exist_ok=True)
            write_csv(os.path.join(sdir, f"seed{seed}.csv"), header, table_rows)
    unpruned = [{"seed": s, "overall": r["unpruned"].overall} for s, r in zip(cfg.seeds, per_seed)]
    avh_ok = []
    for s, r in zip(cfg.seeds, per_seed):
        if "avh" in r["tables"]:
            scores = r["tables"]["avh"].scores
            bound = 1.0 / cfg.experiment.data.num_classes
            avh_ok.append({"seed": s, "correct_by_all": int(r["avh_correct"].sum()),
                           "violations": int(np.sum(scores[r["avh_correct"]] > bound))})
    write_json(os.path.join(out, "results.json"),
               {"command": "prune", "config": cfg.to_dict(), "seeds": list(cfg.seeds),
                "direction": direction, "rows": rows, "unpruned": unpruned, "avh_bound": avh_ok})


HANDLERS = {"gen-data": cmd_gen_data, "run": cmd_run, "sweep": cmd_sweep,
            "prune": cmd_prune, "diagnose": cmd_diagnose}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"angular-lt: invalid config: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"angular-lt: cannot read config: {exc}", file=sys.stderr)
        return 3
    try:
        os.makedirs(args.out, exist_ok=True)
        HANDLERS[args.command](cfg, args.out)
    except ConfigError as exc:
        print(f"angular-lt: invalid config: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"angular-lt: I/O error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, framework.TrainingDiverged) as exc:
        print(f"angular-lt: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
