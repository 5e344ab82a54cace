"""Angle-based prediction, smoothing and calibration for long-tailed classification."""

from .angular import angular_logits, angular_probs, angles, cosine
from .calibrate import CalibrationProfile, abs_apply, build_profile
from .dataset import Dataset, LTSpec, SynthSpec, longtail_counts, synth_gaussian_lt
from .framework import PRESETS, ExperimentConfig, evaluate, preset, run_experiment
from .model import ModelParams, forward, init_model

__version__ = "0.1.0"

__all__ = [
    "CalibrationProfile", "Dataset", "ExperimentConfig", "LTSpec", "ModelParams", "PRESETS",
    "SynthSpec", "abs_apply", "angles", "angular_logits", "angular_probs", "build_profile",
    "cosine", "evaluate", "forward", "init_model", "longtail_counts", "preset", "run_experiment",
    "synth_gaussian_lt",
]
