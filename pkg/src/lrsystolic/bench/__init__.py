"""Experiment harness and command line."""

from .config import ExperimentConfig
from .rng import trial_rng

__all__ = ["ExperimentConfig", "trial_rng"]
