"""Config-driven sweeps, analysis commands, plotting and the command line."""

from .config import ExperimentConfig, ConfigError, PROFILES, PRESETS, load_config, preset
from .sweep import SweepGrid, run_sweep, run_trial

__all__ = ["ExperimentConfig", "ConfigError", "PROFILES", "PRESETS", "load_config", "preset",
           "SweepGrid", "run_sweep", "run_trial"]
