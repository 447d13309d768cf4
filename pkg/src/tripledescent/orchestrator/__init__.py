"""Sweeps, peak detection, data ingestion, recipes and the CLI."""

from .config import ConfigError, SweepGrid, load_config, log_grid
from .mnist import ingest_mnist
from .peaks import Peak, PeakReport, classify, detect_peaks
from .recipes import RECIPES, recipe, run_recipe
from .sweep import SweepResult, run_sweep

__all__ = [
    "ConfigError", "SweepGrid", "load_config", "log_grid", "ingest_mnist", "Peak", "PeakReport",
    "classify", "detect_peaks", "RECIPES", "recipe", "run_recipe", "SweepResult", "run_sweep",
]
