"""Experiment orchestration, result files and the command-line interface."""

from .experiments import KINDS, ExperimentSpec, run_experiment
from .results import ExperimentResult, Record, emit_results

__all__ = ["KINDS", "ExperimentSpec", "ExperimentResult", "Record", "emit_results", "run_experiment"]
