"""Antibody population dynamics for fault detection in simulated robot swarms."""

from .dynamics import AAPDEngine, DynamicsCoeffs, DEFAULT_COEFFS, MOTOR_COEFFS, SENSOR_COEFFS, build_next_order_Y
from .matching import HardwareClass, MatchParams, Paratope, match_matrix, match_specificity
from .repertoire import Category, LabeledParatope, LabeledRepertoire, Repertoire
from .sim import ExperimentLog, ScenarioConfig, replay, run_experiment

__version__ = "0.1.0"

__all__ = [
    "AAPDEngine", "DynamicsCoeffs", "DEFAULT_COEFFS", "MOTOR_COEFFS", "SENSOR_COEFFS", "build_next_order_Y",
    "HardwareClass", "MatchParams", "Paratope", "match_matrix", "match_specificity",
    "Category", "LabeledParatope", "LabeledRepertoire", "Repertoire",
    "ExperimentLog", "ScenarioConfig", "replay", "run_experiment",
]
