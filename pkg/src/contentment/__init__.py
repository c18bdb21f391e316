"""Joint wealth-contentment density dynamics of a society under a wealth tax."""

from .econ import CalibrationState, ModelParams
from .grid import Grid, MomentSet, PdfField, build_initial_condition, compute_moments
from .marriage import MarriageKernelConfig
from .runner import ScenarioConfig, compare_runs, run_scenario
from .stepper import Simulation, StepControl

__all__ = [
    "CalibrationState", "Grid", "MarriageKernelConfig", "ModelParams", "MomentSet", "PdfField",
    "ScenarioConfig", "Simulation", "StepControl", "build_initial_condition", "compare_runs",
    "compute_moments", "run_scenario",
]
__version__ = "0.1.0"
