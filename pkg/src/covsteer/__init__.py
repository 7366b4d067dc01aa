"""Covariance steering for linear systems with constant random parameters."""
from .moments import MomentLattice, MomentTable, propagate
from .montecarlo import SimulationBatch, enumerate_exact, simulate
from .problem import ChanceConstraint, Policy, ProblemError, SteeringProblem
from .scenarios import build_bicycle, build_spacecraft, load_config, spacecraft_regime
from .scp import ScpSettings, run, verify_feasibility
from .solver import Cones, SolverSettings
from .system import ParameterDistribution, ParameterSet, UncertainSystem

__version__ = "0.1.0"

__all__ = [
    "ChanceConstraint", "Cones", "MomentLattice", "MomentTable", "ParameterDistribution", "ParameterSet",
    "Policy", "ProblemError", "ScpSettings", "SimulationBatch", "SolverSettings", "SteeringProblem",
    "UncertainSystem", "build_bicycle", "build_spacecraft", "enumerate_exact", "load_config", "propagate",
    "run", "simulate", "spacecraft_regime", "verify_feasibility",
]
