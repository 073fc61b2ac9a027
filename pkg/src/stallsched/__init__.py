"""Discrete-event simulation of non-preemptive cluster scheduling.

Compares a stall-based configuration scheduler against MaxWeight with local
refresh times and randomized token sampling, on synthetic workloads and
cluster task traces.
"""

from .capacity import intensity_scale, region_membership, workload_for_intensity
from .config import ExperimentSpec, ValidationError
from .engine import RunResult, SimulationSetup, run
from .model import Exponential, HyperExponential, JobType, ServerSpec, weight
from .policies import G16, M14, Alg1, ConstantBeta, InvariantViolation, SigmoidBeta, StallGate
from .solvers import SolverChoice

__all__ = [
    "Alg1", "ConstantBeta", "ExperimentSpec", "Exponential", "G16", "HyperExponential", "InvariantViolation",
    "JobType", "M14", "RunResult", "ServerSpec", "SigmoidBeta", "SimulationSetup", "SolverChoice", "StallGate",
    "ValidationError", "intensity_scale", "region_membership", "run", "weight", "workload_for_intensity",
]

__version__ = "0.1.0"
