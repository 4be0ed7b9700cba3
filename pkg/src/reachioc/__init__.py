"""Inverse optimal control for planar two-link reaching movements.

The package recovers the weights of a composite movement cost from observed
joint trajectories.  It contains the arm model, a direct Euler transcription
of the reaching optimal control problem, the five elementary cost terms, the
first-order optimality system of the inner problem, Newton-type and simplex
solvers, the two estimation strategies (bilevel and simultaneous), and the
noise-robustness experiment drivers with a small CLI.
"""

__version__ = "0.1.0"

from .arm import ArmParams, JointState, UnreachableTarget
from .transcription import DimensionMismatch, EnvironmentParams, Horizon, TrajectoryVariables
from .cost_basis import BehavioralParams
from .ioc import DegenerateGauge, InnerSolveFailure, IocDataset, IocExample, IocResult

__all__ = [
    "ArmParams",
    "BehavioralParams",
    "DegenerateGauge",
    "DimensionMismatch",
    "EnvironmentParams",
    "Horizon",
    "InnerSolveFailure",
    "IocDataset",
    "IocExample",
    "IocResult",
    "JointState",
    "TrajectoryVariables",
    "UnreachableTarget",
    "__version__",
]
