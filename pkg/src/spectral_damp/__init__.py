"""Curvature-aware optimization with damping as linear shrinkage.

Subpackages by concern: linalg (dense symmetric kernels), data (IDX
datasets and synthetic problems), models (losses with exact HVPs),
lanczos (matrix-free spectra), rmt (spiked ensembles and the semicircle
law), shrinkage (damping as shrinkage and its online estimator), optim
(optimizer steps, schedules, stability bounds), harness (grid runs and
CSV emission), report (figures).
"""

from . import data, harness, lanczos, linalg, models, optim, report, rmt, shrinkage
from .harness import ExperimentSpec, RunMetrics, run_experiment
from .lanczos import SpectralDecomposition
from .optim import OptimConfig, OptimizerState, ScheduleSpec
from .rmt import SemicircleLaw, SpikedEnsembleSpec
from .shrinkage import DampingState, ShrinkageParams

__version__ = "0.1.0"

__all__ = [
    "ExperimentSpec",
    "RunMetrics",
    "run_experiment",
    "SpectralDecomposition",
    "OptimConfig",
    "OptimizerState",
    "ScheduleSpec",
    "SemicircleLaw",
    "SpikedEnsembleSpec",
    "DampingState",
    "ShrinkageParams",
    "data",
    "harness",
    "lanczos",
    "linalg",
    "models",
    "optim",
    "report",
    "rmt",
    "shrinkage",
    "__version__",
]
