"""Jointly sparse (MMV) recovery: GROUP LASSO coordinate-descent solvers, an
unrolled auto-encoder that learns the measurement matrix, and an experiment
harness."""

from .signal_model import ComplexMatrix, NoiseModel, RngStream, SparsityConfig
from .solvers import GroupLassoProblem, StepSchedule, bcd_mmv, kkt_threshold, pcd_mmv

__all__ = [
    "ComplexMatrix",
    "NoiseModel",
    "RngStream",
    "SparsityConfig",
    "GroupLassoProblem",
    "StepSchedule",
    "bcd_mmv",
    "pcd_mmv",
    "kkt_threshold",
]

__version__ = "0.1.0"
