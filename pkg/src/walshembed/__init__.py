"""Skorokhod embeddings for Walsh Brownian motion."""

from .measure import (
    MeasureError,
    RadialMeasure,
    Ray,
    SpinningMeasure,
    TargetMeasure,
    centered_spinning,
    first_moment,
    is_admissible,
    is_centered,
    polar_decompose,
    second_moment,
)
from .rules import BarrierRule, FixedTime, HitLevelSet, HitSurface, RuleError
from .sim import SimParams, StoppedBatch, StoppedSample, WalshPath, run_batch, run_until, simulate_path
from .dubins import analytic_law, dubins_rule, refine
from .vallois import build_barrier, potential, vallois_rule
from .dual import dual_certificate, get_cost, pathwise_gap

__all__ = [
    "MeasureError", "RadialMeasure", "Ray", "SpinningMeasure", "TargetMeasure",
    "centered_spinning", "first_moment", "is_admissible", "is_centered", "polar_decompose",
    "second_moment", "BarrierRule", "FixedTime", "HitLevelSet", "HitSurface", "RuleError",
    "SimParams", "StoppedBatch", "StoppedSample", "WalshPath", "run_batch", "run_until",
    "simulate_path", "analytic_law", "dubins_rule", "refine", "build_barrier", "potential",
    "vallois_rule", "dual_certificate", "get_cost", "pathwise_gap",
]
