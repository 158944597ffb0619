"""Planar Filippov systems: sliding analysis, hybrid integration and zombie saddles."""
from .expr import parse, evaluate, differentiate
from .system import PiecewiseSystem, SmoothingFamily, build_system, smoothed_field, one_sided_eval
from .filippov import analyze_boundary, classify_point, classify_zombie
from .integrate import BranchPolicy, IntegratorConfig, integrate, integrate_smoothed

__all__ = [
    "parse", "evaluate", "differentiate", "PiecewiseSystem", "SmoothingFamily",
    "build_system", "smoothed_field", "one_sided_eval", "analyze_boundary",
    "classify_point", "classify_zombie", "BranchPolicy", "IntegratorConfig",
    "integrate", "integrate_smoothed",
]
