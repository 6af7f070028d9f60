"""Numerical laboratory for quantitative recurrence in expanding maps."""

__version__ = "0.1.0"

from .core import (Hyperrectangle, InvalidArgumentError, RadiusSchedule, ThinnedSchedule,
                   contains, partial_normalizer, rect_from_center, schedule_values, thin)
from .recurrence import HitSeries, hat_hit_series, hit_series, scale_to_measure
from .systems import SYSTEMS, get_system, orbit, sample_mu

__all__ = [
    "HitSeries", "Hyperrectangle", "InvalidArgumentError", "RadiusSchedule", "SYSTEMS",
    "ThinnedSchedule", "__version__", "contains", "get_system", "hat_hit_series", "hit_series",
    "orbit", "partial_normalizer", "rect_from_center", "sample_mu", "scale_to_measure",
    "schedule_values", "thin",
]
