"""Heat content asymptotics on discretized domains.

The subpackages follow the pipeline: :mod:`mmspace` (domains and grids),
:mod:`distfield` (signed distance), :mod:`heatflow` (Dirichlet and
whole-space flows), :mod:`coarea` (level sets), :mod:`rays` (ray
disintegration and boundary regularity), :mod:`halfline` (Duhamel formula)
and :mod:`asympt` (coefficient fits).
"""

from .asympt import AsymptoticFit, fit_expansion, perimeter_from_heat, remainder_exponent, second_order_check
from .distfield import SignedDistanceField, eikonal_defect, exact_field, signed_distance_exact, signed_distance_field
from .errors import MMHeatError
from .heatflow import HeatTrace, dirichlet_heat_solve, global_heat_solve, schedule_samples
from .mmspace import (Difference, Disk, Interval, Polygon, Rect, Slit, WeightedGrid, continuum_measure,
                      continuum_perimeter, discretize)

__version__ = "0.1.0"

__all__ = [
    "AsymptoticFit", "Difference", "Disk", "HeatTrace", "Interval", "MMHeatError", "Polygon", "Rect",
    "SignedDistanceField", "Slit", "WeightedGrid", "continuum_measure", "continuum_perimeter", "dirichlet_heat_solve",
    "discretize", "eikonal_defect", "exact_field", "fit_expansion", "global_heat_solve", "perimeter_from_heat",
    "remainder_exponent", "schedule_samples", "second_order_check", "signed_distance_exact", "signed_distance_field",
]
