"""Numerical symplectic geometry of smooth convex bodies in R^{2n}.

Characteristic flows and their actions, EHZ capacity and volume identities,
polar and Minkowski constructions, John ellipses of planar sections, and the
outer billiard map.
"""
__version__ = "0.1.0"

from .core import (AffineSymplecticMap, apply_J, curve_action, j_matrix, liouville, omega,
                   random_affine_symplectic)
from .body import (BodyError, ConvexBody, Ellipsoid, PerturbedBall, SmoothedPolydisc, Transformed,
                   boundary_point, evaluate_H, frame_at, minkowski_difference, polar_body,
                   strong_convexity_check, support, support_values, volume)
from .characteristics import (Characteristic, CharacteristicSurvey, EllipseFit, PlaneFit, action_of,
                              detect_closure, fit_ellipse, fit_plane, flow, survey)
from .capacity import (CapacityReport, WilliamsonSpectrum, brunn_minkowski_gap, ehz_capacity,
                       is_symplectic_ball, santalo_product, viterbo_report, williamson)
from .john import JohnEllipse, PlanarSection, john_ellipse, make_plane, section, section_is_john
from .billiard import (GoodPointReport, OuterBilliardTrajectory, PeriodScan, good_points, period_scan,
                       step, symplecticity_defect, tangency, trajectory, uniform_distribution_check)

__all__ = [name for name in dir() if not name.startswith("_")]
