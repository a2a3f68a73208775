"""Convex optimization and gradient flows on Hadamard spaces."""

from .spaces import (
    SPD, ClosedBall, Euclidean, GeodesicSegment, Hyperbolic, Spider, SpiderPoint,
    SubSpider, WholeSpace, check_cat0, distance, geodesic_point, make_space, project,
)
from .functionals import (
    Busemann, ConvergenceError, Displacement, DistancePower, DomainInfo, Functional,
    Indicator, brute_force_prox, catalogue,
)

__version__ = "0.1.0"
