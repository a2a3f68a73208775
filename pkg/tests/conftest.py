from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pytest

from hadamard_flows.spaces import SPD, Euclidean, Hyperbolic, Space, Spider


@dataclass(frozen=True)
class SphereStub(Space):
    """The unit 2-sphere: positively curved, so it must fail the CAT(0) checks."""

    kind = "sphere"

    def point(self, data):
        a = np.asarray(data, dtype=float)
        return a / np.linalg.norm(a)

    def distance(self, p, q):
        return math.acos(max(-1.0, min(1.0, float(p @ q))))

    def geodesic_point(self, p, q, t):
        d = self.distance(p, q)
        if d < 1e-15:
            return p
        return (math.sin((1 - t) * d) * p + math.sin(t * d) * q) / math.sin(d)

    def random_point(self, rng, scale=1.0):
        return self.point(rng.standard_normal(3))

    def origin(self):
        return np.array([0.0, 0.0, 1.0])

    def _project_segment(self, p, q, x):
        ts = np.linspace(0.0, 1.0, 201)
        return min((self.geodesic_point(p, q, t) for t in ts), key=lambda z: self.distance(x, z))

    def format_point(self, p):
        return ",".join(repr(float(c)) for c in p)


ALL_SPACES = [Euclidean(1), Euclidean(2), Euclidean(3), Spider(3), SPD(2), SPD(3), Hyperbolic()]


def space_id(space):
    return getattr(space, "kind", "?") + str(getattr(space, "n", getattr(space, "k", "")))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def sphere():
    return SphereStub()


def P(*coords):
    """Euclidean point from coordinates."""
    return np.array(coords, dtype=float)
