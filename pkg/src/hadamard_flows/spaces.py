"""Model Hadamard spaces.

Four complete CAT(0) spaces are provided, each as a small immutable object
that knows its distance, geodesics and metric projections:

* :class:`Euclidean` -- ``R^n`` with points as float arrays of shape ``(n,)``.
* :class:`Spider` -- ``k`` half-lines glued at the origin (a metric tree),
  points are :class:`SpiderPoint`.
* :class:`SPD` -- symmetric positive-definite ``n x n`` matrices with the
  affine-invariant metric, points are float arrays of shape ``(n, n)``.
* :class:`Hyperbolic` -- the upper half-plane, points are arrays ``(x, y)``
  with ``y > 0``.

Points are plain values and every operation is a pure function of its
arguments, so spaces can be shared freely between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Union

import numpy as np
from scipy.optimize import brentq

from . import _linalg

__all__ = [
    "SpiderPoint", "ClosedBall", "GeodesicSegment", "SubSpider", "WholeSpace",
    "Space", "Euclidean", "Spider", "SPD", "Hyperbolic",
    "distance", "geodesic_point", "project", "check_cat0", "make_space",
]

# Spider radii below this are identified with the origin.
ORIGIN_EPS = 1e-15
# Default membership tolerance for convex sets.
MEMBERSHIP_TOL = 1e-9


@dataclass(frozen=True)
class SpiderPoint:
    """A point on a spider: ray index plus distance from the origin.

    All radius-zero points are the origin, stored canonically as
    ``SpiderPoint(0, 0.0)``.
    """

    ray: int
    radius: float

    def __post_init__(self):
        r = float(self.radius)
        if not math.isfinite(r) or r < 0:
            raise ValueError(f"spider radius must be finite and >= 0, got {self.radius!r}")
        if r < ORIGIN_EPS:
            object.__setattr__(self, "ray", 0)
            r = 0.0
        elif int(self.ray) != self.ray or self.ray < 0:
            raise ValueError(f"spider ray index must be a non-negative integer, got {self.ray!r}")
        object.__setattr__(self, "ray", int(self.ray))
        object.__setattr__(self, "radius", r)

    @property
    def is_origin(self) -> bool:
        return self.radius == 0.0


Point = Union[np.ndarray, SpiderPoint]


# -- convex sets ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ClosedBall:
    center: Any
    radius: float

    def __post_init__(self):
        if not self.radius >= 0:
            raise ValueError("ball radius must be >= 0")


@dataclass(frozen=True, eq=False)
class GeodesicSegment:
    p: Any
    q: Any


@dataclass(frozen=True)
class SubSpider:
    """The union of a subset of spider rays (always contains the origin)."""

    rays: frozenset

    def __post_init__(self):
        object.__setattr__(self, "rays", frozenset(int(r) for r in self.rays))


@dataclass(frozen=True)
class WholeSpace:
    pass


ConvexSet = Union[ClosedBall, GeodesicSegment, SubSpider, WholeSpace]


def _check_t(t):
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"geodesic parameter must lie in [0, 1], got {t!r}")


# -- spaces -----------------------------------------------------------------

class Space:
    """Common interface of the model spaces.

    Subclasses implement :meth:`point`, :meth:`distance`,
    :meth:`geodesic_point`, :meth:`random_point` and the segment projection.
    Ball projections and set sampling are generic.
    """

    kind: str = "abstract"

    def point(self, data) -> Point:
        raise NotImplementedError

    def distance(self, p, q) -> float:
        raise NotImplementedError

    def geodesic_point(self, p, q, t: float):
        raise NotImplementedError

    def random_point(self, rng: np.random.Generator, scale: float = 1.0):
        raise NotImplementedError

    def origin(self):
        raise NotImplementedError

    def _project_segment(self, p, q, x):
        raise NotImplementedError

    def check_cat0(self, x, p, q, t: float) -> float:
        """Residual of the CAT(0) comparison inequality (<= 0 if it holds)."""
        _check_t(t)
        z = self.geodesic_point(p, q, t)
        dxp = self.distance(x, p)
        dxq = self.distance(x, q)
        dpq = self.distance(p, q)
        rhs = (1 - t) * dxp ** 2 + t * dxq ** 2 - t * (1 - t) * dpq ** 2
        return self.distance(x, z) ** 2 - rhs

    def project(self, cset: ConvexSet, x):
        """Nearest point of ``cset`` to ``x``."""
        if isinstance(cset, WholeSpace):
            return x
        if isinstance(cset, ClosedBall):
            d = self.distance(cset.center, x)
            if d <= cset.radius:
                return x
            return self.geodesic_point(cset.center, x, cset.radius / d)
        if isinstance(cset, GeodesicSegment):
            return self._project_segment(cset.p, cset.q, x)
        raise TypeError(f"{type(cset).__name__} is not supported in {self.kind} space")

    def contains(self, cset: ConvexSet, x, tol: float = MEMBERSHIP_TOL) -> bool:
        if isinstance(cset, WholeSpace):
            return True
        if isinstance(cset, ClosedBall):
            return self.distance(cset.center, x) <= cset.radius + tol
        return self.distance(x, self.project(cset, x)) <= tol

    def sample_set(self, cset: ConvexSet, rng: np.random.Generator, scale: float = 1.0):
        """Random point of ``cset`` (not uniform, just well spread)."""
        if isinstance(cset, WholeSpace):
            return self.random_point(rng, scale)
        if isinstance(cset, ClosedBall):
            y = self.random_point(rng, scale)
            d = self.distance(cset.center, y)
            if d == 0:
                return y
            s = min(1.0, cset.radius * rng.uniform() / d)
            return self.geodesic_point(cset.center, y, s)
        if isinstance(cset, GeodesicSegment):
            return self.geodesic_point(cset.p, cset.q, rng.uniform())
        raise TypeError(f"{type(cset).__name__} is not supported in {self.kind} space")

    def format_point(self, p) -> str:
        raise NotImplementedError


class _Riemannian(Space):
    """Spaces where geodesics come from log/exp maps."""

    def log(self, p, q):
        raise NotImplementedError

    def exp(self, p, v):
        raise NotImplementedError

    def inner(self, p, u, v) -> float:
        raise NotImplementedError

    def norm(self, p, v) -> float:
        return math.sqrt(max(self.inner(p, v, v), 0.0))

    def _segment_slope(self, p, q, x, t):
        g = self.geodesic_point(p, q, t)
        return -self.inner(g, self.log(g, x), self.log(g, q) - self.log(g, p))

    def _project_segment(self, p, q, x):
        # d(x, gamma(t)) is convex in t, so the slope has at most one sign change
        if self.distance(p, q) == 0.0:
            return p
        if self._segment_slope(p, q, x, 0.0) >= 0.0:
            return p
        if self._segment_slope(p, q, x, 1.0) <= 0.0:
            return q
        t = brentq(lambda s: self._segment_slope(p, q, x, s), 0.0, 1.0, xtol=1e-15, maxiter=200)
        return self.geodesic_point(p, q, t)


@dataclass(frozen=True)
class Euclidean(_Riemannian):
    n: int

    kind = "euclidean"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("dimension must be positive")

    def point(self, data):
        a = np.array(data, dtype=float).reshape(-1)
        if a.shape != (self.n,):
            raise ValueError(f"expected {self.n} coordinates, got {a.size}")
        if not np.all(np.isfinite(a)):
            raise ValueError("coordinates must be finite")
        return a

    def _same(self, p, q):
        if p.shape != (self.n,) or q.shape != (self.n,):
            raise ValueError(f"dimension mismatch: {p.shape} vs {q.shape} in R^{self.n}")

    # plain-float arithmetic is much faster than numpy for tiny vectors
    def distance(self, p, q):
        self._same(p, q)
        return math.dist(p.tolist(), q.tolist())

    def geodesic_point(self, p, q, t):
        _check_t(t)
        self._same(p, q)
        if self.n > 16:
            return p + t * (q - p)
        return np.array([a + t * (b - a) for a, b in zip(p.tolist(), q.tolist())])

    def log(self, p, q):
        return q - p

    def exp(self, p, v):
        return p + v

    def inner(self, p, u, v):
        return float(u @ v)

    def origin(self):
        return np.zeros(self.n)

    def _project_segment(self, p, q, x):
        dq = q - p
        L2 = float(dq @ dq)
        if L2 == 0.0:
            return p
        t = min(1.0, max(0.0, float((x - p) @ dq) / L2))
        return p + t * dq

    def random_point(self, rng, scale=1.0):
        return scale * rng.standard_normal(self.n)

    def format_point(self, p):
        return ",".join(repr(float(c)) for c in p)


@dataclass(frozen=True)
class Spider(Space):
    k: int

    kind = "spider"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("a spider needs at least one ray")

    def point(self, data):
        if isinstance(data, SpiderPoint):
            p = data
        else:
            ray, radius = data
            p = SpiderPoint(int(ray), float(radius))
        if p.ray >= self.k:
            raise ValueError(f"ray index {p.ray} out of range for a {self.k}-spider")
        return p

    def _check(self, p):
        if p.ray >= self.k:
            raise ValueError(f"ray index {p.ray} out of range for a {self.k}-spider")

    def distance(self, p, q):
        self._check(p)
        self._check(q)
        if p.ray == q.ray:
            return abs(p.radius - q.radius)
        return p.radius + q.radius

    def geodesic_point(self, p, q, t):
        _check_t(t)
        self._check(p)
        self._check(q)
        if p.ray == q.ray:
            return SpiderPoint(p.ray, (1 - t) * p.radius + t * q.radius)
        a = t * (p.radius + q.radius)
        if a <= p.radius:
            return SpiderPoint(p.ray, p.radius - a)
        return SpiderPoint(q.ray, a - p.radius)

    def origin(self):
        return SpiderPoint(0, 0.0)

    def _project_segment(self, p, q, x):
        # in a tree the foot on [p, q] sits at Gromov-product distance from p
        L = self.distance(p, q)
        if L == 0.0:
            return p
        s = 0.5 * (self.distance(p, x) + L - self.distance(q, x))
        return self.geodesic_point(p, q, min(1.0, max(0.0, s / L)))

    def project(self, cset, x):
        if isinstance(cset, SubSpider):
            self._check(x)
            return x if (x.is_origin or x.ray in cset.rays) else self.origin()
        return super().project(cset, x)

    def contains(self, cset, x, tol=MEMBERSHIP_TOL):
        if isinstance(cset, SubSpider):
            return x.is_origin or x.ray in cset.rays or x.radius <= tol
        return super().contains(cset, x, tol)

    def sample_set(self, cset, rng, scale=1.0):
        if isinstance(cset, SubSpider):
            rays = sorted(cset.rays)
            if not rays:
                return self.origin()
            return SpiderPoint(rays[rng.integers(len(rays))], 2 * scale * rng.uniform())
        return super().sample_set(cset, rng, scale)

    def random_point(self, rng, scale=1.0):
        ray = int(rng.integers(self.k))
        if rng.uniform() < 0.05:
            return self.origin()
        return SpiderPoint(ray, 2 * scale * rng.uniform())

    def format_point(self, p):
        return f"{p.ray},{p.radius!r}"


@dataclass(frozen=True)
class SPD(_Riemannian):
    n: int

    kind = "spd"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("dimension must be positive")

    def point(self, data):
        A = np.array(data, dtype=float)
        if A.size != self.n * self.n:
            raise ValueError(f"expected {self.n * self.n} entries, got {A.size}")
        A = A.reshape(self.n, self.n)
        if not np.all(np.isfinite(A)):
            raise ValueError("matrix entries must be finite")
        scale = max(1.0, float(np.abs(A).max()))
        if np.abs(A - A.T).max() > 1e-9 * scale:
            raise ValueError("matrix is not symmetric")
        A = 0.5 * (A + A.T)
        if _linalg.min_eigenvalue(A) <= _linalg.PD_FLOOR:
            raise ValueError("matrix is not positive-definite")
        return A

    def _same(self, *mats):
        for m in mats:
            if m.shape != (self.n, self.n):
                raise ValueError(f"dimension mismatch: {m.shape} in SPD({self.n})")

    @staticmethod
    def _checked(value, what):
        if np.isnan(value).any() if isinstance(value, np.ndarray) else math.isnan(value):
            raise ValueError(f"{what}: input not positive-definite")
        return value

    def distance(self, p, q):
        self._same(p, q)
        # fixed argument order makes the rounded result exactly symmetric
        if p.tobytes() > q.tobytes():
            p, q = q, p
        return self._checked(_linalg.spd_distance(p, q), "distance")

    def geodesic_point(self, p, q, t):
        _check_t(t)
        self._same(p, q)
        if t == 0.0:
            return p
        return self._checked(_linalg.spd_geodesic(p, q, float(t)), "geodesic")

    def log(self, p, q):
        return self._checked(_linalg.spd_log(p, q), "log")

    def exp(self, p, v):
        return self._checked(_linalg.spd_exp(p, v), "exp")

    def inner(self, p, u, v):
        return float(_linalg.spd_inner(p, u, v))

    def _segment_slope(self, p, q, x, t):
        return float(_linalg.spd_segment_slope(p, q, x, float(t)))

    def origin(self):
        return np.eye(self.n)

    def random_point(self, rng, scale=1.0):
        Q, _ = np.linalg.qr(rng.standard_normal((self.n, self.n)))
        w = np.exp(scale * rng.uniform(-1.0, 1.0, self.n))
        A = (Q * w) @ Q.T
        return 0.5 * (A + A.T)

    def format_point(self, p):
        return ";".join(",".join(repr(float(c)) for c in row) for row in p)


@dataclass(frozen=True)
class Hyperbolic(_Riemannian):
    """Upper half-plane model of the hyperbolic plane.

    Tangent vectors are chart vectors ``(dx, dy)`` with the metric
    ``<u, v>_p = (u . v) / y_p**2``. Log and exp maps move ``p`` to ``i`` by
    the isometry ``z -> (z - x_p) / y_p`` and use the Cayley map to the disk,
    where geodesics through the origin are straight lines.
    """

    kind = "hyperbolic"

    def point(self, data):
        a = np.array(data, dtype=float).reshape(-1)
        if a.shape != (2,):
            raise ValueError("a hyperbolic point has two coordinates (x, y)")
        if not np.all(np.isfinite(a)):
            raise ValueError("coordinates must be finite")
        if not a[1] > 0:
            raise ValueError("hyperbolic points need y > 0")
        return a

    @staticmethod
    def _check(p):
        if p.shape != (2,) or not p[1] > 0:
            raise ValueError(f"invalid half-plane point {p!r}")

    def distance(self, p, q):
        self._check(p)
        self._check(q)
        dx = p[0] - q[0]
        dy = p[1] - q[1]
        return 2.0 * math.asinh(math.sqrt((dx * dx + dy * dy) / (4.0 * p[1] * q[1])))

    def log(self, p, q):
        d = self.distance(p, q)
        if d == 0.0:
            return np.zeros(2)
        z = complex((q[0] - p[0]) / p[1], q[1] / p[1])
        w = (z - 1j) / (z + 1j)
        u = 1j * (w / abs(w)) * d * p[1]
        return np.array([u.real, u.imag])

    def exp(self, p, v):
        self._check(p)
        vz = complex(v[0], v[1]) / p[1]
        r = abs(vz)
        if r == 0.0:
            return p
        w = math.tanh(r / 2) * (vz / 1j) / r
        z = 1j * (1 + w) / (1 - w)
        return np.array([p[0] + p[1] * z.real, p[1] * z.imag])

    def inner(self, p, u, v):
        return float(u[0] * v[0] + u[1] * v[1]) / (p[1] * p[1])

    def geodesic_point(self, p, q, t):
        _check_t(t)
        if t == 0.0:
            self._check(q)
            return p
        if t == 1.0:
            self._check(p)
            return q
        return self.exp(p, t * self.log(p, q))

    @staticmethod
    def vertical_unit(p):
        """Unit tangent at ``p`` pointing straight up."""
        return np.array([0.0, float(p[1])])

    def origin(self):
        return np.array([0.0, 1.0])

    def random_point(self, rng, scale=1.0):
        return np.array([2.0 * scale * rng.uniform(-1, 1), math.exp(scale * rng.uniform(-1, 1))])

    def format_point(self, p):
        return f"{float(p[0])!r},{float(p[1])!r}"


# -- module-level operations -------------------------------------------------

def distance(space: Space, p, q) -> float:
    return space.distance(p, q)


def geodesic_point(space: Space, p, q, t: float):
    return space.geodesic_point(p, q, t)


def project(space: Space, cset: ConvexSet, x):
    return space.project(cset, x)


def check_cat0(space: Space, x, p, q, t: float) -> float:
    return space.check_cat0(x, p, q, t)


def make_space(kind: str, dim: int | None = None, rays: int | None = None) -> Space:
    """Build a space from the CLI-style description."""
    kind = kind.lower()
    if kind == "euclidean":
        return Euclidean(int(dim if dim is not None else 2))
    if kind == "spider":
        return Spider(int(rays if rays is not None else 3))
    if kind == "spd":
        return SPD(int(dim if dim is not None else 2))
    if kind == "hyperbolic":
        return Hyperbolic()
    raise ValueError(f"unknown space kind {kind!r}")
