"""Convex lower-semicontinuous functionals with proximal maps and semigroups.

Every functional lives on one :class:`~hadamard_flows.spaces.Space` and
offers

* ``eval(x)`` -- the value, ``inf`` outside the domain,
* ``prox(lam, x)`` -- the resolvent, the unique minimizer of
  ``f(y) + d(x, y)**2 / (2 * lam)``,
* ``exact_semigroup(t, x)`` -- the gradient-flow semigroup in closed form,
  or ``None`` when no closed form is known,
* ``domain()`` -- a :class:`DomainInfo` with the closure of the domain.

:func:`brute_force_prox` is a grid search that only uses ``eval`` and the
metric; it exists to check the closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.optimize import brentq

from .spaces import (
    ClosedBall, ConvexSet, Euclidean, GeodesicSegment, Hyperbolic, Space,
    Spider, SpiderPoint, SubSpider, WholeSpace, MEMBERSHIP_TOL,
)

__all__ = [
    "ConvergenceError", "DomainInfo", "Functional", "DistancePower", "Indicator",
    "Busemann", "Displacement", "brute_force_prox", "catalogue",
]


class ConvergenceError(RuntimeError):
    """An iterative solver ran out of iterations.

    Attributes
    ----------
    residual : float
        The last value of the solver's stopping quantity.
    """

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class DomainInfo:
    """Closure of ``dom f`` as a convex set, plus a local-compactness flag."""

    closure: ConvexSet
    locally_compact: bool = True


def _check_lam(lam):
    if not lam >= 0:
        raise ValueError(f"step must be >= 0, got {lam!r}")


class Functional:
    """Base class. Subclasses set ``space`` and implement ``eval``/``_prox``."""

    space: Space
    has_closed_prox: bool = True
    has_exact_semigroup: bool = False
    # accuracy of the prox in distance (0 for closed forms)
    prox_tol: float = 0.0

    def eval(self, x) -> float:
        raise NotImplementedError

    def __call__(self, x) -> float:
        return self.eval(x)

    def prox(self, lam: float, x):
        _check_lam(lam)
        if lam == 0:
            return x
        return self._prox(lam, x)

    def _prox(self, lam, x):
        raise NotImplementedError

    def exact_semigroup(self, t: float, x):
        """Closed-form ``S_t x`` or ``None`` if unavailable."""
        _check_lam(t)
        return None

    def domain(self) -> DomainInfo:
        return DomainInfo(WholeSpace())

    def in_domain(self, x) -> bool:
        return math.isfinite(self.eval(x))

    def sample_domain(self, rng: np.random.Generator, scale: float = 1.0):
        return self.space.sample_set(self.domain().closure, rng, scale)

    def search_points(self) -> list:
        """Points a brute-force search region must contain."""
        return []

    def describe(self) -> str:
        return type(self).__name__.lower()


@dataclass(frozen=True, eq=False)
class DistancePower(Functional):
    """``w * d(x, anchor)**p`` for ``p`` in {1, 2}."""

    space: Space
    anchor: Any
    weight: float = 1.0
    power: int = 1

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError("weight must be > 0")
        if self.power not in (1, 2):
            raise ValueError("power must be 1 or 2")

    @property
    def has_exact_semigroup(self):
        return True

    def eval(self, x):
        return self.weight * self.space.distance(x, self.anchor) ** self.power

    def _prox(self, lam, x):
        if self.power == 2:
            s = 2 * lam * self.weight
            return self.space.geodesic_point(x, self.anchor, s / (1 + s))
        d = self.space.distance(x, self.anchor)
        if d == 0.0:
            return x
        return self.space.geodesic_point(x, self.anchor, min(lam * self.weight, d) / d)

    def exact_semigroup(self, t, x):
        _check_lam(t)
        if t == 0:
            return x
        if self.power == 2:
            return self.space.geodesic_point(x, self.anchor, -math.expm1(-2 * self.weight * t))
        d = self.space.distance(x, self.anchor)
        if d == 0.0:
            return x
        return self.space.geodesic_point(x, self.anchor, min(self.weight * t, d) / d)

    def search_points(self):
        return [self.anchor]

    def describe(self):
        return f"distpow anchor={self.space.format_point(self.anchor)} w={self.weight!r} p={self.power}"


@dataclass(frozen=True, eq=False)
class Indicator(Functional):
    """0 on a closed convex set, ``inf`` elsewhere."""

    space: Space
    cset: ConvexSet
    tol: float = MEMBERSHIP_TOL

    @property
    def has_exact_semigroup(self):
        return True

    def eval(self, x):
        return 0.0 if self.space.contains(self.cset, x, self.tol) else math.inf

    def _prox(self, lam, x):
        return self.space.project(self.cset, x)

    def exact_semigroup(self, t, x):
        _check_lam(t)
        if not self.space.contains(self.cset, x, self.tol):
            raise ValueError("semigroup start point lies outside the closed domain")
        return x

    def domain(self):
        return DomainInfo(self.cset)

    def search_points(self):
        c = self.cset
        if isinstance(c, ClosedBall):
            return [c.center]
        if isinstance(c, GeodesicSegment):
            return [c.p, c.q]
        return []

    def describe(self):
        c = self.cset
        fmt = self.space.format_point
        if isinstance(c, ClosedBall):
            return f"indicator ball c={fmt(c.center)} r={c.radius!r}"
        if isinstance(c, GeodesicSegment):
            return f"indicator segment p={fmt(c.p)} q={fmt(c.q)}"
        if isinstance(c, SubSpider):
            return "indicator subspider rays=" + ";".join(str(r) for r in sorted(c.rays))
        return "indicator whole"


@dataclass(frozen=True, eq=False)
class Busemann(Functional):
    """Busemann function of a geodesic ray.

    Euclidean space: ``-<x, u>`` for a unit direction ``u``. Hyperbolic
    plane: ``-ln y``, the ray running up to the ideal point at infinity.
    The hyperbolic prox is computed numerically.
    """

    space: Space
    direction: Any = None
    max_iter: int = 10_000
    tol: float = 1e-13

    def __post_init__(self):
        if isinstance(self.space, Euclidean):
            u = np.asarray(self.direction if self.direction is not None
                           else np.eye(self.space.n)[0], dtype=float).reshape(-1)
            if u.shape != (self.space.n,):
                raise ValueError("direction has the wrong dimension")
            nu = math.sqrt(float(u @ u))
            if nu == 0:
                raise ValueError("direction must be nonzero")
            object.__setattr__(self, "direction", u / nu)
        elif isinstance(self.space, Hyperbolic):
            if self.direction is not None:
                raise ValueError("the hyperbolic Busemann function takes no direction")
        else:
            raise TypeError(f"no Busemann function implemented for {self.space.kind} space")

    @property
    def has_closed_prox(self):
        return isinstance(self.space, Euclidean)

    @property
    def has_exact_semigroup(self):
        return isinstance(self.space, Euclidean)

    @property
    def prox_tol(self):
        return 0.0 if isinstance(self.space, Euclidean) else 1e-12

    def eval(self, x):
        if isinstance(self.space, Euclidean):
            return -float(x @ self.direction)
        return -math.log(x[1])

    def _prox(self, lam, x):
        if isinstance(self.space, Euclidean):
            return x + lam * self.direction
        return self._descent_prox(lam, x)

    def _descent_prox(self, lam, x):
        # geodesic gradient descent on the Moreau objective with Armijo steps
        H = self.space

        def phi(y):
            return -math.log(y[1]) + H.distance(x, y) ** 2 / (2 * lam)

        def grad(y):
            return -H.vertical_unit(y) - H.log(y, x) / lam

        y = x
        fy = phi(y)
        g = grad(y)
        gn = H.norm(y, g)
        for _ in range(self.max_iter):
            # 1/lam-strong convexity bounds the distance to the minimizer
            if lam * gn <= self.tol * max(1.0, lam):
                return y
            step = lam
            while True:
                z = H.exp(y, -step * g)
                fz = phi(z)
                slack = 1e-15 * (abs(fy) + 1.0)
                if fz <= fy - 0.5 * step * gn * gn + slack:
                    break
                step *= 0.5
                if step * gn < 1e-17:
                    if lam * gn <= 1e-9:
                        return y
                    raise ConvergenceError("Busemann prox line search stalled", lam * gn)
            y, fy = z, fz
            g = grad(y)
            gn = H.norm(y, g)
        raise ConvergenceError("Busemann prox did not converge", lam * gn)

    def exact_semigroup(self, t, x):
        _check_lam(t)
        if isinstance(self.space, Euclidean):
            return x + t * self.direction
        return None

    def describe(self):
        if isinstance(self.space, Euclidean):
            return "busemann u=" + self.space.format_point(self.direction)
        return "busemann"


@dataclass(frozen=True, eq=False)
class Displacement(Functional):
    """``d(x, T x)`` for the Euclidean isometry ``T x = Q x + b``.

    The prox is the exact solution of the dual trust-region problem
    ``max_{|w| <= 1} <w, A x - b> - lam/2 |A^T w|^2`` with ``A = I - Q``.
    """

    space: Space
    Q: Any
    b: Any

    def __post_init__(self):
        if not isinstance(self.space, Euclidean):
            raise TypeError("displacement functions are only implemented in Euclidean space")
        n = self.space.n
        Q = np.asarray(self.Q, dtype=float).reshape(n, n)
        if np.abs(Q.T @ Q - np.eye(n)).max() > 1e-9:
            raise ValueError("Q must be orthogonal")
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if b.shape != (n,):
            raise ValueError("translation has the wrong dimension")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "b", b)
        A = np.eye(n) - Q
        m, V = np.linalg.eigh(A @ A.T)
        m = np.where(m < 1e-13 * max(1.0, m.max()), 0.0, m)
        object.__setattr__(self, "_A", A)
        object.__setattr__(self, "_eig", (m, V))

    def eval(self, x):
        r = self._A @ x - self.b
        return math.sqrt(float(r @ r))

    def _prox(self, lam, x):
        A = self._A
        m, V = self._eig
        m = lam * m
        c = A @ x - self.b
        cn = math.sqrt(float(c @ c))
        if cn == 0.0:
            return x
        ch = V.T @ c
        null = m == 0.0
        in_range = not np.any(np.abs(ch[null]) > 1e-12 * max(1.0, cn))

        def wnorm(sig):
            den = m + sig
            with np.errstate(divide="ignore"):
                terms = np.where(den > 0, ch / np.where(den > 0, den, 1.0), np.where(ch == 0, 0.0, np.inf))
            if sig == 0.0:
                terms = np.where(null, 0.0, terms)
            return math.sqrt(float(terms @ terms))

        if in_range and wnorm(0.0) <= 1.0:
            sig = 0.0
        else:
            def phi(s):
                if s == 0.0:
                    return -1.0
                return 1.0 / wnorm(s) - 1.0
            # |w(cn)| <= |c| / cn = 1, so phi changes sign on [0, cn]
            sig = brentq(phi, 0.0, cn, xtol=1e-16 * cn + 1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
        den = m + sig
        wh = np.where(den > 0, ch / np.where(den > 0, den, 1.0), 0.0)
        w = V @ wh
        return x - lam * (A.T @ w)

    def describe(self):
        Qs = ";".join(",".join(repr(float(v)) for v in row) for row in self.Q)
        return f"displacement Q={Qs} b={self.space.format_point(self.b)}"


# -- brute force --------------------------------------------------------------

def _grid_min_1d(phi, lo, hi, resolution, npts=201):
    # for convex phi the minimizer stays within one cell of the best grid point
    while True:
        xs = np.linspace(lo, hi, npts)
        vals = np.array([phi(v) for v in xs])
        i = int(np.argmin(vals))
        cell = (hi - lo) / (npts - 1)
        if cell <= resolution / 8 or not math.isfinite(vals[i]):
            return float(xs[i]), float(vals[i])
        lo_new = xs[max(i - 1, 0)]
        hi_new = xs[min(i + 1, npts - 1)]
        lo, hi = lo_new, hi_new


def _grid_min_2d(phi, box, resolution, npts=21):
    # nested 1-D searches; the inner minimum is convex in the outer coordinate.
    # Inner searches run finer so their value error cannot blur the outer one.
    (x0, x1), (y0, y1) = box
    fine = min(resolution, resolution * resolution)

    def inner(a):
        return _grid_min_1d(lambda b: phi(np.array([a, b])), y0, y1, fine, npts)

    a, _ = _grid_min_1d(lambda a: inner(a)[1], x0, x1, resolution, npts)
    return np.array([a, inner(a)[0]])


def brute_force_prox(f, lam: float, x, resolution: float = 1e-4):
    """Grid minimizer of ``f(y) + d(x, y)**2 / (2 lam)``.

    Only ``f.eval`` and the metric are used. ``f`` may be a
    :class:`Functional` or any object with ``space``, ``eval`` and
    ``search_points``. Supported spaces are R^1, R^2 and spiders.

    Parameters
    ----------
    resolution : float
        Final grid spacing is at most ``resolution / 8``.

    Raises
    ------
    ValueError
        If no grid point lands in ``dom f`` (e.g. a segment in the plane).
    """
    if not lam > 0:
        raise ValueError("brute-force prox needs lam > 0")
    space = f.space
    pts = [x] + list(f.search_points())

    def phi(y):
        v = f.eval(y)
        return v + space.distance(x, y) ** 2 / (2 * lam) if math.isfinite(v) else math.inf

    if isinstance(space, Euclidean) and space.n in (1, 2):
        arr = np.array([np.asarray(p, dtype=float) for p in pts])
        lo = arr.min(axis=0)
        hi = arr.max(axis=0)
        pad = 1.0 + 0.5 * float((hi - lo).max()) + lam
        if space.n == 1:
            y, _ = _grid_min_1d(lambda s: phi(np.array([s])), lo[0] - pad, hi[0] + pad, resolution)
            y = np.array([y])
        else:
            box = [(lo[0] - pad, hi[0] + pad), (lo[1] - pad, hi[1] + pad)]
            y = _grid_min_2d(phi, box, resolution)
        if not math.isfinite(phi(y)):
            raise ValueError("the grid never reached the domain of the functional")
        return y
    if isinstance(space, Spider):
        R = max(p.radius for p in pts) + 1.0 + lam
        best = None
        for ray in range(space.k):
            r, v = _grid_min_1d(lambda s: phi(SpiderPoint(ray, s)), 0.0, R, resolution)
            if best is None or v < best[1]:
                best = (SpiderPoint(ray, r), v)
        if not math.isfinite(best[1]):
            raise ValueError("the grid never reached the domain of the functional")
        return best[0]
    raise TypeError(f"brute-force prox is not available in {space.kind} space of this dimension")


# -- catalogue ----------------------------------------------------------------

def _rotation(rng, n):
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def catalogue(space: Space, rng: np.random.Generator) -> list[Functional]:
    """Random instances of every functional family supported on ``space``."""
    a = space.random_point(rng)
    out: list[Functional] = [
        DistancePower(space, a, weight=float(rng.uniform(0.5, 2.0)), power=1),
        DistancePower(space, space.random_point(rng), weight=float(rng.uniform(0.5, 2.0)), power=2),
        Indicator(space, ClosedBall(space.random_point(rng, 0.5), float(rng.uniform(0.5, 1.5)))),
        Indicator(space, GeodesicSegment(space.random_point(rng), space.random_point(rng))),
    ]
    if isinstance(space, Spider):
        rays = [r for r in range(space.k) if rng.uniform() < 0.5] or [0]
        out.append(Indicator(space, SubSpider(frozenset(rays))))
    if isinstance(space, Euclidean):
        out.append(Busemann(space, rng.standard_normal(space.n)))
        out.append(Displacement(space, _rotation(rng, space.n), rng.standard_normal(space.n)))
    if isinstance(space, Hyperbolic):
        out.append(Busemann(space))
    return out
