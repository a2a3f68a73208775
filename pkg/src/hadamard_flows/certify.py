"""Residual checks for the inequalities behind the flows.

Each checker returns a :class:`Residual` whose ``value`` is positive exactly
when the inequality is violated. The checkers recompute every distance and
function value from raw points; traces are read by attribute only, so this
module does not depend on :mod:`hadamard_flows.flows`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .spaces import ClosedBall

__all__ = [
    "CATALOGUE", "Residual", "check_cat0", "check_pythagorean", "check_resolvent_inequality",
    "check_evi", "check_nonexpansive", "check_convexity", "check_lower_bound",
    "check_summed_estimate", "check_key_estimate", "check_coupling",
]

CATALOGUE = frozenset({
    "cat0", "pythagorean", "nonexpansive", "resolvent", "evi", "summed_estimate",
    "key_estimate", "coupling_eq1", "coupling_eq2", "convcomb", "convexity", "lower_bound",
})

CLOSED_FORM_TOL = 1e-9
TRACE_TOL = 1e-8


@dataclass(frozen=True)
class Residual:
    """Violation magnitude of one inequality (``value <= tol`` passes)."""

    name: str
    value: float
    tol: float
    context: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.name not in CATALOGUE:
            raise ValueError(f"unknown inequality {self.name!r}")
        if not math.isfinite(self.value):
            raise ValueError(f"{self.name} residual is not finite: {self.value!r}")

    @property
    def passed(self) -> bool:
        return self.value <= self.tol


def _worst(name, values, tol, context):
    return Residual(name, max(values) if values else 0.0, tol, context)


def check_cat0(space, x, p, q, t: float, tol: float = CLOSED_FORM_TOL) -> Residual:
    """``d(x, g(t))^2 - [(1-t) d(x,p)^2 + t d(x,q)^2 - t(1-t) d(p,q)^2]``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    z = space.geodesic_point(p, q, t)
    d = space.distance
    rhs = (1 - t) * d(x, p) ** 2 + t * d(x, q) ** 2 - t * (1 - t) * d(p, q) ** 2
    return Residual("cat0", d(x, z) ** 2 - rhs, tol, {"space": space.kind, "t": t})


def check_pythagorean(space, cset, x, y, tol: float = CLOSED_FORM_TOL) -> Residual:
    """``d(x,Px)^2 + d(y,Px)^2 - d(x,y)^2`` for ``y`` in the set."""
    px = space.project(cset, x)
    d = space.distance
    return Residual("pythagorean", d(x, px) ** 2 + d(y, px) ** 2 - d(x, y) ** 2, tol,
                    {"space": space.kind, "set": type(cset).__name__})


def _prox_tol(f, default):
    return default if getattr(f, "prox_tol", 0.0) == 0.0 else 10 * max(f.prox_tol, 1e-10)


def check_resolvent_inequality(f, lam: float, x, v, prox_point=None,
                               tol: float | None = None) -> Residual:
    """``[d(Jx,v)^2 - d(x,v)^2 + d(x,Jx)^2] / (2 lam) + f(Jx) - f(v)``."""
    if not lam > 0:
        raise ValueError("lam must be > 0")
    fv = f.eval(v)
    if not math.isfinite(fv):
        raise ValueError("v must lie in the domain of f")
    J = f.prox(lam, x) if prox_point is None else prox_point
    d = f.space.distance
    value = (d(J, v) ** 2 - d(x, v) ** 2 + d(x, J) ** 2) / (2 * lam) + f.eval(J) - fv
    tol = _prox_tol(f, CLOSED_FORM_TOL) if tol is None else tol
    return Residual("resolvent", value, tol, {"functional": f.describe(), "lambda": lam})


def check_evi(f, t: float, x, v, flow, tol: float = CLOSED_FORM_TOL) -> Residual:
    """``[d(flow,v)^2 - d(x,v)^2] / (2t) + f(flow) - f(v)``."""
    if not t > 0:
        raise ValueError("t must be > 0")
    fv = f.eval(v)
    if not math.isfinite(fv):
        raise ValueError("v must lie in the domain of f")
    d = f.space.distance
    value = (d(flow, v) ** 2 - d(x, v) ** 2) / (2 * t) + f.eval(flow) - fv
    return Residual("evi", value, tol, {"functional": f.describe(), "t": t})


def check_nonexpansive(mapping: Callable, space, pairs: int = 1000, seed: int = 42,
                       sampler: Callable | None = None, tol: float = CLOSED_FORM_TOL) -> Residual:
    """``max d(Tx, Ty) - d(x, y)`` over random pairs."""
    rng = np.random.default_rng(seed)
    sample = sampler or (lambda g: space.random_point(g))
    worst = -math.inf
    for _ in range(pairs):
        x = sample(rng)
        y = sample(rng)
        worst = max(worst, space.distance(mapping(x), mapping(y)) - space.distance(x, y))
    return Residual("nonexpansive", worst if pairs else 0.0, tol,
                    {"space": space.kind, "pairs": pairs, "seed": seed})


def check_convexity(f, samples: int = 500, seed: int = 42, tol: float = CLOSED_FORM_TOL) -> Residual:
    """``max f(g(t)) - (1-t) f(p) - t f(q)`` over random geodesics in ``dom f``."""
    rng = np.random.default_rng(seed)
    space = f.space
    worst = -math.inf
    for _ in range(samples):
        p = f.sample_domain(rng)
        q = f.sample_domain(rng)
        t = float(rng.uniform())
        fz = f.eval(space.geodesic_point(p, q, t))
        # an infinite value inside the domain is a violation
        val = 1.0 if math.isinf(fz) else fz - (1 - t) * f.eval(p) - t * f.eval(q)
        worst = max(worst, val)
    return Residual("convexity", worst, tol, {"functional": f.describe(), "samples": samples})


def check_lower_bound(f, center, radius: float, samples: int = 500, seed: int = 42) -> Residual:
    """Boundedness from below on a ball, checked by sampling.

    The value is 0 when the sampled minimum is a real number (not ``-inf``
    or NaN) and 1 otherwise.
    """
    rng = np.random.default_rng(seed)
    space = f.space
    ball = ClosedBall(center, radius)
    lo = math.inf
    for _ in range(samples):
        lo = min(lo, f.eval(space.sample_set(ball, rng, radius)))
    ok = lo > -math.inf and not math.isnan(lo)
    return Residual("lower_bound", 0.0 if ok else 1.0, 0.0,
                    {"functional": f.describe(), "sampled_min": lo if ok else None})


# -- traces -----------------------------------------------------------------------

def _chains(trace):
    chains = getattr(trace, "chains", None)
    steps = getattr(trace, "chain_steps", None)
    if not chains or steps is None or any(len(c) < 2 for c in chains):
        raise ValueError("trace does not record intermediate iterates")
    return chains, steps


def check_summed_estimate(trace, v, tol: float = TRACE_TOL) -> Residual:
    """Summed one-step inequality for every chain of a trace.

    Resolvent chains:
    ``2h sum f_j(x_j) + d(x_k,v)^2 - d(x_0,v)^2 + sum d(x_{j-1},x_j)^2 - 2h f(v)``.
    Semigroup chains use the summed EVI, which has no squared-step term:
    ``d(x_k,v)^2 - d(x_0,v)^2 + 2h sum f_j(x_j) - 2h f(v)``.
    """
    chains, steps = _chains(trace)
    obj = trace.objective
    fs = obj.functionals
    d = obj.space.distance
    fv = obj.eval(v)
    if not math.isfinite(fv):
        raise ValueError("v must lie in the domain of f")
    semigroup_mode = getattr(trace, "mode", "resolvents") == "semigroups"
    values = []
    for chain, h in zip(chains, steps):
        total = 2 * h * sum(f.eval(xj) for f, xj in zip(fs, chain[1:]))
        total += d(chain[-1], v) ** 2 - d(chain[0], v) ** 2
        if not semigroup_mode:
            total += sum(d(a, b) ** 2 for a, b in zip(chain, chain[1:]))
        values.append(total - 2 * h * fv)
    return _worst("summed_estimate", values, tol, {"chains": len(chains), "mode": getattr(trace, "mode", "")})


def check_key_estimate(trace, x, lam: float, v, tol: float = TRACE_TOL) -> Residual:
    """``2 lam sum f_j(x_j) + d(x_0,x)^2 + d(x_0,v)^2 - d(x,v)^2 - 2 lam f(v)``.

    Only meaningful when every ``x_0`` is the fixed point ``R_{lam,rho} x``,
    i.e. for convergence-study traces.
    """
    if getattr(trace, "scheme", "study") != "study":
        raise ValueError("the key estimate applies to fixed-point (study) traces only")
    chains, _ = _chains(trace)
    obj = trace.objective
    fs = obj.functionals
    d = obj.space.distance
    fv = obj.eval(v)
    if not math.isfinite(fv):
        raise ValueError("v must lie in the domain of f")
    values = []
    for chain in chains:
        x0 = chain[0]
        total = 2 * lam * sum(f.eval(xj) for f, xj in zip(fs, chain[1:]))
        total += d(x0, x) ** 2 + d(x0, v) ** 2 - d(x, v) ** 2
        values.append(total - 2 * lam * fv)
    return _worst("key_estimate", values, tol, {"chains": len(chains), "lambda": lam})


def check_coupling(trace, x, lam: float, tol: float = TRACE_TOL) -> list[Residual]:
    """Fixed-point identities of a study trace.

    ``|d(x,x_k) - (rho+lam)/lam d(x,x_0)|``, ``|d(x_0,x_k) - rho/lam d(x,x_0)|``
    and ``d(x_0, geodesic_point(x, x_k, q))``.
    """
    chains, steps = _chains(trace)
    space = trace.objective.space
    d = space.distance
    e1, e2, cc = [], [], []
    for chain, rho in zip(chains, steps):
        x0, xk = chain[0], chain[-1]
        d0 = d(x, x0)
        e1.append(abs(d(x, xk) - (rho + lam) / lam * d0))
        e2.append(abs(d(x0, xk) - rho / lam * d0))
        r = lam / rho
        cc.append(d(x0, space.geodesic_point(x, xk, r / (1 + r))))
    ctx = {"chains": len(chains), "lambda": lam}
    return [_worst("coupling_eq1", e1, tol, ctx), _worst("coupling_eq2", e2, tol, ctx),
            _worst("convcomb", cc, tol, ctx)]
