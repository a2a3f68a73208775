"""Gradient-flow semigroups and product formulas.

* :func:`iterate_resolvent` -- ``(J_{t/n})^n x``.
* :func:`semigroup` -- ``S_t x``, exact if known, else the limit of
  :func:`iterate_resolvent` under n-doubling with a Cauchy test.
* :func:`lie_trotter_resolvents` / :func:`lie_trotter_semigroups` -- cyclic
  products of component resolvents, or of component semigroups composed with
  projections onto the closed component domains.
* :func:`resolvent_of_family` -- the fixed point of
  ``y -> (1 - q) x + q F_rho(y)`` with ``q = (lam/rho) / (1 + lam/rho)``.
* :func:`resolvent_convergence_study` -- ``d(R_{lam,rho} x, J_lam x)`` along a
  schedule ``rho -> 0``, with the coupling identities certified per cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import _linalg, certify
from .functionals import ConvergenceError, DistancePower, DomainInfo, Functional, brute_force_prox
from .spaces import SPD, Euclidean, Space, SpiderPoint, WholeSpace

__all__ = [
    "SplitObjective", "FlowParams", "FlowTrace", "iterate_resolvent", "semigroup",
    "lie_trotter_resolvents", "lie_trotter_semigroups", "resolvent_product",
    "semigroup_product", "fixed_point_iteration", "resolvent_of_family",
    "resolvent_convergence_study", "default_rho_schedule",
]

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SplitObjective:
    """``f = sum_j f_j`` as an ordered tuple of ``(f_j, DomainInfo_j)``.

    Plain functionals are accepted and paired with their own ``domain()``.
    """

    terms: tuple

    def __post_init__(self):
        items = []
        for item in self.terms:
            if isinstance(item, Functional):
                items.append((item, item.domain()))
            else:
                f, dom = item
                if not isinstance(dom, DomainInfo):
                    raise TypeError("terms must be functionals or (functional, DomainInfo) pairs")
                items.append((f, dom))
        if not items:
            raise ValueError("a split objective needs at least one term")
        space = items[0][0].space
        for f, _ in items:
            if f.space != space:
                raise ValueError("all terms must live on the same space")
        object.__setattr__(self, "terms", tuple(items))

    @classmethod
    def of(cls, *functionals) -> "SplitObjective":
        return cls(tuple(functionals))

    @property
    def space(self) -> Space:
        return self.terms[0][0].space

    @property
    def functionals(self) -> list[Functional]:
        return [f for f, _ in self.terms]

    @property
    def domains(self) -> list[DomainInfo]:
        return [d for _, d in self.terms]

    def __len__(self):
        return len(self.terms)

    def eval(self, x) -> float:
        total = 0.0
        for f, _ in self.terms:
            total += f.eval(x)
        return total

    def in_domain(self, x) -> bool:
        return math.isfinite(self.eval(x))

    def sample_domain(self, rng: np.random.Generator, scale: float = 1.0, tries: int = 200):
        """Random point of ``dom f``, drawn from the most restrictive component."""
        order = sorted(self.functionals, key=lambda f: isinstance(f.domain().closure, WholeSpace))
        for _ in range(tries):
            for f in order:
                v = f.sample_domain(rng, scale)
                if self.in_domain(v):
                    return v
        raise ValueError("could not sample a point of the intersection domain")

    def search_points(self) -> list:
        pts = []
        for f in self.functionals:
            pts.extend(f.search_points())
        return pts

    def describe(self) -> str:
        return " + ".join(f.describe() for f in self.functionals)


def _as_objective(obj) -> SplitObjective:
    return obj if isinstance(obj, SplitObjective) else SplitObjective((obj,))


def _single(f) -> Functional:
    if isinstance(f, SplitObjective):
        if len(f) != 1:
            raise ValueError("no computable prox for a sum of several functionals")
        return f.functionals[0]
    return f


@dataclass(frozen=True)
class FlowParams:
    """Run parameters; ``n=None`` selects the adaptive doubling schedule."""

    t: float = 1.0
    n: int | None = None
    max_exponent: int = 16
    tol: float = 1e-6
    fixed_point_tol: float = 1e-10
    max_iter: int = 10_000_000
    n_inner: int = 64
    evi_samples: int = 50
    seed: int = 42
    fallback: bool = True

    def __post_init__(self):
        if not self.t >= 0:
            raise ValueError("t must be >= 0")
        if self.n is not None and self.n < 1:
            raise ValueError("n must be a positive integer")
        if not (self.tol > 0 and self.fixed_point_tol > 0):
            raise ValueError("tolerances must be > 0")
        if self.max_iter < 1 or self.max_exponent < 1 or self.n_inner < 1:
            raise ValueError("iteration limits must be positive")


@dataclass
class FlowTrace:
    """Iterates and diagnostics of one run.

    Attributes
    ----------
    scheme : str
        ``"semigroup"``, ``"resolvents"``, ``"semigroups"`` or ``"study"``.
    mode : str
        Which component maps built the chains: ``"resolvents"`` or ``"semigroups"``.
    points : list
        Start point followed by every recorded sweep endpoint.
    chains : list of list
        ``[x_0, x_1, ..., x_k]`` per sweep (or per ``rho`` in a study).
    chain_steps : list of float
        Step ``h`` (or ``rho``) used for each chain.
    table : list of dict
        Convergence table rows.
    """

    scheme: str
    mode: str
    objective: Any
    start: Any
    final: Any = None
    points: list = field(default_factory=list)
    chains: list = field(default_factory=list)
    chain_steps: list = field(default_factory=list)
    objective_values: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    table: list = field(default_factory=list)
    converged: bool = True
    flags: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.residuals)


# -- single functional ---------------------------------------------------------

def iterate_resolvent(f, t: float, n: int, x):
    """``(J_{t/n})^{(n)}(x)``."""
    f = _single(f)
    if not t >= 0:
        raise ValueError("t must be >= 0")
    if n < 1:
        raise ValueError("n must be >= 1")
    if t == 0:
        return x
    h = t / n
    y = x
    for _ in range(n):
        y = f.prox(h, y)
    return y


def _evi_residuals(f, t, x, flow, rng, samples, tol, context):
    worst = -math.inf
    for _ in range(samples):
        v = f.sample_domain(rng)
        r = certify.check_evi(f, t, x, v, flow, tol=tol)
        worst = max(worst, r.value)
    return certify.Residual("evi", worst, tol, dict(context, samples=samples))


def semigroup(f, t: float, x, params: FlowParams | None = None):
    """``S_t x`` and a trace.

    The closed form is used when available. Otherwise ``n`` doubles from 2
    until ``d(J^{(n/2)}, J^{(n)}) <= tol``; if ``params.n`` is set that single
    step count is used instead. The result is certified against the EVI for
    ``params.evi_samples`` random ``v`` in the domain.
    """
    f = _single(f)
    params = params or FlowParams(t=t)
    if not t >= 0:
        raise ValueError("t must be >= 0")
    trace = FlowTrace("semigroup", "resolvents", SplitObjective((f,)), x)
    space = f.space
    if t == 0:
        y = x
    elif f.has_exact_semigroup:
        y = f.exact_semigroup(t, x)
        trace.flags["exact"] = True
    elif params.n is not None:
        y = iterate_resolvent(f, t, params.n, x)
        trace.table.append({"n": params.n, "displacement": math.nan})
        trace.flags["exact"] = False
    else:
        trace.flags["exact"] = False
        prev = iterate_resolvent(f, t, 1, x)
        trace.converged = False
        y = prev
        for e in range(1, params.max_exponent + 1):
            n = 2 ** e
            y = iterate_resolvent(f, t, n, x)
            disp = space.distance(prev, y)
            trace.table.append({"n": n, "displacement": disp})
            if disp <= params.tol:
                trace.converged = True
                break
            prev = y
    trace.final = y
    trace.points = [x, y]
    trace.objective_values = [f.eval(x), f.eval(y)]
    if t > 0 and params.evi_samples > 0:
        tol = 1e-9 if trace.flags.get("exact") else params.tol
        rng = np.random.default_rng(params.seed)
        trace.residuals.append(_evi_residuals(f, t, x, y, rng, params.evi_samples, tol, {"t": t}))
    return y, trace


# -- splittings ----------------------------------------------------------------

def resolvent_product(obj, rho: float) -> Callable:
    """Sweep map returning the chain ``[y, J^1 y, J^2 J^1 y, ...]``."""
    fs = _as_objective(obj).functionals

    def chain(y):
        out = [y]
        for f in fs:
            y = f.prox(rho, y)
            out.append(y)
        return out

    return chain


def _component_semigroup(f, dom, space, n_inner, fallback):
    closure = dom.closure
    if isinstance(closure, WholeSpace):
        proj = None
    else:
        try:
            space.project(closure, space.origin())
        except TypeError as exc:
            raise ValueError(f"no projection onto the domain of {f.describe()}") from exc
        proj = closure
    if f.has_exact_semigroup:
        def step(h, y):
            return f.exact_semigroup(h, y)
        approx = False
    elif fallback:
        def step(h, y):
            return iterate_resolvent(f, h, n_inner, y)
        approx = True
    else:
        raise ValueError(f"{f.describe()} has no exact semigroup and the fallback is disabled")
    return proj, step, approx


def semigroup_product(obj, rho: float, n_inner: int = 64, fallback: bool = True) -> Callable:
    """Sweep map returning ``[y, S^1 P_1 y, S^2 P_2 S^1 P_1 y, ...]``."""
    obj = _as_objective(obj)
    space = obj.space
    comps = [_component_semigroup(f, d, space, n_inner, fallback) for f, d in obj.terms]

    def chain(y):
        out = [y]
        for proj, step, _ in comps:
            if proj is not None:
                y = space.project(proj, y)
            y = step(rho, y)
            out.append(y)
        return out

    return chain


def _sample_sweeps(n, count=5):
    return sorted({int(round(i * (n - 1) / max(count - 1, 1))) for i in range(count)})


def lie_trotter_resolvents(obj, t: float, n: int, x, record: bool = True):
    """``n`` sweeps of ``J^k_{t/n} o ... o J^1_{t/n}`` from ``x``."""
    obj = _as_objective(obj)
    if not t >= 0 or n < 1:
        raise ValueError("need t >= 0 and n >= 1")
    trace = FlowTrace("resolvents", "resolvents", obj, x)
    trace.flags["step"] = t / n if t > 0 else 0.0
    y = x
    trace.points.append(x)
    if record:
        trace.objective_values.append(obj.eval(x))
    if t > 0:
        h = t / n
        fs = obj.functionals
        fast = None if record else _compiled_sweeps(obj)
        if fast is not None:
            y = fast(y, h, n)
            n = 0
        for i in range(n):
            if record:
                chain = [y]
                for f in fs:
                    y = f.prox(h, y)
                    chain.append(y)
                trace.chains.append(chain)
                trace.chain_steps.append(h)
                trace.points.append(y)
                trace.objective_values.append(obj.eval(y))
            else:
                for f in fs:
                    y = f.prox(h, y)
        if record:
            trace.table.append({"n": n, "step": h, "displacement": obj.space.distance(x, y)})
    trace.final = y
    return y, trace


def _compiled_sweeps(obj: SplitObjective):
    """Numba sweep loop for sums of distance powers in R^n or SPD(n), else None."""
    space = obj.space
    if not isinstance(space, (Euclidean, SPD)) or not all(type(f) is DistancePower for f in obj.functionals):
        return None
    fs = obj.functionals
    weights = np.array([f.weight for f in fs], dtype=float)
    powers = np.array([f.power for f in fs], dtype=np.int64)
    anchors = np.array([np.asarray(f.anchor, dtype=float) for f in fs])
    if isinstance(space, Euclidean):
        return lambda y, h, n: _linalg.euclid_sweeps(np.asarray(y, dtype=float), anchors, weights, powers, h, n)
    if isinstance(space, SPD):
        def run(y, h, n):
            out = _linalg.spd_sweeps(np.asarray(y, dtype=float), anchors, weights, powers, h, n)
            if np.isnan(out).any():
                raise ValueError("iterate left the positive-definite cone")
            return out
        return run
    return None


def lie_trotter_semigroups(obj, t: float, n: int, x, n_inner: int = 64, fallback: bool = True,
                           evi_samples: int = 50, seed: int = 42, record: bool = True):
    """``n`` sweeps of ``S^k_{t/n} P_k o ... o S^1_{t/n} P_1`` from ``x``.

    Components without a closed-form semigroup use ``n_inner`` resolvent
    steps and are listed under ``flags["approximate_components"]``. The EVI
    of every component step is certified at a few sweeps against
    ``evi_samples`` random points of that component's domain.
    """
    obj = _as_objective(obj)
    if not t >= 0 or n < 1:
        raise ValueError("need t >= 0 and n >= 1")
    space = obj.space
    comps = [_component_semigroup(f, d, space, n_inner, fallback) for f, d in obj.terms]
    trace = FlowTrace("semigroups", "semigroups", obj, x)
    trace.flags["approximate_components"] = [j for j, c in enumerate(comps) if c[2]]
    trace.flags["locally_compact"] = [d.locally_compact for d in obj.domains]
    trace.flags["local_compactness_hypothesis"] = any(trace.flags["locally_compact"])
    trace.flags["step"] = t / n if t > 0 else 0.0
    trace.points.append(x)
    if record:
        trace.objective_values.append(obj.eval(x))
    y = x
    if t > 0:
        h = t / n
        rng = np.random.default_rng(seed)
        check_at = set(_sample_sweeps(n)) if evi_samples > 0 else set()
        fs = obj.functionals
        worst = [-math.inf] * len(comps)
        for i in range(n):
            chain = [y]
            for j, (proj, step, _) in enumerate(comps):
                start = space.project(proj, y) if proj is not None else y
                y = step(h, start)
                chain.append(y)
                if i in check_at:
                    f = fs[j]
                    for _ in range(evi_samples):
                        v = f.sample_domain(rng)
                        worst[j] = max(worst[j], certify.check_evi(f, h, start, v, y).value)
            if record:
                trace.chains.append(chain)
                trace.chain_steps.append(h)
                trace.points.append(y)
                trace.objective_values.append(obj.eval(y))
        for j, w in enumerate(worst):
            if w > -math.inf:
                trace.residuals.append(certify.Residual(
                    "evi", w, 1e-9, {"component": j, "step": h, "sweeps": len(check_at),
                                     "samples": evi_samples}))
        if record:
            trace.table.append({"n": n, "step": h, "displacement": space.distance(x, y)})
    trace.final = y
    return y, trace


# -- resolvent of a nonexpansive family -----------------------------------------

def _noise_scale(x) -> float:
    if isinstance(x, SpiderPoint):
        return 1.0 + x.radius
    return 1.0 + float(np.max(np.abs(x)))


def fixed_point_iteration(F: Callable, x, lam: float, rho: float, space: Space,
                          tol: float = 1e-10, max_iter: int = 10_000_000):
    """Banach iteration for ``y = geodesic_point(x, F(y), q)`` from ``y_0 = x``.

    Stops once the step is at most ``tol (1 - q) / q``, which bounds the
    distance to the fixed point by ``tol``. When that threshold is below the
    rounding level of the iterates, the rounding level is used instead.

    Returns
    -------
    (point, iterations, last step)
    """
    if not (lam > 0 and rho > 0):
        raise ValueError("lam and rho must be > 0")
    r = lam / rho
    q = r / (1.0 + r)
    threshold = max(tol * (1.0 - q) / q, 8 * _EPS * _noise_scale(x))
    geo = space.geodesic_point
    dist = space.distance
    y = x
    disp = math.inf
    for it in range(1, max_iter + 1):
        z = geo(x, F(y), q)
        disp = dist(y, z)
        y = z
        if disp <= threshold:
            return y, it, disp
    raise ConvergenceError("fixed-point iteration budget exceeded", disp)


def resolvent_of_family(family: Callable, lam: float, rho: float, x, space: Space,
                        params: FlowParams | None = None):
    """``R_{lam,rho} x`` for a nonexpansive family ``family(rho, y)``."""
    params = params or FlowParams()
    y, _, _ = fixed_point_iteration(lambda z: family(rho, z), x, lam, rho, space,
                                    params.fixed_point_tol, params.max_iter)
    return y


def default_rho_schedule(lam: float, m_max: int = 14) -> list[float]:
    return [lam * 2.0 ** (-m) for m in range(1, m_max + 1)]


def _reference_prox(obj: SplitObjective, lam, x, resolution):
    if len(obj) == 1:
        return obj.functionals[0].prox(lam, x)
    return brute_force_prox(obj, lam, x, resolution)


def _study_cell(args):
    obj, mode, lam, x, rho, params = args
    space = obj.space
    if mode == "resolvents":
        chain_map = resolvent_product(obj, rho)
    else:
        chain_map = semigroup_product(obj, rho, params.n_inner, params.fallback)
    y, iters, disp = fixed_point_iteration(lambda z: chain_map(z)[-1], x, lam, rho, space,
                                           params.fixed_point_tol, params.max_iter)
    return chain_map(y), iters, disp


def resolvent_convergence_study(obj, mode: str, lam: float, x,
                                rho_schedule: Sequence[float] | None = None,
                                reference=None, params: FlowParams | None = None,
                                executor=None, resolution: float = 1e-7):
    """Tabulate ``d(R_{lam,rho} x, J_lam x)`` along ``rho_schedule``.

    ``F_rho`` is the resolvent sweep (``mode="resolvents"``) or the projected
    semigroup sweep (``mode="semigroups"``). ``J_lam x`` is the closed-form
    prox for one term and a brute-force grid prox of the sum otherwise,
    unless ``reference`` is given. Cells are independent and may be mapped
    over ``executor``; table order follows the schedule.

    Returns
    -------
    FlowTrace
        ``scheme="study"``; one chain ``[x_0(rho), ..., x_k(rho)]`` per rho,
        coupling residuals in ``residuals`` and the table in ``table``.
    """
    if mode not in ("resolvents", "semigroups"):
        raise ValueError(f"unknown mode {mode!r}")
    if not lam > 0:
        raise ValueError("lam must be > 0")
    obj = _as_objective(obj)
    params = params or FlowParams()
    rhos = list(rho_schedule) if rho_schedule is not None else default_rho_schedule(lam)
    if reference is None:
        reference = _reference_prox(obj, lam, x, resolution)
    space = obj.space
    cells = [(obj, mode, lam, x, rho, params) for rho in rhos]
    results = list(executor.map(_study_cell, cells)) if executor is not None else [_study_cell(c) for c in cells]
    trace = FlowTrace("study", mode, obj, x)
    trace.flags["lambda"] = lam
    trace.flags["reference"] = reference
    worst = {}
    for rho, (chain, iters, disp) in zip(rhos, results):
        trace.chains.append(chain)
        trace.chain_steps.append(rho)
        trace.points.append(chain[0])
        trace.objective_values.append(obj.eval(chain[0]))
        sub = FlowTrace("study", mode, obj, x, chains=[chain], chain_steps=[rho])
        res = {r.name: r for r in certify.check_coupling(sub, x, lam)}
        for name, r in res.items():
            worst[name] = max(worst.get(name, -math.inf), r.value)
        limit = sum(space.distance(a, b) ** 2 for a, b in zip(chain, chain[1:]))
        trace.table.append({
            "rho": rho,
            "distance": space.distance(chain[0], reference),
            "iterations": iters,
            "eq1": res["coupling_eq1"].value,
            "eq2": res["coupling_eq2"].value,
            "convcomb": res["convcomb"].value,
            "limit_sum": limit,
        })
    for name in ("coupling_eq1", "coupling_eq2", "convcomb"):
        trace.residuals.append(certify.Residual(name, worst[name], 1e-8, {"cells": len(rhos)}))
    trace.final = trace.chains[-1][0]
    return trace
