"""Implementations of the ``mean``, ``median``, ``flow`` and ``verify`` commands.

Each ``cmd_*`` takes a :class:`RunConfig` and returns ``(Report, exit_status)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import certify
from ..flows import (
    FlowParams, SplitObjective, iterate_resolvent, lie_trotter_resolvents,
    lie_trotter_semigroups, resolvent_convergence_study, semigroup,
)
from ..functionals import ConvergenceError, DistancePower, catalogue
from ..spaces import SPD, ClosedBall, Euclidean, GeodesicSegment, Hyperbolic, Space, Spider, make_space
from .parsing import parse_objective, parse_point, read_cloud
from .report import Report, fmt, residual_row

EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGENCE, EXIT_CERTIFICATION = 0, 1, 2, 3


@dataclass(frozen=True)
class RunConfig:
    command: str
    space: str = "euclidean"
    dim: int | None = None
    rays: int | None = None
    input: str | None = None
    t: float = 1.0
    n: int | None = None
    adaptive: bool = False
    tol: float = 1e-6
    lam: float = 1.0
    mode: str = "resolvents"
    seed: int = 42
    output: str | None = None
    rho_steps: int = 0
    samples: int = 200
    max_sweeps: int = 20_000_000
    max_exponent: int = 16

    def make_space(self) -> Space:
        return make_space(self.space, self.dim, self.rays)

    def params(self) -> FlowParams:
        return FlowParams(t=self.t, n=None if self.adaptive else self.n, tol=self.tol,
                          max_exponent=self.max_exponent, seed=self.seed)


def _space_label(space) -> str:
    if isinstance(space, (Euclidean, SPD)):
        return f"{space.kind}({space.n})"
    if isinstance(space, Spider):
        return f"spider({space.k})"
    return space.kind


# -- mean / median ----------------------------------------------------------------

def flow_to_minimizer(obj: SplitObjective, x0, tol: float, max_sweeps: int, h0: float = 0.5):
    """Run resolvent splitting flows to large time with a shrinking step.

    At each step size ``h`` the flow restarts from its current endpoint for
    doubling times (``t = 1, 2, 4, ...`` on the first level, from ``t = 1/2``
    afterwards) until a restart moves less than ``tol / 4`` and less than
    the previous one. The splitting bias is O(h): with ``r`` the ratio of
    consecutive steps and ``shift`` the move between their endpoints, the
    distance to the minimizer is estimated as ``shift / (r - 1)``. The loop
    stops when that estimate is at most ``tol``; otherwise the next step is
    chosen so the predicted bias is ``0.8 tol`` (shrinking by 2 to 16).

    Returns
    -------
    (point, table rows, converged, final step, total sweeps)
    """
    space = obj.space
    x = x0
    h = h0
    t0 = 1.0
    total = 0
    rows = []
    prev_level = prev_h = None
    while True:
        n = max(1, math.ceil(t0 / h))
        last = math.inf
        while True:
            y, _ = lie_trotter_resolvents(obj, n * h, n, x, record=False)
            disp = space.distance(x, y)
            total += n
            rows.append([h, n * h, n, disp, obj.eval(y)])
            x = y
            if disp <= tol / 4 and disp <= last:
                break
            if total >= max_sweeps:
                return x, rows, False, h, total
            last = disp
            n *= 2
        if prev_level is None:
            h_next = h / 4
        else:
            est = space.distance(prev_level, x) / (prev_h / h - 1.0)
            if est <= tol:
                return x, rows, True, h, total
            h_next = min(h / 2, max(h / 16, 0.8 * tol * h / est))
        if total >= max_sweeps:
            return x, rows, False, h, total
        prev_level, prev_h = x, h
        h = h_next
        t0 = 0.5


def _cloud_objective(cloud, power):
    return SplitObjective(tuple(DistancePower(cloud.space, a, weight=w, power=power)
                                for a, w in zip(cloud.points, cloud.weights)))


def _minimize_command(config: RunConfig, power: int):
    name = "mean" if power == 2 else "median"
    space = config.make_space()
    cloud = read_cloud(config.input, space)
    obj = _cloud_objective(cloud, power)
    start = min(cloud.points, key=obj.eval)
    x, rows, converged, h, total = flow_to_minimizer(obj, start, config.tol, config.max_sweeps)

    rep = Report(f"{'Frechet mean' if power == 2 else 'geometric median'} ({_space_label(space)})")
    rep.add("command", name)
    rep.add("space", _space_label(space))
    rep.add("points", len(cloud.points))
    rep.add("tol", float(config.tol))
    rep.add("result", space.format_point(x))
    rep.add("objective", float(obj.eval(x)))
    rep.add("final_step", float(h))
    rep.add("sweeps", total)
    rep.add("converged", converged)
    status = EXIT_OK if converged else EXIT_NONCONVERGENCE

    if isinstance(space, Euclidean) and power == 2:
        w = np.asarray(cloud.weights)
        mean = np.sum(w[:, None] * np.array(cloud.points), axis=0)
        gap = space.distance(mean, x)
        rep.add("arithmetic_mean", space.format_point(mean))
        rep.add("cross_check_distance", float(gap))
        if gap > 10 * config.tol and status == EXIT_OK:
            status = EXIT_CERTIFICATION
    rep.table("table", ["step", "t", "sweeps", "displacement", "objective"], rows)

    # certify a short recorded run at the final step
    _, tr = lie_trotter_resolvents(obj, 64 * h, 64, x)
    for j, a in enumerate(cloud.points):
        rep.residuals.append(residual_row(certify.check_summed_estimate(tr, a), f"v=point{j}"))
    if status == EXIT_OK and not all(r["passed"] for r in rep.residuals):
        status = EXIT_CERTIFICATION
    return rep, status


def cmd_mean(config: RunConfig):
    """Weighted Frechet mean of a point cloud."""
    return _minimize_command(config, 2)


def cmd_median(config: RunConfig):
    """Weighted geometric (Fermat-Weber) median of a point cloud."""
    return _minimize_command(config, 1)


# -- flow ---------------------------------------------------------------------------

def _doubling(run, space, params):
    """Run ``run(n)`` for n = 2, 4, ... until successive results are within tol."""
    prev, _ = run(1)
    rows = []
    for e in range(1, params.max_exponent + 1):
        n = 2 ** e
        y, tr = run(n)
        disp = space.distance(prev, y)
        rows.append([n, disp])
        if disp <= params.tol:
            return y, tr, rows, True
        prev = y
    return y, tr, rows, False


def cmd_flow(config: RunConfig):
    """Run one of the flow schemes on an objective file."""
    space = config.make_space()
    obj, start = parse_objective(config.input, space)
    if start is None:
        raise ValueError(f"{config.input}: objective file needs a 'start <point>' line")
    params = config.params()
    t = config.t
    rng = np.random.default_rng(config.seed)
    rep = Report(f"flow ({config.mode}, {_space_label(space)})")
    rep.add("command", "flow")
    rep.add("space", _space_label(space))
    rep.add("mode", config.mode)
    rep.add("objective", obj.describe())
    rep.add("start", space.format_point(start))
    rep.add("t", float(t))
    rep.add("n", "adaptive" if params.n is None else params.n)
    rep.add("tol", float(params.tol))
    rep.add("seed", config.seed)

    converged = True
    rows = []
    final = start
    if config.mode == "proximal-point":
        if len(obj) != 1:
            raise ValueError("proximal-point mode needs an objective with a single functional")
        f = obj.functionals[0]
        if t > 0:
            if params.n is not None:
                final = iterate_resolvent(f, t, params.n, start)
                rows = [[params.n, math.nan]]
            else:
                final, _, rows, converged = _doubling(
                    lambda n: (iterate_resolvent(f, t, n, start), None), space, params)
            for i in range(config.samples):
                v = f.sample_domain(rng)
                rep.residuals.append(residual_row(certify.check_evi(f, t, start, v, final), f"v{i}"))
            exact = f.exact_semigroup(t, start) if f.has_exact_semigroup else None
            if exact is not None:
                rep.add("closed_form", space.format_point(exact))
                rep.add("closed_form_distance", float(space.distance(exact, final)))
        rep.table("table", ["n", "displacement"], rows)
    elif config.mode in ("resolvents", "semigroups"):
        if config.mode == "resolvents":
            def run(n):
                return lie_trotter_resolvents(obj, t, n, start)
        else:
            def run(n):
                return lie_trotter_semigroups(obj, t, n, start, n_inner=params.n_inner,
                                              fallback=params.fallback, evi_samples=min(config.samples, 50),
                                              seed=config.seed)
        tr = None
        if t > 0:
            if params.n is not None:
                final, tr = run(params.n)
                rows = [[params.n, math.nan]]
            else:
                final, tr, rows, converged = _doubling(run, space, params)
            for r in tr.residuals:
                rep.residuals.append(residual_row(r, f"component{r.context.get('component', '')}"))
            for i in range(config.samples):
                v = obj.sample_domain(rng)
                rep.residuals.append(residual_row(certify.check_summed_estimate(tr, v), f"v{i}"))
            if config.mode == "semigroups":
                rep.add("approximate_components", ";".join(map(str, tr.flags["approximate_components"])) or "none")
                rep.add("locally_compact", ";".join(fmt(b) for b in tr.flags["locally_compact"]))
        rep.table("table", ["n", "displacement"], rows)
        if tr is not None:
            step = max(1, len(tr.points) // 64)
            sweeps = [[i, tr.objective_values[i]] for i in range(0, len(tr.points), step)]
            rep.table("sweeps", ["sweep", "objective"], sweeps)
        if config.rho_steps > 0:
            _study_section(rep, obj, config, start, rng)
    else:
        raise ValueError(f"unknown mode {config.mode!r}")

    rep.add("final", space.format_point(final))
    rep.add("final_objective", float(obj.eval(final)))
    rep.add("converged", converged)
    if not converged:
        return rep, EXIT_NONCONVERGENCE
    if not all(r["passed"] for r in rep.residuals):
        return rep, EXIT_CERTIFICATION
    return rep, EXIT_OK


def _study_section(rep, obj, config, x, rng):
    lam = config.lam
    rhos = [lam * 2.0 ** (-m) for m in range(1, config.rho_steps + 1)]
    study = resolvent_convergence_study(obj, config.mode, lam, x, rhos)
    cols = ["rho", "distance", "iterations", "eq1", "eq2", "convcomb", "limit_sum"]
    rep.table("study", cols, [[row[c] for c in cols] for row in study.table])
    for r in study.residuals:
        rep.residuals.append(residual_row(r, "study"))
    for i in range(min(config.samples, 20)):
        v = obj.sample_domain(rng)
        rep.residuals.append(residual_row(certify.check_summed_estimate(study, v), f"study v{i}"))
        rep.residuals.append(residual_row(certify.check_key_estimate(study, x, lam, v), f"study v{i}"))


# -- verify -------------------------------------------------------------------------

def default_verify_spaces() -> list[Space]:
    return [Euclidean(1), Euclidean(2), Spider(3), SPD(2), Hyperbolic()]


def _run_check(lines, name, where, fn):
    try:
        r = fn()
        lines.append({"name": name, "where": where, "value": float(r.value),
                      "tol": float(r.tol), "passed": bool(r.passed)})
    except Exception as exc:  # failures are reported, not raised
        lines.append({"name": name, "where": f"{where} error={type(exc).__name__}: {exc}",
                      "value": math.nan, "tol": math.nan, "passed": False})


def _max_of(name, tol, values):
    return certify.Residual(name, max(values), tol)


def _space_suite(space, seed, samples, lines):
    label = _space_label(space)
    rng = np.random.default_rng([seed, 1])

    def cat0():
        vals = []
        for _ in range(samples):
            x, p, q = (space.random_point(rng) for _ in range(3))
            vals.append(certify.check_cat0(space, x, p, q, float(rng.uniform())).value)
        return _max_of("cat0", 1e-9, vals)

    _run_check(lines, "cat0", f"{label} seed={seed}", cat0)

    sets = [ClosedBall(space.random_point(rng, 0.5), 1.0),
            GeodesicSegment(space.random_point(rng), space.random_point(rng))]
    for cset in sets:
        def pyth(cset=cset):
            vals = []
            for _ in range(samples):
                x = space.random_point(rng, 2.0)
                y = space.sample_set(cset, rng)
                vals.append(certify.check_pythagorean(space, cset, x, y).value)
            return _max_of("pythagorean", 1e-9, vals)
        _run_check(lines, "pythagorean", f"{label} {type(cset).__name__} seed={seed}", pyth)
        _run_check(lines, "nonexpansive", f"{label} project {type(cset).__name__} seed={seed}",
                   lambda cset=cset: certify.check_nonexpansive(
                       lambda z: space.project(cset, z), space, samples, seed))

    for f in catalogue(space, np.random.default_rng([seed, 2])):
        fw = f"{label} {type(f).__name__.lower()} seed={seed}"
        _run_check(lines, "convexity", fw, lambda f=f: certify.check_convexity(f, samples, seed))
        _run_check(lines, "lower_bound", fw,
                   lambda f=f: certify.check_lower_bound(f, space.origin(), 3.0, samples, seed))
        for lam in (0.01, 0.1, 1.0, 10.0):
            fl = f"{fw} lambda={lam}"
            _run_check(lines, "nonexpansive", fl,
                       lambda f=f, lam=lam: certify.check_nonexpansive(
                           lambda z: f.prox(lam, z), space, samples, seed, tol=1e-9 + 2 * f.prox_tol))

            def resolvent(f=f, lam=lam):
                g = np.random.default_rng([seed, 3])
                vals = []
                for _ in range(samples):
                    x = space.random_point(g, 2.0)
                    v = f.sample_domain(g)
                    r = certify.check_resolvent_inequality(f, lam, x, v)
                    vals.append(r.value)
                return certify.Residual("resolvent", max(vals), r.tol)
            _run_check(lines, "resolvent", fl, resolvent)
        if f.has_exact_semigroup:
            def evi(f=f):
                g = np.random.default_rng([seed, 4])
                vals = []
                for _ in range(samples):
                    x = f.sample_domain(g)
                    t = float(g.choice([0.1, 1.0, 5.0]))
                    vals.append(certify.check_evi(f, t, x, f.sample_domain(g), f.exact_semigroup(t, x)).value)
                return _max_of("evi", 1e-9, vals)
            _run_check(lines, "evi", fw, evi)


def _trace_suite(seed, samples, lines):
    E = Euclidean(1)
    P = lambda v: np.array([float(v)])
    obj = SplitObjective((DistancePower(E, P(-1.0)), DistancePower(E, P(1.0))))
    rng = np.random.default_rng([seed, 5])
    x = P(3.0)
    for mode in ("resolvents", "semigroups"):
        where = f"euclidean(1) two-anchor {mode} seed={seed}"
        try:
            study = resolvent_convergence_study(obj, mode, 1.0, x, [2.0 ** (-m) for m in range(1, 9)])
            _, sweeps = (lie_trotter_resolvents(obj, 0.5, 256, x) if mode == "resolvents"
                         else lie_trotter_semigroups(obj, 0.5, 256, x, evi_samples=5, seed=seed))
        except Exception as exc:
            lines.append({"name": "summed_estimate", "where": f"{where} error={exc}",
                          "value": math.nan, "tol": math.nan, "passed": False})
            continue
        for r in study.residuals:
            lines.append(residual_row(r, where))
        vs = [obj.sample_domain(rng, 3.0) for _ in range(min(samples, 50))]
        _run_check(lines, "summed_estimate", where + " sweeps",
                   lambda: _max_of("summed_estimate", 1e-8, [certify.check_summed_estimate(sweeps, v).value for v in vs]))
        _run_check(lines, "summed_estimate", where + " study",
                   lambda: _max_of("summed_estimate", 1e-8, [certify.check_summed_estimate(study, v).value for v in vs]))
        _run_check(lines, "key_estimate", where + " study",
                   lambda: _max_of("key_estimate", 1e-8, [certify.check_key_estimate(study, x, 1.0, v).value for v in vs]))


def cmd_verify(config: RunConfig, spaces: list[Space] | None = None):
    """Run the certification suites; exit status 0 iff every check passes."""
    lines: list = []
    for space in (spaces if spaces is not None else default_verify_spaces()):
        _space_suite(space, config.seed, config.samples, lines)
    if spaces is None:
        _trace_suite(config.seed, config.samples, lines)
    rep = Report("certification suite")
    rep.add("command", "verify")
    rep.add("seed", config.seed)
    rep.add("samples", config.samples)
    rep.add("checks", len(lines))
    rep.add("families", ";".join(sorted({ln["name"] for ln in lines})))
    failed = sum(not ln["passed"] for ln in lines)
    rep.add("failed", failed)
    rep.residuals = lines
    return rep, (EXIT_OK if failed == 0 else EXIT_CERTIFICATION)


COMMANDS = {"mean": cmd_mean, "median": cmd_median, "flow": cmd_flow, "verify": cmd_verify}
