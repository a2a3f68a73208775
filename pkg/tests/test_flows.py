from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hadamard_flows import certify
from hadamard_flows.flows import (
    FlowParams, SplitObjective, fixed_point_iteration, iterate_resolvent,
    lie_trotter_resolvents, lie_trotter_semigroups, resolvent_convergence_study,
    resolvent_of_family, resolvent_product, semigroup, semigroup_product,
)
from hadamard_flows.functionals import (
    Busemann, Displacement, DistancePower, Functional, Indicator, brute_force_prox,
)
from hadamard_flows.spaces import (
    SPD, ClosedBall, Euclidean, Hyperbolic, Spider, SpiderPoint, SubSpider,
)

from conftest import P

E1, E2 = Euclidean(1), Euclidean(2)
S = SpiderPoint


class HiddenSemigroup(Functional):
    """Delegates to ``f`` but hides its closed-form semigroup."""

    def __init__(self, f):
        self.f = f
        self.space = f.space

    def eval(self, x):
        return self.f.eval(x)

    def _prox(self, lam, x):
        return self.f.prox(lam, x)


def two_anchor():
    return SplitObjective.of(DistancePower(E1, P(-1.0)), DistancePower(E1, P(1.0)))


# -- iterated resolvent -------------------------------------------------------------------

def test_iterate_resolvent_examples():
    f = DistancePower(E1, P(0.0))
    # oracle: u(t) = max(x - t, 0) for x > 0
    assert abs(iterate_resolvent(f, 1.0, 2 ** 12, P(3.0))[0] - 2.0) <= 1e-3
    g = DistancePower(E1, P(1.0), power=2)
    assert iterate_resolvent(g, 1.0, 1, P(0.0))[0] == pytest.approx(2 / 3, abs=1e-15)
    x = P(0.7)
    assert iterate_resolvent(g, 0.0, 10, x) is x
    with pytest.raises(ValueError):
        iterate_resolvent(g, 1.0, 0, x)
    with pytest.raises(ValueError):
        iterate_resolvent(g, -1.0, 3, x)


def test_iterate_resolvent_rejects_sums():
    with pytest.raises(ValueError):
        iterate_resolvent(two_anchor(), 1.0, 4, P(3.0))
    single = SplitObjective.of(DistancePower(E1, P(0.0)))
    assert iterate_resolvent(single, 1.0, 4, P(3.0))[0] == pytest.approx(2.0)


# -- semigroup ------------------------------------------------------------------------------

def test_semigroup_uses_closed_form():
    f = DistancePower(E1, P(1.0), power=2)
    y, tr = semigroup(f, 0.5, P(0.0), FlowParams(tol=1e-6))
    assert tr.flags["exact"]
    assert abs(y[0] - f.exact_semigroup(0.5, P(0.0))[0]) <= 1e-6
    assert tr.passed


def test_semigroup_doubling_matches_closed_form():
    f = DistancePower(E1, P(1.0), power=2)
    y, tr = semigroup(HiddenSemigroup(f), 1.0, P(0.0), FlowParams(tol=1e-5, max_exponent=20))
    assert not tr.flags["exact"]
    assert tr.converged
    ns = [row["n"] for row in tr.table]
    assert ns == [2 ** e for e in range(1, len(ns) + 1)]
    assert tr.table[-1]["displacement"] <= 1e-5
    assert abs(y[0] - f.exact_semigroup(1.0, P(0.0))[0]) <= 2e-5
    assert tr.passed


def test_semigroup_reports_nonconvergence():
    f = DistancePower(E1, P(1.0), power=2)
    y, tr = semigroup(HiddenSemigroup(f), 1.0, P(0.0), FlowParams(tol=1e-12, max_exponent=4))
    assert not tr.converged
    assert len(tr.table) == 4
    assert np.isfinite(y).all()


def test_semigroup_zero_time_and_minimizer():
    f = DistancePower(E1, P(0.0))
    x = P(3.0)
    y, tr = semigroup(f, 0.0, x)
    assert y is x
    y, tr = semigroup(f, 5.0, x, FlowParams(tol=1e-6))
    assert abs(y[0]) <= 1e-6
    assert tr.passed


@pytest.mark.parametrize("space", [E2, Spider(3), SPD(2), Hyperbolic()], ids=lambda s: s.kind)
def test_semigroup_evi(space, rng):
    a = space.random_point(rng)
    for p in (1, 2):
        f = DistancePower(space, a, weight=1.3, power=p)
        for t in (0.1, 1.0, 5.0):
            x = space.random_point(rng, 2.0)
            _, tr = semigroup(f, t, x, FlowParams(evi_samples=50, seed=3))
            (res,) = tr.residuals
            assert res.name == "evi" and res.passed


def test_semigroup_evi_fallback_path(rng):
    H = Hyperbolic()
    b = Busemann(H)
    y, tr = semigroup(b, 0.5, P(0.2, 1.0), FlowParams(tol=1e-4, max_exponent=12, evi_samples=20))
    assert tr.converged and tr.passed
    assert H.distance(y, P(0.2, math.exp(0.5))) <= 1e-3


# -- splitting by resolvents ----------------------------------------------------------------

def test_resolvent_splitting_two_anchor():
    y, tr = lie_trotter_resolvents(two_anchor(), 0.5, 2 ** 12, P(3.0))
    assert abs(y[0] - 2.0) <= 1e-2
    assert len(tr.points) == 2 ** 12 + 1
    assert len(tr.chains) == 2 ** 12 and all(len(c) == 3 for c in tr.chains)
    assert tr.chain_steps[0] == pytest.approx(0.5 / 2 ** 12)
    assert tr.objective_values[0] == 6.0


def test_single_factor_reduces_to_iterated_resolvent():
    f = DistancePower(E1, P(1.0), power=2)
    y, _ = lie_trotter_resolvents(SplitObjective.of(f), 1.3, 50, P(-2.0))
    assert y[0] == iterate_resolvent(f, 1.3, 50, P(-2.0))[0]


def test_spider_median_flow():
    sp = Spider(3)
    obj = SplitObjective(tuple(DistancePower(sp, S(j, 1.0)) for j in range(3)))
    # brute-force minimizer of the sum over a fine per-ray grid
    cands = [S(r, s) for r in range(3) for s in np.linspace(0, 2, 2001)]
    grid_best = min(cands, key=obj.eval)
    y, _ = lie_trotter_resolvents(obj, 5.0, 2 ** 12, S(0, 1.0), record=False)
    assert sp.distance(y, grid_best) <= 1e-2
    assert sp.distance(y, sp.origin()) <= 1e-2


def test_zero_time_echoes_start():
    x = P(3.0)
    y, tr = lie_trotter_resolvents(two_anchor(), 0.0, 8, x)
    assert y is x and tr.chains == [] and tr.table == []
    y, tr = lie_trotter_semigroups(two_anchor(), 0.0, 8, x)
    assert y is x and tr.chains == []


@pytest.mark.parametrize("space", [Euclidean(1), Euclidean(3), SPD(2), SPD(3)], ids=lambda s: f"{s.kind}{s.n}")
def test_compiled_sweeps_match_generic(space, rng):
    obj = SplitObjective(tuple(DistancePower(space, space.random_point(rng), weight=float(rng.uniform(0.2, 2)),
                                             power=int(rng.integers(1, 3))) for _ in range(4)))
    x = space.random_point(rng)
    fast, _ = lie_trotter_resolvents(obj, 2.0, 300, x, record=False)
    slow, _ = lie_trotter_resolvents(obj, 2.0, 300, x, record=True)
    if isinstance(space, Euclidean):
        assert np.array_equal(fast, slow)
    else:
        assert space.distance(fast, slow) <= 1e-10


# -- splitting by semigroups ----------------------------------------------------------------

def test_semigroup_splitting_two_anchor():
    a, _ = lie_trotter_resolvents(two_anchor(), 0.5, 2 ** 12, P(3.0), record=False)
    b, tr = lie_trotter_semigroups(two_anchor(), 0.5, 2 ** 12, P(3.0), evi_samples=10)
    assert abs(b[0] - 2.0) <= 1e-2
    assert abs(a[0] - b[0]) <= 1e-2
    assert tr.flags["approximate_components"] == []
    assert tr.flags["locally_compact"] == [True, True]
    assert all(r.name == "evi" and r.passed for r in tr.residuals)


def test_constrained_semigroup_splitting():
    obj = SplitObjective.of(Indicator(E2, ClosedBall(P(0, 0), 1.0)), DistancePower(E2, P(3, 0), power=2))
    # the constrained flow reaches the boundary at t = ln(1.5) / 2; each sweep ends
    # with a free step of length O(t/n) off the ball
    y, tr = lie_trotter_semigroups(obj, 2.0, 2 ** 10, P(0, 0), evi_samples=20)
    # oracle: the ball point nearest to (3, 0)
    assert E2.distance(y, P(1, 0)) <= 1e-2
    assert tr.passed


def test_whole_space_projection_is_identity(rng):
    obj = SplitObjective.of(DistancePower(E2, P(1, 1)), DistancePower(E2, P(-1, 2), power=2))
    chain = semigroup_product(obj, 0.1)
    for _ in range(20):
        y = E2.random_point(rng)
        z = obj.functionals[1].exact_semigroup(0.1, obj.functionals[0].exact_semigroup(0.1, y))
        assert np.array_equal(chain(y)[-1], z)


def test_semigroup_splitting_flags_fallback():
    obj = SplitObjective.of(DistancePower(E2, P(1, 1)), Displacement(E2, np.eye(2)[::-1], P(0, 0)))
    y, tr = lie_trotter_semigroups(obj, 0.5, 16, P(2, 0), n_inner=8, evi_samples=5)
    assert tr.flags["approximate_components"] == [1]
    with pytest.raises(ValueError):
        lie_trotter_semigroups(obj, 0.5, 16, P(2, 0), fallback=False)


def test_local_compactness_flag_is_recorded():
    from hadamard_flows.functionals import DomainInfo
    from hadamard_flows.spaces import WholeSpace
    f = DistancePower(E1, P(0.0))
    obj = SplitObjective(((f, DomainInfo(WholeSpace(), locally_compact=False)),))
    _, tr = lie_trotter_semigroups(obj, 1.0, 4, P(2.0))
    assert tr.flags["locally_compact"] == [False]
    assert tr.flags["local_compactness_hypothesis"] is False


@pytest.mark.parametrize("space", [E2, Spider(3), SPD(2), Hyperbolic()], ids=lambda s: s.kind)
def test_sweep_maps_are_nonexpansive(space, rng):
    cset = ClosedBall(space.random_point(rng, 0.5), 1.0)
    obj = SplitObjective.of(DistancePower(space, space.random_point(rng)),
                            Indicator(space, cset),
                            DistancePower(space, space.random_point(rng), power=2))
    for rho in (0.05, 0.7):
        for name, chain in (("resolvents", resolvent_product(obj, rho)),
                            ("semigroups", semigroup_product(obj, rho))):
            r = certify.check_nonexpansive(lambda y: chain(y)[-1], space, pairs=200, seed=7)
            assert r.passed, (name, rho, r.value)


def test_splittings_agree_as_n_doubles():
    obj = SplitObjective.of(Indicator(E1, ClosedBall(P(0.5), 2.0)), DistancePower(E1, P(-1.0), weight=0.7),
                            DistancePower(E1, P(2.0), power=2))
    gaps = []
    for e in (6, 8, 10, 12):
        a, _ = lie_trotter_resolvents(obj, 0.3, 2 ** e, P(3.0), record=False)
        b, _ = lie_trotter_semigroups(obj, 0.3, 2 ** e, P(3.0), evi_samples=0, record=False)
        gaps.append(abs(a[0] - b[0]))
    assert gaps[-1] <= 1e-2
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


# -- resolvent of a family ------------------------------------------------------------------

def test_resolvent_of_identity_family():
    x = P(1.5, -2.0)
    y = resolvent_of_family(lambda rho, z: z, 1.0, 0.3, x, E2)
    assert E2.distance(x, y) <= 1e-10


def test_resolvent_of_constant_family():
    c = P(4.0)
    for x in (P(0.0), P(-3.0), P(10.0)):
        y = resolvent_of_family(lambda rho, z: c, 1.0, 1.0, x, E1)
        assert abs(y[0] - (x[0] + 4.0) / 2) <= 1e-10


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 5), st.floats(0.05, 5), st.floats(-5, 5), st.floats(0.0, 0.99))
def test_banach_iteration_count_bound(lam, rho, x, contraction):
    # F(y) = c y + 1 is a contraction, so the composed map contracts at rate <= q
    F = lambda z: contraction * z + 1.0
    tol = 1e-10
    y, iters, _ = fixed_point_iteration(F, P(x), lam, rho, E1, tol=tol)
    q = (lam / rho) / (1 + lam / rho)
    bound = math.log(tol) / math.log(q) + 2
    assert iters <= bound + 1
    # exact fixed point of y = (1 - q) x + q (c y + 1)
    exact = ((1 - q) * x + q) / (1 - q * contraction)
    assert abs(y[0] - exact) <= 1e-10 * (1 + abs(exact)) + 1e-9


def test_fixed_point_budget():
    from hadamard_flows.functionals import ConvergenceError
    with pytest.raises(ConvergenceError):
        fixed_point_iteration(lambda z: z + 1.0, P(0.0), 100.0, 0.01, E1, max_iter=5)


# -- convergence study ------------------------------------------------------------------------

def test_study_single_term_closed_form():
    f = DistancePower(E1, P(1.0), power=2)
    tr = resolvent_convergence_study(SplitObjective.of(f), "resolvents", 1.0, P(3.0))
    dists = [row["distance"] for row in tr.table]
    assert len(dists) == 14
    assert all(b < a for a, b in zip(dists, dists[1:]))
    assert dists[-1] <= 1e-4
    assert all(r.passed for r in tr.residuals)
    assert [row["rho"] for row in tr.table] == [2.0 ** -m for m in range(1, 15)]


def test_study_two_anchor_against_brute_force():
    obj = two_anchor()
    ref = brute_force_prox(obj, 1.0, P(3.0), 1e-7)
    assert ref[0] == pytest.approx(1.0, abs=1e-6)
    tr = resolvent_convergence_study(obj, "resolvents", 1.0, P(3.0), [2.0 ** -m for m in range(1, 12)])
    assert tr.table[-1]["distance"] <= 1e-3
    for row in tr.table:
        assert row["eq1"] <= 1e-8 and row["eq2"] <= 1e-8 and row["convcomb"] <= 1e-8
    assert tr.table[-1]["limit_sum"] <= 1e-4


def test_study_semigroup_mode_and_executor():
    obj = SplitObjective.of(DistancePower(E1, P(-1.0)), DistancePower(E1, P(2.0), power=2))
    rhos = [2.0 ** -m for m in range(1, 8)]
    serial = resolvent_convergence_study(obj, "semigroups", 0.5, P(3.0), rhos)
    with ThreadPoolExecutor(2) as ex:
        par = resolvent_convergence_study(obj, "semigroups", 0.5, P(3.0), rhos, executor=ex)
    assert serial.table == par.table
    assert [c[0][0] for c in serial.chains] == [c[0][0] for c in par.chains]
    assert all(r.passed for r in serial.residuals)


def test_study_convcomb_identity():
    obj = two_anchor()
    lam = 1.0
    tr = resolvent_convergence_study(obj, "resolvents", lam, P(3.0), [0.5, 0.125])
    for chain, rho in zip(tr.chains, tr.chain_steps):
        r = lam / rho
        want = E1.geodesic_point(P(3.0), chain[-1], r / (1 + r))
        assert E1.distance(chain[0], want) <= 1e-10


def test_study_rejects_bad_mode():
    with pytest.raises(ValueError):
        resolvent_convergence_study(two_anchor(), "strang", 1.0, P(3.0), [0.5])


def test_flow_params_validation():
    with pytest.raises(ValueError):
        FlowParams(tol=0.0)
    with pytest.raises(ValueError):
        FlowParams(t=-1.0)
    with pytest.raises(ValueError):
        FlowParams(n=0)


def test_split_objective_contract(rng):
    with pytest.raises(ValueError):
        SplitObjective(())
    with pytest.raises(ValueError):
        SplitObjective.of(DistancePower(E1, P(0.0)), DistancePower(E2, P(0.0, 0.0)))
    sp = Spider(3)
    obj = SplitObjective.of(DistancePower(sp, S(1, 1.0)), Indicator(sp, SubSpider(frozenset({1}))))
    for _ in range(20):
        assert obj.in_domain(obj.sample_domain(rng))
    assert obj.eval(S(2, 1.0)) == math.inf
