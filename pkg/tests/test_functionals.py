from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize, minimize_scalar

from hadamard_flows.flows import SplitObjective, iterate_resolvent
from hadamard_flows.functionals import (
    Busemann, ConvergenceError, Displacement, DistancePower, Indicator,
    brute_force_prox, catalogue,
)
from hadamard_flows.spaces import (
    SPD, ClosedBall, Euclidean, GeodesicSegment, Hyperbolic, Spider, SpiderPoint, SubSpider,
)

from conftest import ALL_SPACES, P, space_id

E1, E2 = Euclidean(1), Euclidean(2)
RES = 1e-4


# -- evaluation --------------------------------------------------------------------------

def test_eval_examples():
    assert DistancePower(E1, P(4), weight=0.5, power=1).eval(P(0)) == 2.0
    assert Indicator(E2, ClosedBall(P(0, 0), 1.0)).eval(P(3, 0)) == math.inf
    assert Indicator(E2, ClosedBall(P(0, 0), 1.0)).eval(P(0.5, 0)) == 0.0


def test_euclidean_busemann_matches_ray_limit():
    u, x = P(1, 0), P(2, 3)
    b = Busemann(E2, u)
    # |x - t u| - t written without cancellation, for growing t
    vals = []
    for t in (1e2, 1e4, 1e6, 1e8):
        nz = math.hypot(*(x - t * u))
        vals.append((float(x @ x) - 2 * t * float(x @ u)) / (nz + t))
    assert abs(vals[-1] - vals[-2]) < 1e-5
    assert b.eval(x) == pytest.approx(vals[-1], abs=1e-7)
    assert b.eval(x) == -2.0


def test_busemann_direction_is_normalized():
    b = Busemann(E2, P(3, 4))
    assert np.allclose(b.direction, [0.6, 0.8])
    with pytest.raises(ValueError):
        Busemann(E2, P(0, 0))
    with pytest.raises(TypeError):
        Busemann(Spider(3))


# -- prox examples -----------------------------------------------------------------------

@pytest.mark.parametrize("space", ALL_SPACES, ids=space_id)
def test_prox_with_zero_step_is_identity(space, rng):
    x = space.random_point(rng)
    for f in catalogue(space, rng):
        assert f.prox(0.0, x) is x


def test_prox_zero_step_example():
    x = P(1, 2)
    assert np.array_equal(DistancePower(E2, P(5, 5)).prox(0, x), x)


def test_distpow_p1_prox_examples():
    f = DistancePower(E1, P(5), weight=1.0, power=1)
    assert f.prox(2.0, P(0))[0] == pytest.approx(2.0, abs=1e-15)
    assert f.prox(10.0, P(0))[0] == pytest.approx(5.0, abs=1e-15)
    for lam, want in ((2.0, 2.0), (10.0, 5.0)):
        assert brute_force_prox(f, lam, P(0), RES)[0] == pytest.approx(want, abs=2 * RES)


def test_distpow_p2_prox_example():
    f = DistancePower(E1, P(1), weight=1.0, power=2)
    # oracle: minimize (1 - y)^2 + y^2 / 2 directly
    ref = minimize_scalar(lambda y: (1 - y) ** 2 + y * y / 2, bounds=(-2, 3), method="bounded",
                          options={"xatol": 1e-12}).x
    assert ref == pytest.approx(2 / 3, abs=1e-8)
    assert f.prox(1.0, P(0))[0] == pytest.approx(2 / 3, abs=1e-15)
    assert brute_force_prox(f, 1.0, P(0), RES)[0] == pytest.approx(2 / 3, abs=2 * RES)


def test_indicator_prox_is_projection():
    f = Indicator(E2, ClosedBall(P(0, 0), 1.0))
    assert np.allclose(f.prox(7.0, P(3, 0)), [1, 0])
    assert np.allclose(f.prox(0.01, P(3, 0)), [1, 0])


def test_negative_step_rejected():
    f = DistancePower(E1, P(0))
    with pytest.raises(ValueError):
        f.prox(-1.0, P(1))
    with pytest.raises(ValueError):
        f.exact_semigroup(-1.0, P(1))


def test_constructor_validation():
    with pytest.raises(ValueError):
        DistancePower(E1, P(0), weight=0.0)
    with pytest.raises(ValueError):
        DistancePower(E1, P(0), power=3)
    with pytest.raises(ValueError):
        Displacement(E2, np.array([[1.0, 1.0], [0.0, 1.0]]), P(0, 0))
    with pytest.raises(TypeError):
        Displacement(Hyperbolic(), np.eye(2), P(0, 0))


# -- semigroup examples -------------------------------------------------------------------

def test_p1_semigroup_examples():
    f = DistancePower(E1, P(5), weight=1.0, power=1)
    for t, want in ((2.0, 2.0), (10.0, 5.0)):
        exact = f.exact_semigroup(t, P(0))
        assert exact[0] == pytest.approx(want, abs=1e-14)
        assert abs(iterate_resolvent(f, t, 2 ** 14, P(0))[0] - exact[0]) <= 1e-3


def test_p2_semigroup_example():
    f = DistancePower(E1, P(1), weight=1.0, power=2)
    t = math.log(2) / 2
    assert f.exact_semigroup(t, P(0))[0] == pytest.approx(0.5, abs=1e-15)
    assert abs(iterate_resolvent(f, t, 2 ** 14, P(0))[0] - 0.5) <= 1e-4


def test_indicator_semigroup_is_stationary():
    f = Indicator(E2, ClosedBall(P(0, 0), 1.0))
    x = P(0.3, -0.2)
    assert np.array_equal(f.exact_semigroup(3.0, x), x)
    with pytest.raises(ValueError):
        f.exact_semigroup(3.0, P(2, 0))


def test_semigroup_availability():
    assert DistancePower(E1, P(0)).exact_semigroup(1.0, P(1)) is not None
    assert Busemann(Hyperbolic()).exact_semigroup(1.0, P(0, 1)) is None
    assert Displacement(E2, np.eye(2), P(1, 0)).exact_semigroup(1.0, P(0, 0)) is None
    assert np.allclose(Busemann(E2, P(0, 1)).exact_semigroup(2.0, P(1, 1)), [1, 3])


@pytest.mark.parametrize("space", ALL_SPACES, ids=space_id)
def test_semigroup_identity(space, rng):
    fs = [f for f in catalogue(space, rng) if f.has_exact_semigroup]
    for f in fs:
        for _ in range(30):
            x = f.sample_domain(rng)
            s, t = rng.uniform(0, 3, size=2)
            lhs = f.exact_semigroup(s + t, x)
            rhs = f.exact_semigroup(t, f.exact_semigroup(s, x))
            assert space.distance(lhs, rhs) <= 1e-6


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0.1, 5), st.floats(0, 4), st.floats(0, 4),
       st.sampled_from([1, 2]))
def test_semigroup_identity_line(x, a, w, s, t, p):
    f = DistancePower(E1, P(a), weight=w, power=p)
    lhs = f.exact_semigroup(s + t, P(x))
    rhs = f.exact_semigroup(t, f.exact_semigroup(s, P(x)))
    assert abs(lhs[0] - rhs[0]) <= 1e-9 * (1 + abs(x) + abs(a))


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0.1, 5), st.floats(0, 4), st.floats(0, 4),
       st.sampled_from([1, 2]))
def test_semigroup_identity_spider(x, a, w, s, t, p):
    sp = Spider(3)
    f = DistancePower(sp, SpiderPoint(1, abs(a)), weight=w, power=p)
    y = SpiderPoint(0 if x >= 0 else 2, abs(x))
    lhs = f.exact_semigroup(s + t, y)
    rhs = f.exact_semigroup(t, f.exact_semigroup(s, y))
    assert sp.distance(lhs, rhs) <= 1e-9 * (1 + abs(x) + abs(a))


# -- numeric proxes against independent oracles --------------------------------------------

def test_hyperbolic_busemann_prox_closed_form(rng):
    # along the vertical line through x the objective is -ln y' + ln(y'/y)^2 / (2 lam),
    # minimized at ln(y'/y) = lam; leaving the vertical only increases it
    H = Hyperbolic()
    b = Busemann(H)
    for lam in (0.01, 0.1, 1.0, 10.0):
        for _ in range(10):
            x = H.random_point(rng)
            want = np.array([x[0], x[1] * math.exp(lam)])
            got = b.prox(lam, x)
            assert H.distance(got, want) <= 1e-10


def test_hyperbolic_busemann_prox_against_generic_minimizer(rng):
    H = Hyperbolic()
    b = Busemann(H)
    for lam in (0.3, 2.0):
        x = H.random_point(rng)

        def phi(z):
            y = np.array([z[0], math.exp(z[1])])
            return b.eval(y) + H.distance(x, y) ** 2 / (2 * lam)

        res = minimize(phi, [x[0] + 0.3, math.log(x[1])], method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 5000})
        ref = np.array([res.x[0], math.exp(res.x[1])])
        assert H.distance(b.prox(lam, x), ref) <= 1e-5


def test_busemann_prox_reports_nonconvergence():
    b = Busemann(Hyperbolic(), max_iter=1, tol=1e-300)
    with pytest.raises(ConvergenceError) as info:
        b.prox(1.0, P(0.5, 2.0))
    assert math.isfinite(info.value.residual)
    assert "last residual" in str(info.value)


def test_displacement_prox_brute_force_1d():
    # T x = -x + 1, so f(x) = |2x - 1|
    f = Displacement(E1, np.array([[-1.0]]), P(1.0))
    assert f.eval(P(3.0)) == 5.0
    for lam, x in ((0.1, 3.0), (1.0, 3.0), (10.0, -2.0), (0.05, 0.52)):
        got = f.prox(lam, P(x))
        ref = brute_force_prox(f, lam, P(x), RES)
        assert abs(got[0] - ref[0]) <= 2 * RES


def test_displacement_prox_brute_force_2d(rng):
    c, s = math.cos(0.7), math.sin(0.7)
    cases = [Displacement(E2, np.array([[c, -s], [s, c]]), P(0.5, -1.0)),
             Displacement(E2, np.array([[1.0, 0.0], [0.0, -1.0]]), P(0.0, 0.4)),
             Displacement(E2, np.eye(2), P(1.0, 2.0))]
    for f in cases:
        for lam in (0.1, 1.0, 4.0):
            x = E2.random_point(rng, 2.0)
            got = f.prox(lam, x)
            ref = brute_force_prox(f, lam, x, RES)
            assert E2.distance(got, ref) <= 2 * RES


def test_displacement_translation_has_constant_value():
    # pure translation: f = |b| everywhere, so the prox is the identity
    f = Displacement(E2, np.eye(2), P(1.0, 2.0))
    x = P(0.3, 0.1)
    assert f.eval(x) == pytest.approx(math.sqrt(5))
    assert np.allclose(f.prox(3.0, x), x)


# -- brute force -----------------------------------------------------------------------------

@pytest.mark.parametrize("space", [E1, E2, Spider(3)], ids=space_id)
def test_closed_form_prox_matches_brute_force(space, rng):
    fs = [f for f in catalogue(space, rng) if f.has_closed_prox]
    if space == E2:
        # a planar segment has no interior, so no grid hits it
        fs = [f for f in fs if not isinstance(getattr(f, "cset", None), GeodesicSegment)]
    for f in fs:
        for lam in (0.1, 1.0, 10.0):
            x = space.random_point(rng, 2.0)
            assert space.distance(f.prox(lam, x), brute_force_prox(f, lam, x, RES)) <= 2 * RES


def test_spider_median_prox_per_ray():
    sp = Spider(3)
    anchors = [SpiderPoint(j, 1.0) for j in range(3)]
    obj = SplitObjective(tuple(DistancePower(sp, a) for a in anchors))
    for x, lam in ((SpiderPoint(0, 2.0), 0.5), (SpiderPoint(1, 0.3), 2.0), (SpiderPoint(2, 4.0), 1.0)):
        best = None
        for ray in range(3):
            def phi(r, ray=ray):
                y = SpiderPoint(ray, r)
                val = sum(abs(r - 1.0) if ray == j else r + 1.0 for j in range(3))
                dxy = abs(r - x.radius) if ray == x.ray else r + x.radius
                return val + dxy ** 2 / (2 * lam)
            res = minimize_scalar(phi, bounds=(0.0, 10.0), method="bounded", options={"xatol": 1e-10})
            cand = (phi(0.0), 0.0) if phi(0.0) <= res.fun else (res.fun, res.x)
            if best is None or cand[0] < best[0]:
                best = (cand[0], SpiderPoint(ray, cand[1]))
        got = brute_force_prox(obj, lam, x, RES)
        assert sp.distance(got, best[1]) <= 2 * RES


def test_brute_force_needs_a_reachable_domain():
    f = Indicator(E2, GeodesicSegment(P(0, 0), P(1, 0.3)))
    with pytest.raises(ValueError):
        brute_force_prox(f, 1.0, P(2, 2))
    g = Indicator(E1, GeodesicSegment(P(0), P(1)))
    assert brute_force_prox(g, 1.0, P(3))[0] == pytest.approx(1.0, abs=2 * RES)


def test_brute_force_rejects_unsupported_space():
    f = DistancePower(SPD(2), np.eye(2))
    with pytest.raises(TypeError):
        brute_force_prox(f, 1.0, 2 * np.eye(2))
    with pytest.raises(ValueError):
        brute_force_prox(DistancePower(E1, P(0)), 0.0, P(1))


# -- convex-analytic properties ----------------------------------------------------------------

@pytest.mark.parametrize("space", ALL_SPACES, ids=space_id)
def test_geodesic_convexity(space, rng):
    for f in catalogue(space, rng):
        for _ in range(500):
            p, q = f.sample_domain(rng), f.sample_domain(rng)
            t = float(rng.uniform())
            z = space.geodesic_point(p, q, t)
            assert f.eval(z) <= (1 - t) * f.eval(p) + t * f.eval(q) + 1e-9


@pytest.mark.parametrize("space", ALL_SPACES, ids=space_id)
def test_prox_descent_and_nonexpansive(space, rng):
    for f in catalogue(space, rng):
        slack = 1e-9 + 2 * f.prox_tol
        for lam in (0.01, 0.1, 1.0, 10.0):
            for _ in range(40):
                x, y = space.random_point(rng, 2.0), space.random_point(rng, 2.0)
                jx, jy = f.prox(lam, x), f.prox(lam, y)
                assert space.distance(jx, jy) <= space.distance(x, y) + slack
                if f.in_domain(x):
                    assert f.eval(jx) + space.distance(x, jx) ** 2 / (2 * lam) <= f.eval(x) + 1e-9
                assert f.in_domain(jx)


@pytest.mark.parametrize("space", ALL_SPACES, ids=space_id)
def test_prox_is_moreau_minimizer(space, rng):
    # the prox value of the Moreau objective is no larger than at perturbed points
    for f in catalogue(space, rng):
        for lam in (0.1, 1.0):
            x = space.random_point(rng, 2.0)
            j = f.prox(lam, x)
            base = f.eval(j) + space.distance(x, j) ** 2 / (2 * lam)
            for _ in range(20):
                z = space.geodesic_point(j, f.sample_domain(rng), float(rng.uniform(0, 0.2)))
                assert base <= f.eval(z) + space.distance(x, z) ** 2 / (2 * lam) + 1e-9


def test_subspider_indicator():
    sp = Spider(4)
    f = Indicator(sp, SubSpider(frozenset({1, 3})))
    assert f.eval(SpiderPoint(1, 2.0)) == 0.0
    assert f.eval(SpiderPoint(0, 0.0)) == 0.0
    assert f.eval(SpiderPoint(2, 0.5)) == math.inf
    assert f.prox(1.0, SpiderPoint(2, 0.5)) == SpiderPoint(0, 0.0)


def test_segment_indicator_domain():
    seg = GeodesicSegment(P(0, 0), P(1, 1))
    f = Indicator(E2, seg)
    assert f.domain().closure is seg
    assert f.domain().locally_compact
    assert np.allclose(f.prox(1.0, P(1, 0)), [0.5, 0.5])
