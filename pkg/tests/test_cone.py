import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqbilliards.cone import (
    ConeParams, CurveSampler, TestFunction, bound_diameter, cone_membership, cone_order_distance,
    dictionary, dominating_shift, hilbert_metric, refinement_drift, triple_norms,
)
from seqbilliards.curves import StableCurve
from seqbilliards.errors import DomainError, NotComparable, NotInCone


@pytest.fixture(scope="module")
def params(finite3):
    return ConeParams.for_table(finite3)


@pytest.fixture(scope="module")
def sampler(finite3, params):
    return CurveSampler(finite3, finite3.family, params.delta, 48, 0)


def const(v):
    return lambda i, r, phi: np.full(np.shape(r), float(v))


# -- parameters ------------------------------------------------------------------


def test_default_params_are_admissible(params):
    assert math.exp(2 * params.a * params.delta0 ** params.beta) == pytest.approx(2.0)
    assert 1 < params.L < params.A < params.c
    assert params.delta == pytest.approx(params.delta0 / 3)


@pytest.mark.parametrize("bad", [dict(q=0.6), dict(L=300.0), dict(beta=0.4), dict(sigma=1.0)])
def test_bad_params_rejected(finite3, bad):
    with pytest.raises(ValueError):
        ConeParams.for_table(finite3, **bad)


# -- Hilbert metric on test functions ---------------------------------------------------


def _member(u, p, a, e):
    if np.any(p <= 0):
        return False
    E = np.exp(a * np.abs(u[:, None] - u[None, :]) ** e)
    return bool(np.all(p[:, None] <= E * p[None, :] * (1 + 1e-12)))


def _order_metric(u, p1, p2, a, e, steps=45):
    """Brute force: log(beta/alpha) from the cone order, by bisection on membership."""
    lo, hi = 0.0, float((p2 / p1).min())
    for _ in range(steps):
        m = 0.5 * (lo + hi)
        lo, hi = (m, hi) if _member(u, p2 - m * p1, a, e) else (lo, m)
    alpha = lo
    lo, hi = float((p2 / p1).max()), float((p2 / p1).max()) * 1e3
    for _ in range(steps):
        m = 0.5 * (lo + hi)
        lo, hi = (m, hi) if not _member(u, m * p1 - p2, a, e) else (lo, m)
    return math.log(hi / alpha)


def test_hilbert_trivial_cases():
    u = np.linspace(0.0, 0.01, 33)
    psi = np.exp(0.5 * u ** (1 / 3))
    assert hilbert_metric(u, psi, psi, 2.0, 1 / 3) == 0.0
    assert hilbert_metric(u, psi, 7.5 * psi, 2.0, 1 / 3) == pytest.approx(0.0, abs=1e-12)


def test_hilbert_matches_order_oracle_same_grid():
    L, a, e = 0.02, 2.0, 1 / 3
    u = np.linspace(0.0, L, 65)
    p1 = np.exp(0.5 * a * np.abs(u - 0.3 * L) ** e)
    assert hilbert_metric(u, p1, np.ones_like(u), a, e) == pytest.approx(
        _order_metric(u, p1, np.ones_like(u), a, e), rel=1e-8)


@pytest.mark.slow
def test_hilbert_matches_dense_oracle(params):
    # bump exp(a/2 d(x0, .)^alpha) against the constant on a segment of length delta0 / 2
    a, e = params.a, params.alpha
    L = params.delta0 / 2
    x0 = 0.25 * L
    n = 257
    u = np.linspace(0.0, L, n)
    dense = np.linspace(0.0, L, 10 * (n - 1) + 1)
    bump = lambda x: np.exp(0.5 * a * np.abs(x - x0) ** e)  # noqa: E731
    got = hilbert_metric(u, bump(u), np.ones_like(u), a, e)
    oracle = _order_metric(dense, bump(dense), np.ones_like(dense), a, e)
    assert got == pytest.approx(oracle, rel=0.01)
    assert got <= oracle * (1 + 1e-9)  # grid supremum only grows under refinement


def test_hilbert_rejects_non_members():
    u = np.linspace(0.0, 0.01, 17)
    spiky = np.ones_like(u)
    spiky[8] = 50.0
    with pytest.raises(NotInCone):
        hilbert_metric(u, spiky, np.ones_like(u), 2.0, 1 / 3)
    with pytest.raises(NotInCone):
        hilbert_metric(u, -np.ones_like(u), np.ones_like(u), 2.0, 1 / 3)


_U = np.linspace(0.0, 0.004, 25)
_shape = st.tuples(st.floats(-0.8, 0.8), st.floats(0.0, 0.004), st.floats(0.1, 10.0))


def _tf(sh):
    amp, x0, scale = sh
    return scale * np.exp(amp * np.abs(_U - x0) ** (1 / 3))


@settings(max_examples=50, deadline=None)
@given(_shape, _shape, _shape)
def test_hilbert_axioms(s1, s2, s3):
    a, e = 2.0, 1 / 3
    p1, p2, p3 = _tf(s1), _tf(s2), _tf(s3)
    d12 = hilbert_metric(_U, p1, p2, a, e)
    d21 = hilbert_metric(_U, p2, p1, a, e)
    assert d12 >= 0
    assert d12 == pytest.approx(d21, abs=1e-6)
    assert hilbert_metric(_U, p1, 3.0 * p2, a, e) == pytest.approx(d12, abs=1e-6)
    assert hilbert_metric(_U, 4.0 * p1, 0.125 * p2, a, e) == d12
    assert d12 <= hilbert_metric(_U, p1, p3, a, e) + hilbert_metric(_U, p3, p2, a, e) + 1e-6


def test_dictionary_within_diameter_bound(params):
    W = StableCurve.segment(0, 0.4, 0.1, -3.0, 2 * params.delta)
    shapes = dictionary(W, params.sigma * params.a / 0.9, params.beta)
    assert len(shapes) == 7
    for t in shapes:
        assert t.in_cone(params.sigma * params.a + 1e-9)
    worst = max(hilbert_metric(s.u, s.values, t.values, params.a, params.beta)
                for s in shapes for t in shapes)
    assert 0 < worst <= params.diameter_bound


def test_test_function_certificate():
    W = StableCurve.segment(0, 0.4, 0.1, -3.0, 0.01)
    t = TestFunction.from_callable(W, lambda u: np.exp(0.5 * u ** (1 / 6)))
    assert t.certificate == pytest.approx(0.5, rel=1e-6)
    assert t.in_cone(1.0) and not t.in_cone(0.4)


# -- diameter formula ------------------------------------------------------------------


def test_bound_diameter_example():
    delta, th = bound_diameter(0.9, 60.0)
    assert delta == pytest.approx(math.log(361 * 54), rel=1e-12)
    assert delta == pytest.approx(9.8778, abs=1e-4)
    # frozen from direct evaluation; tanh(9.8778 / 4)
    assert th == pytest.approx(0.985778, abs=1e-6)


def test_bound_diameter_domain():
    with pytest.raises(DomainError):
        bound_diameter(0.4, 60.0)
    with pytest.raises(DomainError):
        bound_diameter(1.0, 60.0)
    with pytest.raises(DomainError):
        bound_diameter(0.55, 60.0, A=3.0)
    with pytest.raises(DomainError):
        bound_diameter(0.9, 60.0, A=1.0)
    d = [bound_diameter(1 - 10.0 ** -k, 60.0)[0] for k in (2, 4, 8)]
    assert d[0] < d[1] < d[2] and d[2] > 35


# -- densities ---------------------------------------------------------------------


def test_triple_norms_constants(params, sampler):
    assert triple_norms(const(1), params, sampler) == pytest.approx((1.0, 1.0), abs=1e-12)
    assert triple_norms(const(5), params, sampler) == pytest.approx((5.0, 5.0), abs=1e-12)


def test_triple_norms_bounded_by_range(params, sampler):
    plus, minus = triple_norms(lambda i, r, phi: 1 + 0.1 * np.sin(phi), params, sampler)
    assert 0.9 <= minus <= plus <= 1.1


def test_constant_is_in_cone(params, sampler):
    rep = cone_membership(const(1), params, sampler)
    assert rep.in_cone
    assert rep.cond2_margin == pytest.approx(params.L - 1)
    assert rep.cond3_margin >= (params.A - 2 ** (1 - params.q)) * params.delta ** (1 - params.q) - 1e-12
    assert rep.n_pairs > 0


def test_checkerboard_fails(params, sampler):
    scale = params.delta / 50
    f = lambda i, r, phi: np.where(np.floor(phi / scale) % 2 == 0, 1.0, -1.0)  # noqa: E731
    rep = cone_membership(f, params, sampler)
    assert rep.triple_minus < 0 and rep.cond2_margin < 0
    assert not rep.in_cone


def test_dominating_shift_makes_member(params, sampler):
    g = lambda i, r, phi: np.cos(3 * phi) + 0.5 * np.sin(r)  # noqa: E731
    lam = dominating_shift(1.5, 3.5, params)
    assert cone_membership(lambda i, r, phi: lam + g(i, r, phi), params, sampler).in_cone


def test_refinement_drift_small(finite3, params):
    f = lambda i, r, phi: 1 + 0.1 * np.sin(phi)  # noqa: E731
    assert refinement_drift(f, params, finite3, finite3.family, 48) < 0.02


def test_order_distance_examples(params, sampler):
    assert cone_order_distance(const(1), const(2), params, sampler) == pytest.approx(0.0, abs=1e-8)
    assert cone_order_distance(const(1), const(3), params, sampler) == pytest.approx(0.0, abs=1e-8)
    d = [cone_order_distance(const(1), lambda i, r, phi: 1 + e * np.sin(phi), params, sampler)
         for e in (0.01, 0.02, 0.04)]
    assert 0 < d[0] < d[1] < d[2] < 0.2
    # first order in epsilon
    assert d[1] / d[0] == pytest.approx(2.0, rel=0.05)
    assert d[2] / d[0] == pytest.approx(4.0, rel=0.05)


def test_order_distance_needs_members(params, sampler):
    with pytest.raises(NotComparable):
        cone_order_distance(const(1), const(-1), params, sampler)
