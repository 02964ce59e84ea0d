import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqbilliards.curves import StableCurve
from seqbilliards.errors import GeometryError, Starvation
from seqbilliards.open_systems import (
    P0, ArcHole, EmptyHole, FullHole, OpenComposition, complexity, escape_from_run, escape_rate,
    eigen_residual, exit_statistics, limiting_density, make_hole, merge_runs, plateau_constant,
    simulate_open, stable_dictionary, surviving_cloud, survival_mass, transversality_constant,
    window_rate,
)


def one(i, r, phi):
    return np.ones(np.shape(r))


@pytest.fixture(scope="module")
def arc(finite3):
    return make_hole(finite3, {"kind": "arc", "scatterer": 0, "arc": [0.0, 0.05]})


@pytest.fixture(scope="module")
def ref_run(finite3, arc):
    return simulate_open(OpenComposition(finite3, arc, 4), one, 12, np.random.default_rng(11), 100_000)


# -- holes ------------------------------------------------------------------------------


def test_arc_measure(finite3, rng):
    H = make_hole(finite3, {"kind": "arc", "scatterer": 0, "arc": [0.0, 0.1]})
    assert H.exact_measure(finite3) == pytest.approx(0.2 * finite3.srb_constant, rel=1e-14)
    m, se = H.measure(finite3, rng, 1_000_000)
    assert abs(m - 0.2 * finite3.srb_constant) < 4 * se


def test_make_hole_errors(finite3):
    with pytest.raises(GeometryError):
        make_hole(finite3, {"kind": "arc", "scatterer": 5, "arc": [0.0, 0.1]})
    with pytest.raises(GeometryError):
        make_hole(finite3, {"kind": "arc", "scatterer": 0, "arc": [0.2, 0.1]})
    with pytest.raises(GeometryError):
        make_hole(finite3, {"kind": "disk", "center": [0.25, 0.75], "radius": 0.05})
    with pytest.raises(GeometryError):
        make_hole(finite3, {"kind": "disk", "center": [0.8, 0.5], "radius": 0.0})
    with pytest.raises(GeometryError):
        make_hole(finite3, {"kind": "square"})
    assert isinstance(make_hole(finite3, {"kind": "none"}), EmptyHole)
    assert isinstance(make_hole(finite3, {"kind": "all"}), FullHole)


def test_disk_hole_matches_ray_march(finite3, rng):
    # independent oracle: sample the incoming flight segment densely and test each point
    D = make_hole(finite3, {"kind": "disk", "center": [0.8, 0.5], "radius": 0.05})
    idx, r, phi = finite3.sample_srb(rng, 20000)
    got = D.contains(finite3, idx, r, phi)
    b = finite3.backward(idx, r, phi)
    ax, ay = finite3.position(b.idx, b.r)
    bx, by = finite3.position(idx, r)
    bx, by = bx + b.kx, by + b.ky
    s = np.linspace(0.0, 1.0, 4001)[:, None]
    dx = (ax + s * (bx - ax) - 0.8 + 0.5) % 1.0 - 0.5
    dy = (ay + s * (by - ay) - 0.5 + 0.5) % 1.0 - 0.5
    oracle = (dx ** 2 + dy ** 2 < 0.05 ** 2).any(axis=0)
    assert got.any()
    assert np.array_equal(got, oracle)


def test_complexity_bounded(finite3, rng):
    curves = stable_dictionary(finite3, 1000, finite3.family.delta0, rng)
    D = make_hole(finite3, {"kind": "disk", "center": [0.8, 0.5], "radius": 0.05})
    A = make_hole(finite3, {"kind": "arc", "scatterer": 0, "arc": [0.0, 0.1]})
    assert complexity(D, finite3, curves) <= P0
    assert complexity(A, finite3, curves) <= P0


def test_transversality_matches_largest_slope(finite3):
    H = ArcHole(0, 0.0, 0.1)
    top = finite3.kappa_bounds[1] + 1.0 / finite3.tau_bounds[0]
    curves = []
    for m in np.linspace(finite3.kappa_bounds[0], top, 12):
        dr = finite3.family.delta0 / math.sqrt(1 + m * m)
        curves.append(StableCurve.segment(0, 0.1 - dr / 2, 0.2, -m, finite3.family.delta0))
    assert complexity(H, finite3, curves) == 2
    assert transversality_constant(H, finite3, curves) == pytest.approx(top, rel=0.2)


# -- survival -----------------------------------------------------------------------------


def test_survival_examples(finite3, arc, rng):
    comp = OpenComposition(finite3, arc, 4)
    assert survival_mass(one, comp, 0, rng, 20000)[0] == pytest.approx(1.0)
    full = OpenComposition(finite3, FullHole(), 2)
    assert survival_mass(one, full, 1, rng, 20000)[0] == 0.0
    with pytest.raises(ValueError):
        OpenComposition(finite3, arc, 0)


def test_masses_nonincreasing(ref_run):
    assert np.all(np.diff(ref_run.masses) <= 0)
    assert np.all(np.diff(ref_run.survivors) <= 0)
    for b in ref_run.batch_masses(5):
        assert np.all(np.diff(b) <= 0)


def test_no_hole_nu_is_one(finite3, rng):
    est = escape_rate(one, OpenComposition(finite3, EmptyHole(), 4), 10, rng, 20000)
    assert est.nu == 1.0 and est.nu_ci[0] <= 1.0 <= est.nu_ci[1]


def test_reference_escape(ref_run):
    est = escape_from_run(ref_run)
    assert 0 < est.nu < 1
    assert est.ratio_spread() < 0.01
    assert est.nu_ci[0] < est.nu < est.nu_ci[1]
    rate, se, _ = window_rate(ref_run, 6, 12)
    assert abs(rate - est.nu) < 4 * max(se, est.nu_se)


def test_starvation(finite3):
    big = ArcHole(0, 0.0, finite3.lengths[0])
    run = simulate_open(OpenComposition(finite3, big, 1), one, 8, np.random.default_rng(2), 2000)
    with pytest.raises(Starvation):
        escape_from_run(run)


def test_merge_runs(finite3, arc):
    comp = OpenComposition(finite3, arc, 4)
    a = simulate_open(comp, one, 5, np.random.default_rng(1), 3000)
    b = simulate_open(comp, one, 5, np.random.default_rng(2), 5000)
    m = merge_runs([a, b])
    assert m.alive.shape == (6, 8000)
    assert np.allclose(m.masses, (3 * a.masses + 5 * b.masses) / 8)


# -- limiting density and exits -------------------------------------------------------------


def test_cloud_weights_and_residual(finite3, arc, ref_run):
    cloud = surviving_cloud(ref_run)
    assert cloud.weights.sum() == pytest.approx(1.0, abs=1e-12)
    comp = OpenComposition(finite3, arc, 4)
    nu = escape_from_run(ref_run).nu
    psis = [one, lambda i, r, p: 1 + 0.5 * np.cos(p), lambda i, r, p: 2 + np.sin(r)]
    assert max(eigen_residual(cloud, comp, 12, nu, psis)) < 0.05


def test_limiting_density_independent_of_start(finite3, arc):
    comp = OpenComposition(finite3, arc, 4)
    h1 = limiting_density(comp, 12, np.random.default_rng(3), 100_000)
    h2 = limiting_density(comp, 12, np.random.default_rng(4), 100_000,
                          f=lambda i, r, p: 1 + 0.5 * np.cos(p))
    for psi in (lambda i, r, p: np.cos(p), lambda i, r, p: (i == 0).astype(float)):
        diff = abs(h1.integral(psi) - h2.integral(psi))
        assert diff < 4 * math.hypot(h1.integral_se(psi), h2.integral_se(psi))


def test_exit_window_decomposition(ref_run):
    nu = escape_from_run(ref_run).nu
    total = exit_statistics(ref_run, ("all",), nu)
    left = exit_statistics(ref_run, ("phi", -math.pi, 0.0), nu)
    right = exit_statistics(ref_run, ("phi", 0.0, math.pi), nu)
    assert np.allclose(left.probability + right.probability, total.probability, atol=1e-15)
    absorbed = -np.diff(ref_run.masses)
    assert np.allclose(total.probability, absorbed, atol=1e-15)
    with pytest.raises(ValueError):
        exit_statistics(ref_run, ("theta", 0, 1), nu)


def test_plateau_constant():
    masses = 0.7 * 0.9 ** np.arange(10)
    masses[0] = 1.0
    val, k = plateau_constant(masses, 0.9)
    assert val == pytest.approx(0.7) and k == 1
    assert plateau_constant(np.array([1.0, 0.5, 0.1, 0.05, 0.001]), 0.9) is None


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 1.5), st.floats(0.01, 0.5))
def test_arc_contains_is_interval(a, w):
    H = ArcHole(1, a, a + w)
    r = np.linspace(0, 2.0, 2001)
    inside = H.contains(None, np.ones(r.size, dtype=int), r, np.zeros(r.size))
    assert np.array_equal(inside, (r > a) & (r < a + w))
    assert not H.contains(None, np.zeros(r.size, dtype=int), r, np.zeros(r.size)).any()
