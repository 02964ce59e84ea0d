import math

import numpy as np
import pytest

from seqbilliards.applications.scattering import build_boxed, lazy_orbit
from seqbilliards.errors import GeometryError, HorizonError, SymmetryError
from seqbilliards.open_systems import simulate_open, window_rate

FIG3B = [((0, 0), 0.4), ((1, 0), 0.4), ((0, 1), 0.4), ((1, 1), 0.4), ((0.5, 0.5), 0.25)]


@pytest.fixture(scope="module")
def boxed():
    return build_boxed(FIG3B)


def test_corner_configuration_is_valid(boxed):
    assert boxed.cover_error < 1e-8
    assert boxed.torus.horizon_certificate.finite
    assert boxed.symmetric_lines[0] == ("left", "bottom")
    assert boxed.symmetric_lines[4] == ()
    # one open gate per wall, between the corner disks
    assert len(boxed.gates) == 4
    (x0, y0), (x1, y1) = boxed.gates[0]
    assert (y0, y1) == (0.0, 0.0) and sorted((x0, x1)) == pytest.approx([0.2, 0.3])


def test_build_errors():
    with pytest.raises(SymmetryError):
        build_boxed([((0.1, 0.0), 0.4), ((1, 0), 0.4), ((0, 1), 0.4), ((1, 1), 0.4), ((0.5, 0.5), 0.25)])
    with pytest.raises(HorizonError):
        build_boxed([((0.5, 0.5), 0.1)])
    with pytest.raises(GeometryError):
        build_boxed(FIG3B, box=(0.0, 1.0, 0.0, 2.0))
    with pytest.raises(GeometryError):
        build_boxed([((2.0, 0.5), 0.1)])


def test_straight_exit_at_first_transparency(boxed):
    # bottom point of the centre disk, leaving along the normal, straight through the bottom gate
    R = boxed.orad[4]
    for N in (1, 5):
        lo = lazy_orbit(boxed, (np.array([4]), np.array([R * math.pi / 2]), np.array([0.0])), 3, N)
        assert lo.exit_macro[0] == 0
        assert (lo.exit_x[0], lo.exit_y[0]) == pytest.approx((0.25, 0.0))
        assert lo.exit_angle[0] == pytest.approx(-math.pi / 2)


def test_no_reentry_and_monotone_survival(boxed):
    rng = np.random.default_rng(0)
    for N in (1, 3):
        lo = lazy_orbit(boxed, boxed.sample(rng, 10_000), 10, N)
        assert lo.reentries.sum() == 0
        s = lo.survival()
        assert s[0] == 1.0 and np.all(np.diff(s) <= 0)


def test_sample_inside_box(boxed):
    j, r, phi = boxed.sample(np.random.default_rng(1), 5000)
    assert boxed.inside(j, r).all()
    assert np.all(np.abs(phi) <= math.pi / 2)


def test_lazy_rate_matches_open_system(boxed):
    # same quantity two ways: lazy gates in the box and the unfolded open torus system
    N, lo, hi = 2, 1, 8
    lz = lazy_orbit(boxed, boxed.sample(np.random.default_rng(2), 60_000), 10, N)
    nu_l, se_l, _ = lz.rate(lo, hi)
    run = simulate_open(boxed.open_system(N), lambda i, r, p: np.ones(np.shape(r)), 10,
                        np.random.default_rng(3), 60_000)
    nu_o, se_o, _ = window_rate(run, lo, hi)
    assert 0 < nu_l < 1
    assert abs(nu_l - nu_o) < 3 * math.hypot(se_l, se_o)


def test_lazy_orbit_rejects_bad_n(boxed):
    with pytest.raises(ValueError):
        lazy_orbit(boxed, boxed.sample(np.random.default_rng(0), 3), 3, 0)
