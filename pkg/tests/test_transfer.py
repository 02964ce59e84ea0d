import numpy as np
import pytest

from seqbilliards.cone import ConeParams
from seqbilliards.config import load_table_spec, resolve_table_path, table_from_spec
from seqbilliards.curves import StableCurve
from seqbilliards.errors import AdmissibilityError, ToleranceError
from seqbilliards.transfer import (
    DensityField, MapSequence, conformality_check, leafwise_difference, leafwise_transfer,
    memory_loss_experiment, pointwise_integral, push_test, pushed_grids, srb_mean, transfer_eval,
)


def one(i, r, phi):
    return np.ones_like(np.asarray(r, dtype=float))


def wave(tab):
    return lambda i, r, phi: 1 + 0.3 * np.cos(2 * np.pi * r / tab.lengths[i])


def test_transfer_of_one_is_one(finite3, rng):
    idx, r, phi = finite3.sample_srb(rng, 20000)
    vals, ok = transfer_eval(one, MapSequence.constant(finite3, 5), 5, idx, r, phi)
    assert ok.mean() > 0.999
    assert np.all(vals[ok] == 1.0)


def test_transfer_of_indicator(finite3, rng):
    idx, r, phi = finite3.sample_srb(rng, 5000)
    upper = lambda i, r, p: (p > 0).astype(float)  # noqa: E731
    vals, ok = transfer_eval(upper, MapSequence.constant(finite3, 1), 1, idx, r, phi)
    back = finite3.backward(idx, r, phi)
    assert np.array_equal(vals[ok], (back.phi[ok] > 0).astype(float))


def test_masks_multiply(finite3, rng):
    idx, r, phi = finite3.sample_srb(rng, 5000)
    mask = lambda i, r, p: (i == 0).astype(float)  # noqa: E731
    f = DensityField(wave(finite3), masks={0: mask})
    seq = MapSequence.constant(finite3, 2)
    vals, ok = transfer_eval(f, seq, 2, idx, r, phi)
    plain, _ = transfer_eval(wave(finite3), seq, 2, idx, r, phi)
    b1 = finite3.backward(idx, r, phi)
    b = finite3.backward(b1.idx, b1.r, b1.phi)
    assert np.allclose(vals[ok], (plain * (b.idx == 0))[ok])


def test_srb_mean_of_constant(finite3, packed3):
    assert srb_mean(finite3, one) == pytest.approx(1.0, abs=1e-12)
    assert srb_mean(packed3, one) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("k", range(3))
def test_conformality(finite3, k):
    fs = [wave(finite3), lambda i, r, p: 1 + 0.5 * np.sin(p), lambda i, r, p: np.exp(np.cos(p)) * (1 + i)]
    m, se, z = conformality_check(fs[k], MapSequence.constant(finite3, 3), 3,
                                  np.random.default_rng(100 + k), 1_000_000)
    assert abs(z) < 3


def test_verify_c1_tag(finite3, rng):
    f = DensityField(lambda i, r, p: np.sin(3 * p), c1_bound=3.0)
    assert f.verify_c1(finite3, rng) <= 3.0 * (1 + 1e-3)
    with pytest.raises(ValueError):
        DensityField(lambda i, r, p: np.sin(3 * p), c1_bound=1.0).verify_c1(finite3, rng)


def test_admissibility_checked():
    spec = load_table_spec(resolve_table_path("finite3"))
    base = table_from_spec(spec)
    moved = dict(spec, scatterers=[dict(s) for s in spec["scatterers"]])
    moved["scatterers"][2] = {"center": [0.5, 0.03], "radius": 0.1}
    far = table_from_spec(moved)
    with pytest.raises(AdmissibilityError):
        MapSequence([base, far], blocks=[(2, base)], kappa=0.01).check_admissible()
    MapSequence([base, base], blocks=[(2, base)], kappa=0.01).check_admissible()
    with pytest.raises(AdmissibilityError):
        MapSequence([base], blocks=[(1, base)]).check_admissible()


# -- two routes ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def leaf():
    return StableCurve.segment(0, 0.4, 0.1, -3.0, 0.02)


def test_constant_density_gives_integral_of_psi(finite3, leaf):
    psi = lambda rr: 1.0 + 0.5 * (rr - leaf.r[0])  # noqa: E731
    res = leafwise_transfer(one, leaf, psi, MapSequence.constant(finite3, 2), 2, finite3.family)
    nodes, w = leaf.quadrature(8)
    exact = float(w @ psi(nodes))
    assert res.pointwise == pytest.approx(exact, rel=1e-9)
    assert res.leafwise == pytest.approx(exact, rel=1e-6)


def test_routes_agree_one_step(finite3):
    # short curve whose backward image is a single component
    W = StableCurve.segment(0, 0.4, 0.1, -3.0, 0.002)
    res = leafwise_transfer(wave(finite3), W, lambda rr: np.exp(rr), MapSequence.constant(finite3, 1), 1,
                            finite3.family)
    assert res.n_components == 1
    assert res.rel_diff < 1e-6


@pytest.mark.parametrize("n", [2, 3, 4])
def test_routes_agree_with_cuts(finite3, leaf, n):
    f = lambda i, r, p: 1 + 0.4 * np.sin(p) * np.cos(2 * np.pi * r / finite3.lengths[i])  # noqa: E731
    res = leafwise_transfer(f, leaf, lambda rr: 2.0 + np.cos(40 * rr), MapSequence.constant(finite3, n), n,
                            finite3.family)
    assert res.n_components > 1
    assert res.agrees
    assert res.leafwise == pytest.approx(res.contributions.sum())


def test_orbit_labels_survive_hash_wraparound(finite3, leaf):
    from seqbilliards.transfer import _orbit_labels

    # long orbits overflow the rolling hash; valid labels must stay distinguishable from "lost"
    lab = _orbit_labels(leaf, [finite3] * 8, np.linspace(*leaf.interval, 2001))
    assert np.all((lab >= 0) | (lab == -1))
    assert (lab >= 0).mean() > 0.99


def test_disagreement_raises(finite3, leaf, monkeypatch):
    import seqbilliards.transfer as tr

    monkeypatch.setattr(tr, "pointwise_integral", lambda *a, **k: 123.0)
    with pytest.raises(ToleranceError):
        tr.leafwise_transfer(one, leaf, lambda rr: np.ones_like(rr), MapSequence.constant(finite3, 1), 1,
                             finite3.family)


def test_pointwise_integral_n0(leaf):
    seq = MapSequence([])
    val = pointwise_integral(lambda i, r, p: p, leaf, lambda rr: np.ones_like(rr), seq, 0)
    nodes, w = leaf.quadrature(8)
    assert val == pytest.approx(float(w @ leaf.phi_at(nodes)), rel=1e-10)


# -- pushed test functions --------------------------------------------------------------


@pytest.fixture(scope="module")
def push_setup(finite3):
    p = ConeParams.for_table(finite3)
    W = StableCurve.segment(0, 0.3, 0.2, -4.0, 2 * p.delta)
    seq = MapSequence.constant(finite3, 1)
    return p, W, seq, pushed_grids(W, seq, 1, p, finite3.family)


def test_push_constant_gives_jacobian(finite3, push_setup):
    p, W, seq, grids = push_setup
    res = push_test(W, (lambda u: np.ones_like(u), lambda u: np.ones_like(u)), seq, 1, p, finite3.family,
                    grids=grids)
    assert res.certificates.max() < p.a
    assert np.all(res.rho_after == 0)
    # change of variables: the Jacobian integrates to the length of the image piece
    for u, uw, jac in zip(grids.u, grids.uw, grids.jac):
        assert np.trapezoid(jac, u) == pytest.approx(uw[-1] - uw[0], rel=1e-3)
    assert sum(uw[-1] - uw[0] for uw in grids.uw) == pytest.approx(W.length, rel=1e-9)


def test_push_does_not_expand_distance(finite3, push_setup, rng):
    from seqbilliards.transfer import random_test_function

    p, W, seq, grids = push_setup
    for _ in range(10):
        pair = tuple(random_test_function(rng, W.length, p.a, p.beta) for _ in range(2))
        res = push_test(W, pair, seq, 1, p, finite3.family, grids=grids)
        assert res.contraction <= 1 + 1e-9
        assert np.all(res.certificates <= p.sigma * p.a)


# -- memory loss ----------------------------------------------------------------------


def test_equal_densities_have_zero_difference(finite3, leaf):
    d, se = leafwise_difference(wave(finite3), wave(finite3), leaf, lambda rr: np.ones_like(rr),
                                MapSequence.constant(finite3, 3), 3, 2001)
    assert d == 0.0 and se == 0.0


def test_memory_loss_small_run(finite3):
    tab = memory_loss_experiment(wave(finite3), one, wave(finite3), finite3, 6,
                                 np.random.default_rng(5), n_orbits=4000, orbit_length=200)
    assert tab.n.tolist() == list(range(1, 7))
    assert np.all(np.isfinite(tab.global_diff)) and np.all(tab.global_se > 0)
    assert tab.global_diff[-1] < tab.global_diff[0]
