import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqbilliards.curves import (
    StableCurve, check_stable, curve_distance, generations, growth_sums, one_step_expansion, pull_back,
)


@pytest.fixture(scope="module")
def witness():
    return StableCurve.segment(0, 0.4, 0.1, -3.0, 0.02)


def test_segment_length_and_slope(witness):
    assert witness.length == pytest.approx(0.02, rel=1e-12)
    assert np.allclose(witness.slope_at(np.linspace(*witness.interval, 9)), -3.0)


def test_unsorted_samples_are_ordered():
    W = StableCurve(0, [0.3, 0.1, 0.2], [0.0, 0.2, 0.1])
    assert list(W.r) == [0.1, 0.2, 0.3]
    with pytest.raises(ValueError):
        StableCurve(0, [0.1, 0.1], [0.0, 0.0])


def test_check_stable_flags_bad_curves(finite3):
    fam = finite3.family
    assert check_stable(StableCurve.segment(0, 0.4, 0.1, -3.0, 0.02), fam).ok
    rising = check_stable(StableCurve.segment(0, 0.4, 0.1, 0.5, 0.02), fam)
    assert "slope leaves the stable cone" in rising.problems
    long = check_stable(StableCurve.segment(0, 0.4, 0.1, -3.0, 2 * fam.delta0), fam)
    assert "longer than delta0" in long.problems


# -- distance ------------------------------------------------------------------


def test_curve_distance_examples(witness):
    assert curve_distance(witness, witness, 4) == 0.0
    up = StableCurve(0, witness.r, witness.phi + 0.003)
    assert curve_distance(witness, up, 4) == pytest.approx(0.003, abs=1e-12)
    far = StableCurve.segment(0, 0.9, 0.1, -3.0, 0.02)
    assert curve_distance(witness, far, 4) == math.inf
    other = StableCurve(1, witness.r, witness.phi)
    assert curve_distance(witness, other, 4) == math.inf


def test_curve_distance_counts_interval_mismatch(witness):
    a, b = witness.interval
    shorter = StableCurve(0, np.linspace(a, b - 0.002, 9), witness.phi_at(np.linspace(a, b - 0.002, 9)))
    assert curve_distance(witness, shorter, 4) == pytest.approx(0.002, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.floats(-0.01, 0.01), st.floats(0.0, 0.005))
def test_curve_distance_symmetric(h, cut):
    W1 = StableCurve.segment(0, 0.4, 0.1, -3.0, 0.02)
    r = np.linspace(0.4 + cut, W1.interval[1], 9)
    W2 = StableCurve(0, r, W1.phi_at(r) + h)
    assert curve_distance(W1, W2, 4) == pytest.approx(curve_distance(W2, W1, 4), abs=1e-12)


# -- backward images ---------------------------------------------------------------


def test_pull_back_components_are_stable(finite3, witness):
    comps = pull_back(witness, finite3, finite3.family)
    assert len(comps) >= 1
    for c in comps:
        chk = check_stable(c, finite3.family)
        assert chk.ok, chk.problems
        assert finite3.family.delta0 / 2 * (1 - 1e-6) <= c.length


def test_pull_back_length_matches_polyline(finite3, witness):
    # independent oracle: push a dense grid through the inverse map and sum chord lengths
    comps = pull_back(witness, finite3, finite3.family)
    s = np.linspace(*witness.interval, 400_001)
    st_ = finite3.backward(np.zeros(s.size, dtype=int), s, witness.phi_at(s))
    assert st_.ok.all()
    d = np.hypot(np.diff(st_.r), np.diff(st_.phi))
    same = (st_.idx[1:] == st_.idx[:-1]) & (d < 1e-3)
    assert sum(c.length for c in comps) == pytest.approx(d[same].sum(), rel=1e-6)


def test_pull_back_across_tangency_preimage_splits(finite3):
    # found by scanning segments on scatterer 0; the backward image crosses a grazing line
    W = StableCurve.segment(0, 0.05, -0.6, -3.0, 0.04)
    comps = pull_back(W, finite3, finite3.family)
    labels = {(c.scatterer_index, c.strip(finite3.family.k0)) for c in comps}
    assert len(labels) >= 2
    assert all(check_stable(c, finite3.family).ok for c in comps)


def test_generations_zero_and_one(finite3, witness):
    fams = generations(witness, finite3, 1, finite3.family)
    assert len(fams[0]) == 1
    assert fams[0].members[0].length == pytest.approx(witness.length)
    direct = pull_back(witness, finite3, finite3.family)
    from_gen = fams[1].curves(finite3.lengths)
    assert len(direct) == len(from_gen)
    for a, b in zip(direct, from_gen):
        assert np.allclose(a.r, b.r) and np.allclose(a.phi, b.phi)


def test_generations_deterministic(finite3, witness):
    one = [growth_sums(f, finite3.family.delta0)[0] for f in generations(witness, finite3, 3, finite3.family)]
    two = [growth_sums(f, finite3.family.delta0)[0] for f in generations(witness, finite3, 3, finite3.family)]
    assert np.allclose(one, two, rtol=1e-9, atol=0)
    assert all(math.isfinite(v) for v in one)


def test_growth_sums_one_step(finite3, witness):
    fam1 = generations(witness, finite3, 1, finite3.family)[1]
    total, short = growth_sums(fam1, finite3.family.delta0)
    assert 0.0 < short <= total < 1.0


def test_one_step_expansion_below_one(finite3, rng):
    worst, tried = 0.0, 0
    while tried < 100:
        r0 = rng.uniform(0, finite3.lengths[0] - 0.1)
        phi0 = rng.uniform(-0.8, 0.8)
        slope = -rng.uniform(0.5, 10.0)
        W = StableCurve.segment(0, r0, phi0, slope, rng.uniform(0.2, 1.0) * finite3.family.delta0)
        if not check_stable(W, finite3.family).ok:
            continue
        tried += 1
        worst = max(worst, one_step_expansion(W, finite3, finite3.family))
    assert 0.0 < worst <= 0.999
