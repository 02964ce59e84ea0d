"""Acceptance criteria, one test each.  Every test records a PASS/FAIL line
(printed in the terminal summary) before asserting."""

import math
import time

import numpy as np
import pytest

from seqbilliards.applications.lorentz import LorentzConfig, lorentz_walk, memory_loss_sweep
from seqbilliards.billiard import hyperbolicity_check, invariance_check
from seqbilliards.cli import run
from seqbilliards.cone import ConeParams, bound_diameter, dictionary, hilbert_metric
from seqbilliards.config import default_config, load_table, load_table_spec, resolve_table_path
from seqbilliards.curves import StableCurve, check_stable, one_step_expansion
from seqbilliards.errors import ConfigError
from seqbilliards.stats import loglinear_fit
from seqbilliards.transfer import (
    MapSequence, conformality_check, leafwise_transfer, memory_loss_experiment, push_test, pushed_grids,
    random_test_function, transfer_eval,
)

pytestmark = pytest.mark.acceptance


def one(i, r, p):
    return np.ones(np.shape(r))


def wave(tab, amp=0.3):
    L = tab.lengths
    return lambda i, r, p: amp * np.cos(2 * np.pi * r / L[i])


# -- 1 --------------------------------------------------------------------------------------


def test_involution_and_invariance(finite3, packed3, verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst, zmax = 0.0, 0.0
    for tab in (finite3, packed3):
        idx, r, phi = tab.sample_srb(rng, 10_000)
        a = tab.forward(idx, r, phi)
        b = tab.forward(a.idx, a.r, -a.phi)  # T o I o T
        ok = a.ok & b.ok
        L = tab.lengths[idx]
        dr = np.abs((b.r - r + 0.5 * L) % L - 0.5 * L)
        err = np.where(b.idx == idx, np.maximum(dr, np.abs(-b.phi - phi)), np.inf)[ok]
        worst = max(worst, float(err.max()))
        Ls = tab.lengths
        obs = [lambda i, r, p: np.cos(p) ** 2, lambda i, r, p: np.sin(2 * np.pi * r / Ls[i]) * np.cos(p),
               lambda i, r, p: (i == 0) * np.exp(np.sin(p))]
        zmax = max(zmax, max(abs(z) for *_, z in invariance_check(tab, obs, 1_000_000, rng)))
    dt = time.perf_counter() - t0
    ok = verdict(1, worst <= 1e-8 and zmax <= 3 and dt < 120, involution_err=f"{worst:.2e}",
                 max_abs_z=f"{zmax:.2f}", seconds=f"{dt:.0f}")
    assert ok


# -- 2 --------------------------------------------------------------------------------------


def test_hyperbolicity(finite3, verdict):
    t0 = time.perf_counter()
    fam = finite3.family
    rep = hyperbolicity_check(finite3, fam, np.random.default_rng(2), samples=2000, n=8)
    lam_ok = rep.expansion == pytest.approx(1 + 2 * fam.kappa_star * fam.tau_star, rel=1e-15)
    rng = np.random.default_rng(3)
    worst, tried = 0.0, 0
    while tried < 100:
        j = int(rng.integers(3))
        W = StableCurve.segment(j, rng.uniform(0, finite3.lengths[j] - 0.1), rng.uniform(-0.8, 0.8),
                                -rng.uniform(0.5, 10.0), rng.uniform(0.2, 1.0) * fam.delta0)
        if not check_stable(W, fam).ok:
            continue
        tried += 1
        worst = max(worst, one_step_expansion(W, finite3, fam))
    dt = time.perf_counter() - t0
    ok = verdict(2, rep.cone_invariant and rep.C1 > 0 and lam_ok and worst <= 0.999 and dt < 300,
                 cone_margin=f"{rep.cone_margin:.4f}", C1=f"{rep.C1:.3f}", Lambda=rep.expansion,
                 one_step_max=f"{worst:.4f}", seconds=f"{dt:.0f}")
    assert ok


# -- 3 --------------------------------------------------------------------------------------


def test_hilbert_axioms_and_diameter(finite3, verdict):
    t0 = time.perf_counter()
    p = ConeParams.for_table(finite3)
    L = 2 * p.delta
    u = np.linspace(0.0, L, 129)
    rng = np.random.default_rng(4)
    d = lambda x, y: hilbert_metric(u, x, y, p.a, p.beta)  # noqa: E731
    sym, proj, proj_pow2, tri = 0.0, 0.0, 0.0, -math.inf
    for _ in range(50):
        f1, f2, f3 = (random_test_function(rng, L, p.a, p.beta)(u) for _ in range(3))
        d12 = d(f1, f2)
        sym = max(sym, abs(d12 - d(f2, f1)))
        proj_pow2 = max(proj_pow2, abs(d(4.0 * f1, 0.5 * f2) - d12))
        lam = rng.uniform(0.1, 10.0)
        proj = max(proj, abs(d(lam * f1, f2) - d12))
        tri = max(tri, d12 - d(f1, f3) - d(f3, f2))
    W = StableCurve.segment(0, 0.4, 0.1, -3.0, L)
    shapes = dictionary(W, p.sigma * p.a / 0.9, p.beta)
    diam = max(hilbert_metric(s.u, s.values, t.values, p.a, p.beta) for s in shapes for t in shapes)
    dt = time.perf_counter() - t0
    ok = verdict(3, sym == 0.0 and proj_pow2 == 0.0 and proj <= 1e-12 and tri <= 1e-6
                 and diam <= p.diameter_bound and dt < 120,
                 symmetry=sym, projectivity=f"{proj:.1e}", triangle_excess=f"{tri:.2e}",
                 dictionary_diameter=f"{diam:.3f}", bound=f"{p.diameter_bound:.3f}", seconds=f"{dt:.0f}")
    assert ok


# -- 4 --------------------------------------------------------------------------------------


def test_test_function_contraction(finite3, verdict):
    t0 = time.perf_counter()
    p = ConeParams.for_table(finite3)
    fam = finite3.family
    W = StableCurve.segment(0, 0.3, 0.2, -4.0, 2 * p.delta)
    seq = MapSequence.constant(finite3, 5)
    rng = np.random.default_rng(5)
    grids = pushed_grids(W, seq, 1, p, fam)
    worst1 = 0.0
    for _ in range(100):
        pair = tuple(random_test_function(rng, W.length, p.a, p.beta) for _ in range(2))
        worst1 = max(worst1, push_test(W, pair, seq, 1, p, fam, grids=grids).contraction)
    # largest distance ratio per n, then a log-linear fit across n
    ns, ratios = [], []
    for n in range(1, 5):
        g = pushed_grids(W, seq, n, p, fam)
        worst = 0.0
        for _ in range(10):
            pair = tuple(random_test_function(rng, W.length, p.a, p.beta) for _ in range(2))
            res = push_test(W, pair, seq, n, p, fam, grids=g)
            worst = max(worst, float(res.rho_after.max() / res.rho_before))
        ns.append(n)
        ratios.append(worst)
    fit = loglinear_fit(ns, ratios)
    dt = time.perf_counter() - t0
    ok = verdict(4, worst1 <= 1.0 and fit.rate < 1 and max(ratios) < 1 and dt < 300,
                 n1_max_ratio=f"{worst1:.4f}", per_n=[round(x, 4) for x in ratios],
                 per_step_factor=f"{fit.rate:.3f}", seconds=f"{dt:.0f}")
    assert ok


# -- 5 --------------------------------------------------------------------------------------


def test_route_equivalence(finite3, verdict):
    t0 = time.perf_counter()
    fam = finite3.family
    rng = np.random.default_rng(6)
    seq = MapSequence.constant(finite3, 4)
    L = finite3.lengths
    worst, evaluated = 0.0, 0
    for k in range(20):
        j = k % 3
        c1, c2 = rng.uniform(-0.4, 0.4, 2)
        f = lambda i, r, ph, c1=c1, c2=c2: 1 + c1 * np.cos(2 * np.pi * r / L[i]) + c2 * np.sin(ph)  # noqa: E731
        W = StableCurve.segment(j, rng.uniform(0, L[j] - 0.05), rng.uniform(-0.7, 0.7),
                                -rng.uniform(1.0, 8.0), rng.uniform(0.005, 0.03))
        if not check_stable(W, fam).ok:
            W = StableCurve.segment(j, 0.1, 0.0, -3.0, 0.01)
        w0, k0 = W.r[0], rng.uniform(5, 40)
        psi = lambda s, w0=w0, k0=k0: 1.5 + np.cos(k0 * (s - w0))  # noqa: E731
        n = 1 + k % 4
        worst = max(worst, leafwise_transfer(f, W, psi, seq, n, fam, check=False).rel_diff)
        evaluated += 1
    idx, r, phi = finite3.sample_srb(rng, 100_000)
    vals, okm = transfer_eval(one, seq, 4, idx, r, phi)
    exact_one = bool(np.all(vals[okm] == 1.0))
    zs = [abs(conformality_check(fn, seq, 3, np.random.default_rng(60 + m), 1_000_000)[2])
          for m, fn in enumerate([lambda i, r, p: 1 + wave(finite3)(i, r, p), lambda i, r, p: 1 + 0.5 * np.sin(p),
                                  lambda i, r, p: np.exp(np.cos(p)) * (1 + i)])]
    dt = time.perf_counter() - t0
    ok = verdict(5, worst <= 1e-3 and exact_one and max(zs) <= 3 and dt < 600,
                 triples=evaluated, max_rel_diff=f"{worst:.2e}", L1_exact=exact_one,
                 conformality_max_z=f"{max(zs):.2f}", seconds=f"{dt:.0f}")
    assert ok


# -- 6 --------------------------------------------------------------------------------------


def test_loss_of_memory(packed3, verdict):
    t0 = time.perf_counter()
    u = wave(packed3)
    f = lambda i, r, p: 1 + u(i, r, p)  # noqa: E731
    dt_ = memory_loss_experiment(f, one, u, packed3, 12, np.random.default_rng(0), n_orbits=20000,
                                 orbit_length=500)
    fit = dt_.fit
    dt = time.perf_counter() - t0
    ok = verdict(6, fit.n_points == 12 and fit.r2 >= 0.95 and fit.rate < 1 and dt < 900,
                 r2=f"{fit.r2:.4f}", theta_hat=f"{fit.rate:.4f}", points=fit.n_points, seconds=f"{dt:.0f}")
    assert ok


# -- 7 --------------------------------------------------------------------------------------


def test_open_system(tmp_path, verdict):
    t0 = time.perf_counter()
    code, man = run(default_config("escape"), tmp_path)
    c = man["constants"]
    dt = time.perf_counter() - t0
    ok = verdict(7, code == 0 and c["ratio_spread"] < 0.01 and 0 < c["nu_hat"] < 1 and c["eigen_residual"] < 0.05
                 and c["nu_hat_doubled"] < c["nu_hat"] and dt < 900,
                 nu_hat=f"{c['nu_hat']:.5f}", spread=f"{c['ratio_spread']:.1e}",
                 eigen_residual=f"{c['eigen_residual']:.1e}", nu_doubled=f"{c['nu_hat_doubled']:.5f}",
                 seconds=f"{dt:.0f}")
    assert ok


# -- 8 --------------------------------------------------------------------------------------


def test_scattering_consistency(tmp_path, verdict):
    t0 = time.perf_counter()
    code, man = run(default_config("scatter"), tmp_path)
    rows = [line.split(",") for line in (tmp_path / "rates.csv").read_text().splitlines()[4:]]
    z = [float(r[5]) for r in rows]
    reentries = sum(int(r[6]) for r in rows)
    dt = time.perf_counter() - t0
    ok = verdict(8, code == 0 and max(abs(v) for v in z) <= 1.96 and reentries == 0 and dt < 900,
                 N=[int(r[0]) for r in rows], z=[round(v, 2) for v in z], reentries=reentries,
                 seconds=f"{dt:.0f}")
    assert ok


# -- 9 --------------------------------------------------------------------------------------


def _rejects(**kw):
    try:
        LorentzConfig(**kw)
    except ConfigError:
        return True
    return False


def test_lorentz_gas(verdict):
    t0 = time.perf_counter()
    valid = LorentzConfig(r=0.4, rho=0.25, eps=0.05)
    validation = (valid.tau_star == pytest.approx(0.05) and valid.center_bounds == pytest.approx((0.4, 0.6))
                  and not _rejects(r=1 / 3, rho=0.34) and _rejects(r=0.5) and _rejects(r=0.3)
                  and _rejects(r=0.375, rho=0.25) and _rejects(r=0.4, rho=math.sqrt(2) / 2 - 0.4)
                  and _rejects(r=0.4, rho=0.25, eps=0.16))
    cfg = LorentzConfig(r=0.42, rho=0.25, eps=0.01, N=4, seed=0)
    rec = lorentz_walk(cfg, 1000, 10_000, np.random.default_rng(9), keep_paths=False)
    mean, se = rec.drift()
    zd = np.abs(mean / se)
    sweep = memory_loss_sweep(cfg, [1, 2, 4], 3, 12, 2_000_000, np.random.default_rng(10))
    N = sweep.smallest
    fit = sweep.tables[N].fit if N is not None else None
    dt = time.perf_counter() - t0
    ok = verdict(9, validation and rec.ok.all() and zd.max() <= 3 and N is not None and dt < 1800,
                 validation=validation, drift_z=[round(float(v), 2) for v in zd], smallest_N=N,
                 slope=None if fit is None else f"{fit.slope:.4f}+-{fit.slope_se:.4f}", seconds=f"{dt:.0f}")
    assert ok


# -- 10 -------------------------------------------------------------------------------------


def test_closed_forms(verdict):
    delta, th = bound_diameter(0.9, 60.0)
    worst_c = 0.0
    for name in ("finite3", "packed3"):
        tab = load_table(name)
        spec = load_table_spec(resolve_table_path(name))
        total = sum(2 * math.pi * s["radius"] for s in spec["scatterers"])
        worst_c = max(worst_c, abs(tab.srb_constant - 1 / (2 * total)))
    ok = verdict(10, abs(delta - 9.8778) <= 1e-3 and abs(th - 0.98629) <= 1e-3 and worst_c <= 1e-12,
                 Delta=f"{delta:.5f}", tanh=f"{th:.6f}", c_err=f"{worst_c:.1e}")
    assert ok
