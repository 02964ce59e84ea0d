"""Transfer operators of sequential billiard maps.

``L_n f = f o T_n^{-1}`` for ``T_n = T_n o ... o T_1`` (the invariant measure is
shared by every map, so no Jacobian factor appears).  Leafwise integrals
``int_W (L_n f) psi dm_W`` are computed by two independent routes:

* pointwise: quadrature over ``W`` of ``f`` pulled back along backward orbits,
  split at the discontinuities of the composed inverse map;
* leafwise: a sum over the homogeneous backward images ``W_i`` of ``W`` of
  ``int_{W_i} f (psi o T_n) J_{W_i} T_n``, with ``psi o T_n`` and the Jacobian
  obtained from forward orbits of points on the spline representation of
  ``W_i``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .billiard import BilliardTable, FamilyParams, PhasePoint, differential_from_step, map_distance
from .cone import ConeParams, hilbert_metric, hoelder_certificate, shape_logs
from .curves import RootOrbit, StableCurve, generations
from .errors import AdmissibilityError, CertificateViolation, TangencyError, ToleranceError
from .stats import LogLinearFit, loglinear_fit, mean_and_se

Observable = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


@dataclass
class DensityField:
    """A density on phase space together with optional hole indicators.

    ``masks`` maps a backward time ``j`` to a predicate; the transferred density
    is multiplied by the predicate evaluated on the ``j``-th backward iterate.
    """

    fn: Observable
    c1_bound: float = math.nan
    masks: dict = field(default_factory=dict)

    def __call__(self, idx, r, phi):
        return np.asarray(self.fn(idx, r, phi), dtype=float)

    def verify_c1(self, table: BilliardTable, rng: np.random.Generator, pairs: int = 1000,
                  h: float = 1e-6) -> float:
        """Largest finite-difference slope on random nearby pairs; checked against the tag."""
        idx, r, phi = table.sample_srb(rng, pairs)
        d = rng.normal(size=(2, pairs))
        d *= h / np.hypot(d[0], d[1])
        r2 = np.mod(r + d[0], table.lengths[idx])
        phi2 = np.clip(phi + d[1], -0.5 * math.pi, 0.5 * math.pi)
        step = np.hypot(np.mod(r2 - r + 0.5 * table.lengths[idx], table.lengths[idx])
                        - 0.5 * table.lengths[idx], phi2 - phi)
        slope = float(np.max(np.abs(self(idx, r2, phi2) - self(idx, r, phi)) / step))
        if math.isfinite(self.c1_bound) and slope > self.c1_bound * (1 + 1e-3):
            raise ValueError(f"finite-difference slope {slope:.4g} exceeds the C1 tag {self.c1_bound:.4g}")
        return slope


@dataclass
class MapSequence:
    """Tables ``T_1, T_2, ...`` applied in order, with optional block metadata.

    ``blocks`` lists ``(length, anchor)`` pairs; every table of a block must lie
    within ``kappa`` of its anchor in the map distance.
    """

    tables: list
    blocks: Optional[list] = None
    kappa: Optional[float] = None

    def __len__(self):
        return len(self.tables)

    @classmethod
    def constant(cls, table: BilliardTable, n: int) -> "MapSequence":
        return cls([table] * n)

    def backward_list(self, n: int) -> list:
        """Maps in the order they are inverted: ``[T_n, ..., T_1]``."""
        if n > len(self.tables):
            raise ValueError("sequence shorter than requested horizon")
        return list(reversed(self.tables[:n]))

    def check_admissible(self, **kw) -> None:
        if not self.blocks:
            return
        if self.kappa is None:
            raise AdmissibilityError("block metadata given without kappa")
        pos = 0
        for length, anchor in self.blocks:
            for t in self.tables[pos:pos + length]:
                if t is anchor:
                    continue
                if not map_distance(t, anchor, self.kappa, **kw):
                    raise AdmissibilityError(f"table at position {pos} is not kappa-close to its anchor")
            pos += length


def transfer_eval(f, seq: MapSequence, n: int, idx, r, phi):
    """Values of ``L_n f`` at the given points, and a mask of valid orbits."""
    idx = np.asarray(idx, dtype=np.int64)
    r = np.asarray(r, dtype=float)
    phi = np.asarray(phi, dtype=float)
    masks = getattr(f, "masks", {}) or {}
    weight = np.ones(idx.shape)
    ok = np.ones(idx.shape, dtype=bool)
    if n in masks:
        weight *= masks[n](idx, r, phi)
    for j, tab in enumerate(seq.backward_list(n)):
        st = tab.backward(idx, r, phi)
        ok &= st.ok
        idx = np.where(st.ok, st.idx, 0)
        r = np.where(st.ok, st.r, 0.0)
        phi = np.where(st.ok, st.phi, 0.0)
        t = n - j - 1
        if t in masks:
            weight = weight * masks[t](idx, r, phi)
    vals = np.where(ok, f(idx, r, phi) * weight, 0.0)
    return vals, ok


def transfer_at(f, seq: MapSequence, n: int, x: PhasePoint) -> float:
    """``L_n f`` at one phase point; tangencies along the backward orbit raise."""
    vals, ok = transfer_eval(f, seq, n, [x.scatterer_index], [x.r], [x.phi])
    if not ok[0]:
        raise TangencyError("backward orbit meets a tangency")
    return float(vals[0])


# -- pointwise route ---------------------------------------------------------------


def _orbit_labels(W: StableCurve, maps: list, s: np.ndarray):
    """Hash of the collision sequence of the backward orbit of ``W(s)``."""
    idx = np.full(s.shape, W.scatterer_index, dtype=np.int64)
    r = np.mod(s, maps[0].lengths[W.scatterer_index])
    phi = W.phi_at(s)
    h = np.zeros(s.shape, dtype=np.int64)
    ok = np.ones(s.shape, dtype=bool)
    for tab in maps:
        st = tab.backward(idx, r, phi)
        ok &= st.ok
        code = (st.idx * 5 + st.kx + 2) * 5 + st.ky + 2
        h = h * 1000003 + np.where(st.ok, code, -7)
        idx = np.where(st.ok, st.idx, 0)
        r = np.where(st.ok, st.r, 0.0)
        phi = np.where(st.ok, st.phi, 0.0)
    # the hash wraps around for long orbits; clear the sign bit so -1 stays reserved for lost orbits
    return np.where(ok, h & np.int64(0x7FFFFFFFFFFFFFFF), -1)


def _smooth_pieces(W: StableCurve, maps: list, n_grid: int = 4097, tol: float = 1e-13):
    """Sub-intervals of ``W`` (in ``r``) on which the backward orbit is smooth."""
    a, b = W.interval
    s = np.linspace(a, b, n_grid)
    lab = _orbit_labels(W, maps, s)
    brackets = [(s[j], lab[j], s[j + 1], lab[j + 1]) for j in np.flatnonzero(lab[1:] != lab[:-1])]
    cuts = []
    while brackets:
        mids = np.array([0.5 * (x + y) for x, _, y, _ in brackets])
        lm = _orbit_labels(W, maps, mids)
        nxt = []
        for (x, lx, y, ly), m, l in zip(brackets, mids, lm):
            if y - x <= tol or m <= x or m >= y:
                cuts.append((x, lx, y, ly))
                continue
            if l != lx:
                nxt.append((x, lx, m, l))
            if l != ly:
                nxt.append((m, l, y, ly))
        brackets = nxt
    cuts.sort()
    pieces = []
    left, ll = a, lab[0]
    for x, lx, y, ly in cuts:
        if ll >= 0:
            pieces.append((left, x))
        left, ll = y, ly
    if ll >= 0:
        pieces.append((left, b))
    return [(x, y) for x, y in pieces if y > x]


def _gauss(a, b, panels):
    edges = np.linspace(a, b, panels + 1)
    h = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    return (mid[:, None] + h[:, None] * _GL_X).ravel(), (h[:, None] * _GL_W).ravel()


def pointwise_integral(f, W: StableCurve, psi, seq: MapSequence, n: int,
                       rtol: float = 1e-9, max_panels: int = 4096) -> float:
    """``int_W (L_n f) psi dm_W`` by adaptive Gauss quadrature on smooth pieces.

    ``psi`` is a function of the ``r`` coordinate on ``W``.
    """
    maps = seq.backward_list(n)
    pieces = _smooth_pieces(W, maps) if n > 0 else [W.interval]
    idx0 = W.scatterer_index

    def integrand(rr):
        vals, ok = transfer_eval(f, seq, n, np.full(rr.shape, idx0),
                                 np.mod(rr, maps[0].lengths[idx0] if maps else 1e300), W.phi_at(rr))
        return vals * psi(rr) * W.speed(rr)

    total = 0.0
    for x, y in pieces:
        panels = 2
        nodes, w = _gauss(x, y, panels)
        prev = float(w @ integrand(nodes))
        while panels < max_panels:
            panels *= 2
            nodes, w = _gauss(x, y, panels)
            cur = float(w @ integrand(nodes))
            done = abs(cur - prev) <= rtol * max(abs(cur), 1e-300)
            prev = cur
            if done:
                break
        total += prev
    return total


# -- leafwise route ----------------------------------------------------------------


def forward_orbit(maps: Sequence[BilliardTable], idx, r, phi, vec):
    """Forward images of points and tangent vectors under ``maps`` in order."""
    ok = np.ones(np.shape(idx), dtype=bool)
    for tab in maps:
        st = tab.forward(idx, r, phi)
        D = differential_from_step(tab, idx, phi, st.idx, st.phi, st.tau)
        vec = np.einsum("nij,nj->ni", D, vec)
        ok &= st.ok
        idx = np.where(st.ok, st.idx, 0)
        r = np.where(st.ok, st.r, 0.0)
        phi = np.where(st.ok, st.phi, 0.0)
    return idx, r, phi, vec, ok


def backward_chain(W: StableCurve, maps: Sequence[BilliardTable], s: np.ndarray):
    """Backward orbit of ``W(s)`` and the forward derivative of ``T_n`` along it.

    Returns (idx, r, phi, vec, D, ok): the point after ``len(maps)`` backward
    steps, the image of the tangent ``(1, phi_W')`` under the inverse
    differentials, and the product of forward differentials that carries the
    tangent space at that point back to ``W(s)``.
    """
    s = np.asarray(s, dtype=float)
    idx = np.full(s.shape, W.scatterer_index, dtype=np.int64)
    r = np.mod(s, maps[0].lengths[W.scatterer_index]) if maps else s.copy()
    phi = W.phi_at(s)
    vec = np.stack([np.ones_like(s), W.slope_at(s)], axis=-1)
    D = np.broadcast_to(np.eye(2), s.shape + (2, 2)).copy()
    ok = np.ones(s.shape, dtype=bool)
    for tab in maps:
        st = tab.backward(idx, r, phi)
        ok &= st.ok
        i1 = np.where(ok, st.idx, 0)
        p1 = np.where(ok, st.phi, 0.0)
        Df = differential_from_step(tab, i1, p1, idx, phi, np.where(ok, st.tau, 1.0))
        vec = np.linalg.solve(Df, vec[..., None])[..., 0]
        D = np.einsum("nij,njk->nik", D, Df)
        idx, r, phi = i1, np.where(ok, st.r, 0.0), p1
    return idx, r, phi, vec, D, ok


@dataclass
class LeafwiseResult:
    leafwise: float
    pointwise: float
    rel_diff: float
    n_components: int
    n_discarded: int
    contributions: np.ndarray = field(repr=False, default=None)
    quad_error: float = 0.0

    @property
    def agrees(self) -> bool:
        return self.rel_diff <= 1e-3


def leafwise_integral(f, W: StableCurve, psi, seq: MapSequence, n: int,
                      family: FamilyParams, panels: int = 2):
    """Per-component values of ``int_{W_i} f (psi o T_n) J_{W_i} T_n dm_{W_i}``.

    Returns the contributions at ``panels`` and ``2 panels`` Gauss panels per
    component, and the number of discarded pieces.  Each component is parametrised by the root coordinate of its image on
    ``W``; ``J_{W_i} T_n`` is the norm of the forward derivative applied to the
    unit tangent of ``W_i``.  Forward re-integration from an interpolated
    ``W_i`` is avoided because components near tangencies expand by many
    orders of magnitude.
    """
    maps = seq.backward_list(n)
    fam = generations(W, maps, n, family)[-1]
    if not fam.members:
        return np.zeros(0), np.zeros(0), fam.discarded
    lo = np.array([mm.s_lo for mm in fam.members])
    hi = np.array([mm.s_hi for mm in fam.members])

    def contributions(p):
        edges = lo[:, None] + (hi - lo)[:, None] * np.linspace(0.0, 1.0, p + 1)
        h = 0.5 * np.diff(edges, axis=1)
        mid = 0.5 * (edges[:, 1:] + edges[:, :-1])
        nodes = mid[..., None] + h[..., None] * _GL_X
        w = h[..., None] * _GL_W
        idx, r, phi, vec, D, ok = backward_chain(W, maps, nodes.ravel())
        tnorm = np.hypot(vec[:, 0], vec[:, 1])  # dm_{W_i} per unit root parameter
        unit = vec / np.where(tnorm > 0, tnorm, 1.0)[:, None]
        img = np.einsum("nij,nj->ni", D, unit)
        jac = np.hypot(img[:, 0], img[:, 1])  # J_{W_i} T_n
        vals = np.where(ok, f(idx, r, phi) * psi(nodes.ravel()) * jac * tnorm, 0.0)
        return (w * vals.reshape(nodes.shape)).sum(axis=(1, 2))

    return contributions(panels), contributions(2 * panels), fam.discarded


def leafwise_transfer(f, W: StableCurve, psi, seq: MapSequence, n: int, family: FamilyParams,
                      tol: float = 1e-3, check: bool = True) -> LeafwiseResult:
    """Leafwise integral of ``L_n f`` against ``psi`` by both routes.

    Raises ``ToleranceError`` when the routes disagree by more than ``tol``
    (relative) and ``check`` is set.
    """
    coarse, fine, ndisc = leafwise_integral(f, W, psi, seq, n, family)
    lw = float(fine.sum())
    pw = pointwise_integral(f, W, psi, seq, n)
    rel = abs(lw - pw) / max(abs(pw), 1e-300)
    res = LeafwiseResult(lw, pw, rel, fine.size, ndisc, fine, abs(lw - float(coarse.sum())))
    if check and rel > tol:
        raise ToleranceError(f"leafwise {lw:.10g} vs pointwise {pw:.10g} (rel {rel:.3g})")
    return res


# -- pushing test functions forward ---------------------------------------------------


@dataclass
class PushResult:
    certificates: np.ndarray  # per component, Hoelder constant of the pushed function
    rho_before: float  # on a uniform grid of W
    rho_image: np.ndarray  # per component, on the image of its grid in W
    rho_after: np.ndarray  # per component
    sigma_bound: float

    @property
    def contraction(self) -> float:
        """Largest ratio of distances after and before the push."""
        ok = self.rho_image > 0
        return float(np.max(self.rho_after[ok] / self.rho_image[ok])) if np.any(ok) else 0.0


@dataclass
class PushedGrids:
    """Sample grids of every component of ``G_n(W)`` and of their images in ``W``."""

    u: np.ndarray  # (components, m) arclength along each component
    uw: np.ndarray  # (components, m) arclength along W of the image points
    jac: np.ndarray  # (components, m) stable Jacobian of T_n
    n_components: int


def pushed_grids(W: StableCurve, seq: MapSequence, n: int, params: ConeParams,
                 family: FamilyParams, m: int = 33) -> PushedGrids:
    fam_cone = dataclasses.replace(family, delta0=params.delta0)
    maps = seq.backward_list(n)
    members = generations(W, maps, n, fam_cone)[-1].members
    orbit = RootOrbit(W, maps, family.k0)
    lo = np.array([mm.s_lo for mm in members])
    hi = np.array([mm.s_hi for mm in members])
    t = np.linspace(0.0, 1.0, m)
    s = lo[:, None] + (hi - lo)[:, None] * t
    *_, vec, _, ok = orbit.evaluate(s.ravel(), n)
    g = np.hypot(vec[:, 0], vec[:, 1]).reshape(s.shape)
    ok = ok.reshape(s.shape).all(axis=1)
    # arclength along each component: Gauss on every grid cell
    h = 0.5 * np.diff(s, axis=1)
    mid = 0.5 * (s[:, 1:] + s[:, :-1])
    nodes = mid[..., None] + h[..., None] * _GL_X
    *_, vn, _, _ = orbit.evaluate(nodes.ravel(), n)
    speed = np.hypot(vn[:, 0], vn[:, 1]).reshape(nodes.shape)
    cell = (h[..., None] * _GL_W * speed).sum(axis=-1)
    u = np.concatenate([np.zeros((s.shape[0], 1)), np.cumsum(cell, axis=1)], axis=1)
    jac = np.sqrt(1.0 + W.slope_at(s) ** 2) / g
    uw = W.arclength_to(s.ravel()).reshape(s.shape)
    return PushedGrids(u[ok], uw[ok], jac[ok], int(ok.sum()))


def push_test(W: StableCurve, psi_pair, seq: MapSequence, n: int, params: ConeParams,
              family: FamilyParams, m: int = 33, fine: int = 257, check: bool = True,
              grids: Optional[PushedGrids] = None) -> PushResult:
    """Push two test functions on ``W`` forward to every component of ``G_n(W)``.

    ``psi_pair`` holds two functions of arclength along ``W``.  The pushed
    function on ``W_i`` is ``psi o T_n`` times the stable Jacobian.  Each
    component's distance is compared with the distance of the originals on
    the images of its grid points, so both sides use the same point set.
    ``grids`` may be reused across pairs for the same ``(W, seq, n)``.
    """
    grids = grids or pushed_grids(W, seq, n, params, family, m)
    certs, after, image = [], [], []
    for u, uw, jac in zip(grids.u, grids.uw, grids.jac):
        w1, w2 = psi_pair[0](uw), psi_pair[1](uw)
        v1, v2 = w1 * jac, w2 * jac
        certs.append(max(hoelder_certificate(u, v1, params.beta), hoelder_certificate(u, v2, params.beta)))
        after.append(hilbert_metric(u, v1, v2, params.a, params.beta))
        image.append(hilbert_metric(uw, w1, w2, params.a, params.beta))
    grid = np.linspace(0.0, W.length, fine)
    before = hilbert_metric(grid, psi_pair[0](grid), psi_pair[1](grid), params.a, params.beta)
    certs = np.array(certs)
    bound = params.sigma * params.a
    if check and certs.size and certs.max() > bound:
        raise CertificateViolation(f"pushed certificate {certs.max():.4g} exceeds sigma a = {bound:.4g}")
    return PushResult(certs, before, np.array(image), np.array(after), bound)


def fit_push_constants(grids: PushedGrids, params: ConeParams) -> dict:
    """Distortion constant, largest stable Jacobian and the implied contraction factor.

    ``C_d`` is the smallest constant with ``|log J(x) - log J(y)| <= C_d d^{1/3}``
    on every component; ``sigma_fit = J_max^beta + C_d delta0^{1/3-beta} / a``
    bounds the Hoelder constant of pushed test functions relative to ``a``.
    """
    cd = max((hoelder_certificate(u, j, 1.0 / 3.0) for u, j in zip(grids.u, grids.jac)), default=0.0)
    jmax = float(grids.jac.max()) if grids.jac.size else 0.0
    sigma = jmax ** params.beta + cd * params.delta0 ** (1.0 / 3.0 - params.beta) / params.a
    return {"C_d": cd, "J_max": jmax, "sigma_fit": sigma}


def random_test_function(rng: np.random.Generator, length: float, a: float, exponent: float):
    """Positive combination of dictionary shapes; the certificate stays below ``0.9 a``."""
    w = rng.dirichlet(np.ones(7))

    def psi(u):
        logs = shape_logs(np.asarray(u, dtype=float), length, a, exponent)
        return np.exp(w @ logs)

    return psi


# -- global experiments -----------------------------------------------------------


def conformality_check(f, seq: MapSequence, n: int, rng: np.random.Generator, samples: int):
    """z-score of ``int L_n f dmu - int f dmu`` from paired samples."""
    tab = seq.tables[0]
    idx, r, phi = tab.sample_srb(rng, samples)
    ln, ok = transfer_eval(f, seq, n, idx, r, phi)
    d = (ln - f(idx, r, phi))[ok]
    m, se = mean_and_se(d)
    return m, se, (m / se if se > 0 else 0.0)


@dataclass
class DecayTable:
    n: np.ndarray
    leafwise: np.ndarray
    leafwise_se: np.ndarray
    global_diff: np.ndarray
    global_se: np.ndarray
    fit: LogLinearFit

    def rows(self):
        for k in range(self.n.size):
            yield (int(self.n[k]), float(self.leafwise[k]), float(self.global_diff[k]),
                   self.fit.rate, self.fit.ci[0], self.fit.ci[1])


def lagged_correlations(table: BilliardTable, u: Observable, v: Observable, horizon: int,
                        rng: np.random.Generator, n_orbits: int, orbit_length: int):
    """``E[u(x) v(T^n x)]`` for ``n = 0..horizon`` under the invariant measure.

    Uses every window of many stationary orbits; the standard error is from
    the spread of per-orbit means.
    """
    idx, r, phi = table.sample_srb(rng, n_orbits)
    U = np.empty((orbit_length, n_orbits))
    V = np.empty((orbit_length, n_orbits))
    ok = np.ones(n_orbits, dtype=bool)
    for t in range(orbit_length):
        U[t] = u(idx, r, phi)
        V[t] = v(idx, r, phi)
        st = table.forward(idx, r, phi)
        ok &= st.ok
        idx = np.where(st.ok, st.idx, 0)
        r = np.where(st.ok, st.r, 0.0)
        phi = np.where(st.ok, st.phi, 0.0)
    means = np.empty(horizon + 1)
    ses = np.empty(horizon + 1)
    for n in range(horizon + 1):
        per = (U[: orbit_length - n] * V[n:]).mean(axis=0)[ok]
        means[n], ses[n] = mean_and_se(per)
    return means, ses


def leafwise_difference(f, g, W: StableCurve, psi, seq: MapSequence, n: int, points: int):
    """``|int_W L_n(f - g) psi| / int_W psi`` on a uniform grid of ``W``."""
    rr = np.linspace(*W.interval, points)
    idx = np.full(rr.shape, W.scatterer_index)
    rm = np.mod(rr, seq.tables[0].lengths[W.scatterer_index])
    phi = W.phi_at(rr)
    a, ok = transfer_eval(f, seq, n, idx, rm, phi)
    b, _ = transfer_eval(g, seq, n, idx, rm, phi)
    w = psi(rr) * W.speed(rr)
    d = (a - b)[ok] * w[ok]
    m, se = mean_and_se(d)
    norm = w[ok].mean()
    return abs(m) / norm, se / norm


def srb_mean(table: BilliardTable, f: Observable, nodes: int = 64) -> float:
    """``int f dmu`` by tensor Gauss-Legendre quadrature on every scatterer."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    total = 0.0
    for i, ln in enumerate(table.lengths):
        r = 0.5 * ln * (x + 1.0)
        phi = 0.5 * math.pi * x
        R, P = np.meshgrid(r, phi, indexing="ij")
        W2 = np.outer(0.5 * ln * w, 0.5 * math.pi * w) * np.cos(P)
        total += float(np.sum(W2 * f(np.full(R.shape, i), R, P)))
    return table.srb_constant * total


def sequence_correlations(seq: MapSequence, u: Observable, v: Observable, horizon: int,
                          rng: np.random.Generator, samples: int):
    """``E[u(x) v(T_n x)]`` for ``n = 0..horizon`` from independent initial points."""
    tab = seq.tables[0]
    idx, r, phi = tab.sample_srb(rng, samples)
    u0 = u(idx, r, phi)
    ok = np.ones(samples, dtype=bool)
    means = np.empty(horizon + 1)
    ses = np.empty(horizon + 1)
    for n in range(horizon + 1):
        if n:
            st = seq.tables[n - 1].forward(idx, r, phi)
            ok &= st.ok
            idx = np.where(st.ok, st.idx, 0)
            r = np.where(st.ok, st.r, 0.0)
            phi = np.where(st.ok, st.phi, 0.0)
        means[n], ses[n] = mean_and_se((u0 * v(idx, r, phi))[ok])
    return means, ses


def memory_loss_experiment(f, g, psi: Observable, seq, horizon: int, rng: np.random.Generator,
                           witnesses: Sequence[StableCurve] = (), psi_leaf=None,
                           n_orbits: int = 20000, orbit_length: int = 400,
                           samples: int = 1_000_000, leaf_points: int = 200001,
                           fit_from: int = 1) -> DecayTable:
    """Decay of ``|int L_n f psi - int L_n g psi|`` globally and along witness curves.

    ``g`` is rescaled to the mean of ``f``.  The global difference is the
    correlation of ``f - g`` with ``psi o T_n``; for a single table it is
    estimated from every window of long stationary orbits, otherwise from
    independent initial points.
    """
    if isinstance(seq, BilliardTable):
        seq = MapSequence.constant(seq, horizon)
    tab = seq.tables[0]
    scale = srb_mean(tab, f) / srb_mean(tab, g)
    gs = lambda i, r, p: scale * g(i, r, p)  # noqa: E731
    diff = lambda i, r, p: f(i, r, p) - gs(i, r, p)  # noqa: E731
    if all(t is tab for t in seq.tables[:horizon]):
        corr, se = lagged_correlations(tab, diff, psi, horizon, rng, n_orbits, orbit_length)
    else:
        corr, se = sequence_correlations(seq, diff, psi, horizon, rng, samples)
    ns = np.arange(1, horizon + 1)
    lw = np.full(ns.size, np.nan)
    lw_se = np.full(ns.size, np.nan)
    if witnesses:
        psi_leaf = psi_leaf or (lambda rr: np.ones_like(rr))
        for k, n in enumerate(ns):
            vals = [leafwise_difference(f, gs, Wt, psi_leaf, seq, int(n), leaf_points) for Wt in witnesses]
            lw[k] = max(v[0] for v in vals)
            lw_se[k] = max(v[1] for v in vals)
    gd = np.abs(corr[1:])
    keep = ns >= fit_from
    fit = loglinear_fit(ns[keep], gd[keep])
    return DecayTable(ns, lw, lw_se, gd, se[1:], fit)
