"""Cones of test functions on stable curves and cones of densities.

Test functions on a curve ``W`` live in ``D_{a,alpha}(W)``: positive functions
whose logarithm is ``a``-Hoelder of exponent ``alpha`` in arclength.  Densities
are compared through their integrals against test functions on a finite,
deterministic sample of stable curves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .billiard import HALF_PI, BilliardTable, FamilyParams, strip_index
from .curves import StableCurve, curve_distance
from .errors import DomainError, EmptySampler, NotComparable, NotInCone

Observable = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]

N_SHAPES = 7
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class ConeParams:
    """Constants and exponents of the density cone.

    ``sigma`` is the contraction of the Hoelder constant under pushing test
    functions forward and ``C_s`` bounds the slopes of stable curves.
    """

    a: float
    c: float
    A: float
    L: float
    delta: float
    delta0: float
    alpha: float = 1.0 / 3.0
    beta: float = 1.0 / 6.0
    q: float = 0.4
    gamma: float = 1.0 / 6.0
    sigma: float = 0.9
    C_s: float = 1.0

    def __post_init__(self):
        problems = []
        if not self.a > 1:
            problems.append("a must exceed 1")
        if not 0 < self.q < 0.5:
            problems.append("q must lie in (0, 1/2)")
        if not 0 < self.beta < self.alpha <= 1.0 / 3.0:
            problems.append("need 0 < beta < alpha <= 1/3")
        if not 0 < self.gamma <= min(self.alpha - self.beta, self.q) + 1e-15:
            problems.append("need 0 < gamma <= min(alpha - beta, q)")
        if not 1 < self.L < self.A < self.c:
            problems.append("need 1 < L < A < c")
        if math.exp(2 * self.a * self.delta0 ** self.beta) > 2 * (1 + 1e-12):
            problems.append("need exp(2 a delta0^beta) <= 2")
        if not 0 < self.delta <= self.delta0 / 3 * (1 + 1e-12):
            problems.append("need 0 < delta <= delta0 / 3")
        if not 0 < self.sigma < 1:
            problems.append("sigma must lie in (0, 1)")
        if problems:
            raise ValueError("; ".join(problems))

    @classmethod
    def for_table(cls, tab: BilliardTable, a: float = 2.0, L: float = 60.0, A: float = 250.0,
                  c: float = 1000.0, sigma: float = 0.9, **kw) -> "ConeParams":
        """Largest admissible ``delta0`` for ``a`` and ``delta = delta0 / 3``."""
        beta = kw.get("beta", 1.0 / 6.0)
        delta0 = (math.log(2.0) / (2.0 * a)) ** (1.0 / beta)
        return cls(a=a, c=c, A=A, L=L, delta=delta0 / 3.0, delta0=delta0, sigma=sigma,
                   C_s=slope_constant(tab), **kw)

    @property
    def diameter_bound(self) -> float:
        """Hilbert diameter of ``D_{sigma a, beta}`` inside ``D_{a, beta}``."""
        a, s = self.a, self.sigma
        return (2 * math.log((a + s * a) / (a - s * a))
                + 2 * a * (1 + s) * self.delta0 ** self.beta + 2 * a * self.delta0 ** self.beta)

    @property
    def contraction_bound(self) -> float:
        return math.tanh(self.diameter_bound / 4.0)


def slope_constant(tab: BilliardTable) -> float:
    """Largest Euclidean slope factor ``sqrt(1 + (K_max + 1/tau_min)^2)``."""
    return math.sqrt(1.0 + (tab.kappa_bounds[1] + 1.0 / tab.tau_bounds[0]) ** 2)


# -- test functions ------------------------------------------------------------


def hoelder_certificate(u: np.ndarray, values: np.ndarray, exponent: float) -> float:
    """Smallest ``a`` with ``|log psi(x) - log psi(y)| <= a d(x, y)^exponent`` on the grid."""
    lv = np.log(values)
    d = np.abs(u[:, None] - u[None, :])
    np.fill_diagonal(d, 1.0)
    ratio = np.abs(lv[:, None] - lv[None, :]) / d ** exponent
    np.fill_diagonal(ratio, 0.0)
    return float(ratio.max())


@dataclass(eq=False)
class TestFunction:
    """Positive function on a stable curve, given on an arclength grid."""

    __test__ = False  # keep pytest from collecting this class

    curve: StableCurve
    u: np.ndarray
    values: np.ndarray
    exponent: float = 1.0 / 6.0

    @classmethod
    def from_callable(cls, W: StableCurve, fn: Callable[[np.ndarray], np.ndarray],
                      n: int = 129, exponent: float = 1.0 / 6.0) -> "TestFunction":
        """``fn`` receives arclength positions measured from the left end of ``W``."""
        u = np.linspace(0.0, W.length, n)
        return cls(W, u, np.asarray(fn(u), dtype=float), exponent)

    @property
    def certificate(self) -> float:
        return hoelder_certificate(self.u, self.values, self.exponent)

    def in_cone(self, a: float) -> bool:
        return bool(np.all(self.values > 0)) and self.certificate <= a


def _ratios(u, p1, p2, a, exponent):
    E = np.exp(a * np.abs(u[:, None] - u[None, :]) ** exponent)
    num = E * p1[:, None] - p1[None, :]
    den = E * p2[:, None] - p2[None, :]
    off = ~np.eye(u.size, dtype=bool)
    if np.any(den[off] <= 0) or np.any(num[off] <= 0):
        raise NotInCone("a test function is not strictly inside the cone")
    R = np.where(off, num / np.where(off, den, 1.0), p1[:, None] / p2[:, None])
    return R


def hilbert_metric(u: np.ndarray, psi1: np.ndarray, psi2: np.ndarray, a: float,
                   exponent: float) -> float:
    """Projective distance between two test functions sampled at arclength ``u``.

    Uses the representation as the log of the product of two independent
    suprema over ordered pairs of points; coincident pairs contribute the
    pointwise ratio, which is the limit of the pair ratio.
    """
    u = np.asarray(u, dtype=float)
    psi1 = np.asarray(psi1, dtype=float)
    psi2 = np.asarray(psi2, dtype=float)
    if np.any(psi1 <= 0) or np.any(psi2 <= 0):
        raise NotInCone("test functions must be positive")
    s12 = _ratios(u, psi1, psi2, a, exponent).max()
    s21 = _ratios(u, psi2, psi1, a, exponent).max()
    # one log of the product keeps the value exactly invariant under power-of-two rescaling
    return float(max(math.log(s12 * s21), 0.0))


def hilbert_metric_tf(t1: TestFunction, t2: TestFunction, a: float,
                      exponent: Optional[float] = None) -> float:
    if t1.u.shape != t2.u.shape or not np.allclose(t1.u, t2.u):
        raise ValueError("test functions must share a grid")
    return hilbert_metric(t1.u, t1.values, t2.values, a, exponent or t1.exponent)


def bound_diameter(chi: float, L: float, A: Optional[float] = None) -> tuple[float, float]:
    """Diameter bound ``log((1+chi)^2/(1-chi)^2 * chi L)`` and ``tanh(Delta/4)``.

    ``chi`` must exceed ``max(1/2, 1/L, 1/sqrt(A-1))`` and stay below 1.
    """
    lo = max(0.5, 1.0 / L)
    if A is not None:
        if A <= 1:
            raise DomainError("A must exceed 1")
        lo = max(lo, 1.0 / math.sqrt(A - 1.0))
    if not lo < chi < 1.0:
        raise DomainError(f"chi = {chi} outside ({lo:.6g}, 1)")
    delta = math.log((1 + chi) ** 2 / (1 - chi) ** 2 * chi * L)
    return delta, math.tanh(delta / 4.0)


def shape_logs(u: np.ndarray, length: float, a: float, exponent: float) -> np.ndarray:
    """Logarithms of the seven dictionary shapes on arclength positions ``u``.

    Every shape has Hoelder certificate at most ``0.9 a``: constant, two
    monotone ramps, a centred bump and dip, and two boundary-localised bumps.
    """
    u = np.asarray(u, dtype=float)
    h = 0.5 * a
    g = 0.9 * a
    left = u ** exponent
    right = np.clip(length - u, 0.0, None) ** exponent
    mid = np.abs(u - 0.5 * length) ** exponent
    return np.stack([
        np.zeros_like(u), h * left, h * right, -h * mid, h * mid, -g * left, -g * right,
    ])


def dictionary(W: StableCurve, a: float, exponent: float, n: int = 65) -> list:
    u = np.linspace(0.0, W.length, n)
    logs = shape_logs(u, W.length, a, exponent)
    return [TestFunction(W, u, np.exp(row), exponent) for row in logs]


# -- curve samplers -----------------------------------------------------------


def _straight(idx, r0, phi0, slope, length, n=5) -> StableCurve:
    return StableCurve.segment(idx, r0, phi0, slope, length, n)


@dataclass(eq=False)
class CurveSampler:
    """Deterministic stratified sample of stable segments.

    Segments are spread over scatterers, positions, angles (bulk and the first
    strips) and slopes inside the stable cone.  ``long`` segments have length in
    ``[delta, 2 delta]``; ``short`` ones halve repeatedly down to ``delta / 16``.
    """

    table: BilliardTable
    family: FamilyParams
    delta: float
    n_curves: int = 48
    seed: int = 0
    long: list = field(init=False)
    short: list = field(init=False)

    def __post_init__(self):
        rng = np.random.default_rng([self.seed, 7771])
        lo, hi = self.family.stable_slopes
        span = hi - lo
        self.long = []
        tries = 0
        K = self.table.n_scatterers
        while len(self.long) < self.n_curves and tries < 50 * self.n_curves + 100:
            tries += 1
            i = len(self.long) % K
            length = self.delta * (1.0 + rng.random())
            slope = lo + span * (0.1 + 0.8 * rng.random())
            r0 = rng.random() * self.table.lengths[i]
            phi0 = (rng.random() * 2 - 1) * (HALF_PI - 0.02)
            W = _straight(i, r0, phi0, slope, length)
            if abs(W.phi).max() >= HALF_PI or W.strip(self.family.k0) is None:
                continue
            self.long.append(W)
        self.short = []
        for j, W in enumerate(self.long):
            frac = 2.0 ** -(1 + j % 5)
            Ws = _straight(W.scatterer_index, W.r[0], W.phi[0], float(W.slope_at(W.r[0])),
                           W.length * frac)
            self.short.append(Ws)
        if not self.long:
            raise EmptySampler("no admissible stable curve found")

    def pairs(self, params: ConeParams, per_curve: int = 2):
        """Curve pairs within distance ``delta`` with matched test functions.

        The second curve is a vertical translate or a slope perturbation of the
        first over the same ``r`` interval; test functions are transported so
        that ``psi_1 |G_1'| = psi_2 |G_2'|``.
        """
        rng = np.random.default_rng([self.seed, 9113])
        lo, hi = self.family.stable_slopes
        out = []
        for W in self.long + self.short:
            m = float(W.slope_at(W.r[0]))
            for k in range(per_curve):
                if k % 2 == 0:
                    h = params.delta * (0.05 + 0.4 * rng.random()) * rng.choice([-1, 1])
                    W2 = StableCurve(W.scatterer_index, W.r, W.phi + h)
                else:
                    dm = params.delta * (0.05 + 0.4 * rng.random()) * rng.choice([-1, 1])
                    m2 = float(np.clip(m + dm, lo, hi))
                    mid = 0.5 * (W.r[0] + W.r[-1])
                    W2 = StableCurve(W.scatterer_index, W.r, float(W.phi_at(mid)) + m2 * (W.r - mid))
                if np.abs(W2.phi).max() >= HALF_PI:
                    continue
                d = curve_distance(W, W2, self.family.k0)
                if d <= params.delta:
                    out.append((W, W2, d))
        return out


# -- integrals and triple norms -------------------------------------------------


def _leaf_nodes(W: StableCurve, panels: int = 2):
    a, b = W.interval
    edges = np.linspace(a, b, panels + 1)
    h = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    r = (mid[:, None] + h[:, None] * _GL_X).ravel()
    w = (h[:, None] * _GL_W).ravel()
    speed = W.speed(r)
    # arclength from the left end; closed form for straight segments
    u = (r - a) * speed if np.allclose(speed, speed[0]) else W.arclength_to(r)
    return r, w * speed, u


def _eval(f: Observable, W: StableCurve, r: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    idx = np.full(r.shape, W.scatterer_index, dtype=np.int64)
    return np.asarray(f(idx, np.mod(r, lengths[W.scatterer_index]), W.phi_at(r)), dtype=float)


@dataclass(eq=False)
class LeafData:
    """Leafwise quantities that are linear in the density.

    ``ratio``: ``int f psi / int psi`` for long curves and every shape.
    ``short``: ``|W|^{1-q} int f psi / int psi`` for all curves (signed).
    ``pair``: difference of normalised integrals on matched curve pairs.
    """

    ratio: np.ndarray
    short: np.ndarray
    pair: np.ndarray
    pair_scale: np.ndarray

    def combine(self, other: "LeafData", x: float, y: float) -> "LeafData":
        return LeafData(x * self.ratio + y * other.ratio, x * self.short + y * other.short,
                        x * self.pair + y * other.pair, self.pair_scale)


class ConeEvaluator:
    """Precomputed quadrature for a sampler so many densities can be tested cheaply."""

    def __init__(self, sampler: CurveSampler, params: ConeParams, panels: int = 2):
        self.sampler = sampler
        self.params = params
        self.lengths = sampler.table.lengths
        p = params
        self._long = [self._prep(W, p.beta, panels) for W in sampler.long]
        self._all = self._long + [self._prep(W, p.beta, panels) for W in sampler.short]
        self._pairs = []
        for W1, W2, d in sampler.pairs(p):
            r, w1, u1 = _leaf_nodes(W1, panels)
            _, w2, _ = _leaf_nodes(W2, panels)
            logs = shape_logs(u1, W1.length, p.a, p.alpha)
            psi1 = np.exp(logs)
            psi2 = psi1 * W1.speed(r) / W2.speed(r)
            # keep only transported functions that stay in the cone on W2
            uu = np.linspace(0, 1, 33)
            rr = W1.interval[0] + uu * (W1.interval[1] - W1.interval[0])
            u2 = (rr - rr[0]) * W2.speed(rr)
            lg = shape_logs((rr - rr[0]) * W1.speed(rr), W1.length, p.a, p.alpha)
            p2g = np.exp(lg) * W1.speed(rr) / W2.speed(rr)
            keep = [hoelder_certificate(u2, row, p.alpha) <= p.a for row in p2g]
            self._pairs.append((W1, W2, d, r, w1, w2, psi1[keep], psi2[keep]))
        if not self._long:
            raise EmptySampler("sampler has no curves")

    def _prep(self, W, exponent, panels):
        r, w, u = _leaf_nodes(W, panels)
        psi = np.exp(shape_logs(u, W.length, self.params.a, exponent))
        return W, r, w, psi, psi @ w

    def leaf_data(self, f: Observable) -> LeafData:
        p = self.params
        ratio = []
        for W, r, w, psi, ipsi in self._long:
            fv = _eval(f, W, r, self.lengths)
            ratio.append((psi * w) @ fv / ipsi)
        short = []
        for W, r, w, psi, ipsi in self._all:
            fv = _eval(f, W, r, self.lengths)
            short.append(W.length ** (1 - p.q) * ((psi * w) @ fv) / ipsi)
        pair, scale = [], []
        for W1, W2, d, r, w1, w2, psi1, psi2 in self._pairs:
            if psi1.shape[0] == 0:
                continue
            f1 = _eval(f, W1, r, self.lengths)
            f2 = _eval(f, W2, r, self.lengths)
            n1 = (psi1 * w1) @ f1 / ((psi1 @ w1) / W1.length)
            n2 = (psi2 * w2) @ f2 / ((psi2 @ w2) / W2.length)
            pair.append(n1 - n2)
            scale.append(np.full(n1.shape, d ** p.gamma * p.delta ** (1 - p.gamma) * p.c * p.A))
        cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0)  # noqa: E731
        return LeafData(cat(ratio), cat(short), cat(pair), cat(scale))

    def report(self, data: LeafData) -> "ConeReport":
        return _report(data, self.params)


@dataclass(frozen=True)
class ConeReport:
    triple_plus: float
    triple_minus: float
    cond2_margin: float
    cond3_margin: float
    cond5_margin: float
    n_curves: int
    n_pairs: int

    @property
    def in_cone(self) -> bool:
        return (self.triple_minus > 0 and self.cond2_margin >= 0
                and self.cond3_margin >= 0 and self.cond5_margin >= 0)


def _report(data: LeafData, p: ConeParams) -> ConeReport:
    plus = float(data.ratio.max())
    minus = float(data.ratio.min())
    s3 = float(np.abs(data.short).max())
    s5 = data.pair
    norm = minus if minus > 0 else 1.0
    c2 = (p.L * minus - plus) / norm
    c3 = (p.A * p.delta ** (1 - p.q) * minus - s3) / norm
    if s5.size:
        c5 = float(np.min(data.pair_scale * minus - np.abs(s5))) / norm
    else:
        c5 = math.inf
    return ConeReport(plus, minus, c2, c3, c5, data.ratio.size // N_SHAPES, s5.size)


def triple_norms(f: Observable, params: ConeParams, sampler: CurveSampler) -> tuple[float, float]:
    """Sup and inf of ``int f psi / int psi`` over the sampled curves and shapes."""
    if not sampler.long:
        raise EmptySampler("sampler has no curves")
    ev = ConeEvaluator(sampler, params)
    d = ev.leaf_data(f)
    return float(d.ratio.max()), float(d.ratio.min())


def cone_membership(f: Observable, params: ConeParams, sampler: CurveSampler) -> ConeReport:
    ev = ConeEvaluator(sampler, params)
    return ev.report(ev.leaf_data(f))


def refinement_drift(f: Observable, params: ConeParams, table: BilliardTable,
                     family: FamilyParams, n_curves: int = 48, seed: int = 0) -> float:
    """Relative change of the triple norms when the sample size doubles."""
    a = cone_membership(f, params, CurveSampler(table, family, params.delta, n_curves, seed))
    b = cone_membership(f, params, CurveSampler(table, family, params.delta, 2 * n_curves, seed))
    return max(abs(a.triple_plus - b.triple_plus) / abs(a.triple_plus),
               abs(a.triple_minus - b.triple_minus) / abs(a.triple_minus))


def _interval(pred, lo: float, hi: float, grow: bool, tol: float = 1e-10, cap: float = 1e12):
    """Boundary of ``{t : pred(t)}`` by bisection; the set is an interval."""
    if grow:
        # find the sup of an interval starting at ``lo``
        step = max(hi, 1e-12)
        while pred(step):
            step *= 2
            if step > cap:
                return math.inf
        lo_, hi_ = lo, step
        for _ in range(200):
            mid = 0.5 * (lo_ + hi_)
            (lo_, hi_) = (mid, hi_) if pred(mid) else (lo_, mid)
            if hi_ - lo_ <= tol * max(1.0, hi_):
                break
        return lo_
    step = max(lo, 1e-12)
    while not pred(step):
        step *= 2
        if step > cap:
            return math.inf
    lo_, hi_ = lo, step
    for _ in range(200):
        mid = 0.5 * (lo_ + hi_)
        (lo_, hi_) = (lo_, mid) if pred(mid) else (mid, hi_)
        if hi_ - lo_ <= tol * max(1.0, hi_):
            break
    return hi_


def cone_order_distance(f: Observable, g: Observable, params: ConeParams,
                        sampler: CurveSampler) -> float:
    """Projective distance ``log(beta/alpha)`` between two densities of the cone.

    ``alpha`` is the largest ``t`` with ``g - t f`` in the cone and ``beta`` the
    smallest ``s`` with ``s f - g`` in the cone; membership is tested on the
    sampler, using that all leafwise quantities are linear in the density.
    """
    ev = ConeEvaluator(sampler, params)
    df, dg = ev.leaf_data(f), ev.leaf_data(g)
    rf, rg = ev.report(df), ev.report(dg)
    if not (rf.in_cone and rg.in_cone):
        raise NotComparable("both densities must lie in the cone")
    inside = lambda x, y: ev.report(dg.combine(df, x, y)).in_cone  # noqa: E731
    a_bar = _interval(lambda t: inside(1.0, -t), 0.0, rg.triple_minus / rf.triple_plus, grow=True)
    b_bar = _interval(lambda s: inside(-1.0, s), 0.0, rg.triple_plus / rf.triple_minus, grow=False)
    if not (a_bar > 0 and math.isfinite(b_bar)):
        raise NotComparable("densities are not comparable in the cone order")
    return math.log(b_bar / a_bar)


def dominating_shift(c0: float, c1: float, params: ConeParams) -> float:
    """Constant ``lambda`` making ``lambda + f`` a cone element given the
    ``C^0`` and ``C^1`` norms of ``f``."""
    p = params
    t = 2 ** (1 - p.q)
    return max((p.L + 1) / (p.L - 1) * c0, (p.A + t) / (p.A - t) * c0,
               (p.c * p.A + 8 * p.C_s) / (p.c * p.A - 2 * p.C_s) * c1)
