"""Stable curves, their backward images and the bookkeeping of generations.

A stable curve is the graph ``phi = phi_W(r)`` over an interval of clockwise
arclength on a single scatterer.  Backward images are computed pointwise from
the root curve: every member of generation ``n`` is an interval of the root
parameter (the ``r`` coordinate on the root curve) on which the composed
inverse map is smooth and each intermediate image stays in one homogeneity
strip.  Cut points are located by bisection on the collision labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .billiard import (
    HALF_PI,
    BilliardTable,
    FamilyParams,
    inverse_differential_from_step,
    strip_index,
)
from .errors import ResolutionError

MIN_PIECE = 1e-9
CUT_TOL = 1e-13
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


@dataclass(eq=False)
class StableCurve:
    """Graph of ``phi`` over an increasing grid of ``r`` on one scatterer.

    ``r`` may leave ``[0, length)`` when the curve crosses the origin of the
    arclength coordinate; evaluation is by cubic interpolation.
    """

    scatterer_index: int
    r: np.ndarray
    phi: np.ndarray
    _spline: Optional[CubicSpline] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        phi = np.asarray(self.phi, dtype=float)
        order = np.argsort(r)
        self.r, self.phi = r[order], phi[order]
        if self.r.size < 2 or np.any(np.diff(self.r) <= 0):
            raise ValueError("a stable curve needs at least two distinct r samples")

    @classmethod
    def segment(cls, idx: int, r0: float, phi0: float, slope: float, length: float,
                n: int = 9) -> "StableCurve":
        """Straight segment starting at ``(r0, phi0)`` with arclength ``length``."""
        dr = length / math.sqrt(1.0 + slope * slope)
        r = r0 + np.linspace(0.0, dr, n)
        return cls(idx, r, phi0 + slope * (r - r0))

    @property
    def spline(self) -> CubicSpline:
        if self._spline is None:
            bc = "not-a-knot" if self.r.size >= 4 else "natural"
            self._spline = CubicSpline(self.r, self.phi, bc_type=bc)
        return self._spline

    @property
    def interval(self) -> tuple[float, float]:
        return float(self.r[0]), float(self.r[-1])

    def phi_at(self, r):
        return self.spline(r)

    def slope_at(self, r):
        return self.spline(r, 1)

    def curvature_at(self, r):
        return self.spline(r, 2)

    def speed(self, r):
        return np.sqrt(1.0 + self.slope_at(r) ** 2)

    def quadrature(self, panels: int = 4):
        """Gauss-Legendre nodes in ``r`` and weights for ``dm_W`` (arclength)."""
        a, b = self.interval
        edges = np.linspace(a, b, panels + 1)
        h = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        nodes = (mid[:, None] + h[:, None] * _GL_X[None, :]).ravel()
        w = (h[:, None] * _GL_W[None, :]).ravel()
        return nodes, w * self.speed(nodes)

    @property
    def length(self) -> float:
        _, w = self.quadrature(max(4, self.r.size))
        return float(w.sum())

    def arclength_to(self, r) -> np.ndarray:
        """Arclength from the left end to each ``r``."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        a = self.interval[0]
        out = np.empty_like(r)
        for k, x in enumerate(r):
            h = 0.5 * (x - a)
            nodes = a + h + h * _GL_X
            out[k] = h * float(np.sum(_GL_W * self.speed(nodes)))
        return out

    def strip(self, k0: int) -> int:
        ks = strip_index(self.phi, k0)
        return int(ks[0]) if np.all(ks == ks[0]) else None


def adapted_factor(curvature, slope):
    """Ratio of the adapted norm to the Euclidean norm for direction ``(1, slope)``."""
    slope = np.asarray(slope, dtype=float)
    return (curvature + np.abs(slope)) / np.sqrt(1.0 + slope * slope)


def adapted_constant(family: FamilyParams, n: int = 2001) -> float:
    """Equivalence constant between the adapted and Euclidean norms on stable vectors."""
    lo, hi = family.stable_slopes
    m = np.linspace(lo, hi, n)
    vals = []
    for kap in (family.kappa_star, 1.0 / family.kappa_star):
        vals.append(adapted_factor(kap, m))
    v = np.concatenate(vals)
    return float(max(v.max(), 1.0 / v.min()))


@dataclass
class CurveCheck:
    ok: bool
    slope_range: tuple[float, float]
    max_curvature: float
    length: float
    strip: Optional[int]
    problems: list


def check_stable(W: StableCurve, family: FamilyParams, curvature_bound: float = math.inf,
                 tol: float = 1e-9, n_eval: int = 64) -> CurveCheck:
    a, b = W.interval
    r = np.linspace(a, b, n_eval)
    s = W.slope_at(r)
    kk = np.abs(W.curvature_at(r))
    lo, hi = family.stable_slopes
    problems = []
    if s.min() < lo - tol or s.max() > hi + tol:
        problems.append("slope leaves the stable cone")
    if kk.max() > curvature_bound:
        problems.append("curvature above bound")
    L = W.length
    if L > family.delta0 * (1 + 1e-9):
        problems.append("longer than delta0")
    st = W.strip(family.k0)
    if st is None:
        problems.append("crosses a homogeneity boundary")
    return CurveCheck(not problems, (float(s.min()), float(s.max())), float(kk.max()), L, st, problems)


# -- batched backward orbits from the root curve ----------------------------------


def _label(idx, kx, ky, strip, ok):
    lab = ((idx * 5 + (kx + 2)) * 5 + (ky + 2)) * 8192 + (strip.astype(np.int64) + 4096)
    return np.where(ok, lab, -1)


class RootOrbit:
    """Backward images of root-curve points under a list of maps."""

    def __init__(self, root: StableCurve, maps: Sequence[BilliardTable], k0: int):
        self.root = root
        self.maps = list(maps)
        self.k0 = k0

    def evaluate(self, s: np.ndarray, k: int):
        """Image after ``k`` backward steps of ``W(s)``.

        Returns (idx, r, phi, vec, label, ok) where ``vec`` is the image of the
        tangent ``(1, phi_W'(s))`` and ``label`` encodes the last collision.
        """
        s = np.asarray(s, dtype=float)
        W = self.root
        idx = np.full(s.shape, W.scatterer_index, dtype=np.int64)
        ln = self.maps[0].lengths[W.scatterer_index]
        r = np.mod(s, ln)
        phi = W.phi_at(s)
        vec = np.stack([np.ones_like(s), W.slope_at(s)], axis=-1)
        ok = np.ones(s.shape, dtype=bool)
        lab = np.zeros(s.shape, dtype=np.int64)
        for j in range(k):
            tab = self.maps[j]
            st = tab.backward(idx, r, phi)
            good = st.ok & ok
            D = inverse_differential_from_step(tab, idx, phi, st)
            vec = np.einsum("nij,nj->ni", D, vec)
            strip = strip_index(np.where(good, st.phi, 0.0), self.k0)
            strip = np.where(np.isfinite(strip), strip, 0)
            lab = _label(st.idx, st.kx, st.ky, strip, good)
            idx = np.where(good, st.idx, 0)
            r = np.where(good, st.r, 0.0)
            phi = np.where(good, st.phi, 0.0)
            ok = good
        return idx, r, phi, vec, lab, ok


@dataclass(eq=False)
class Member:
    """One element of a generation: a root-parameter interval and its image."""

    generation: int
    s_lo: float
    s_hi: float
    label: int
    parent: int
    long_gen: int
    s: np.ndarray = field(repr=False, default=None)
    idx: int = -1
    r: np.ndarray = field(repr=False, default=None)
    phi: np.ndarray = field(repr=False, default=None)
    jac: np.ndarray = field(repr=False, default=None)
    length: float = 0.0

    @property
    def sup_jacobian(self) -> float:
        return float(np.max(self.jac))

    def curve(self, lengths: np.ndarray) -> StableCurve:
        r = np.unwrap(self.r, period=lengths[self.idx])
        return StableCurve(self.idx, r, self.phi)


@dataclass
class JacobianTrace:
    """Forward Jacobians ``J_{W_i} T_n`` sampled along one member."""

    generation: int
    member: int
    s: np.ndarray
    jacobian: np.ndarray


@dataclass
class CurveFamily:
    generation: int
    root: StableCurve
    members: list
    discarded: int = 0
    discarded_mass: float = 0.0

    def __len__(self):
        return len(self.members)

    def jacobian_traces(self) -> list:
        return [JacobianTrace(self.generation, i, m.s, m.jac) for i, m in enumerate(self.members)]

    def curves(self, lengths) -> list:
        return [m.curve(lengths) for m in self.members]


def _nodes(a, b, m: int) -> np.ndarray:
    """Chebyshev points of the second kind on each interval; they cluster
    samples near cut points.  Broadcasts over arrays of intervals."""
    x = 0.5 * (1.0 - np.cos(np.pi * np.arange(m) / (m - 1)))
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a[..., None] + (b - a)[..., None] * x


def _speed_and_jac(root: StableCurve, s, vec):
    wnorm = np.sqrt(1.0 + root.slope_at(s) ** 2)
    g = np.hypot(vec[..., 0], vec[..., 1])
    return g, wnorm / g


def _image_lengths(orbit: RootOrbit, k: int, a, b, panels: int = 2) -> np.ndarray:
    """Arclength of the k-th backward image over each root interval ``[a, b]``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    t = np.linspace(0.0, 1.0, panels + 1)
    edges = a[:, None] + (b - a)[:, None] * t
    h = 0.5 * np.diff(edges, axis=1)
    mid = 0.5 * (edges[:, 1:] + edges[:, :-1])
    nodes = mid[..., None] + h[..., None] * _GL_X
    *_, vec, _, _ = orbit.evaluate(nodes.ravel(), k)
    g = np.hypot(vec[:, 0], vec[:, 1]).reshape(nodes.shape)
    return np.sum(h[..., None] * _GL_W * g, axis=(1, 2))


def _bisect_cuts(orbit: RootOrbit, k: int, brackets: list) -> list:
    """Refine label changes inside brackets ``(s_left, lab_left, s_right, lab_right, tag)``.

    Returns brackets narrower than ``CUT_TOL`` that separate two labels.  All
    brackets are refined together so each round is one batched evaluation.
    """
    done = []
    active = list(brackets)
    it = 0
    while active:
        it += 1
        if it > 200:
            raise ResolutionError("label changes could not be localised")
        mids = np.array([0.5 * (br[0] + br[2]) for br in active])
        *_, lab, _ = orbit.evaluate(mids, k)
        nxt = []
        for (a, la, b, lb, tag), m, lm in zip(active, mids, lab):
            lm = int(lm)
            if b - a <= CUT_TOL or m <= a or m >= b:
                done.append((a, la, b, lb, tag))
                continue
            if lm != la:
                nxt.append((a, la, m, lm, tag))
            if lm != lb:
                nxt.append((m, lm, b, lb, tag))
        active = nxt
    done.sort()
    return done


def _split_points(orbit: RootOrbit, k: int, a: float, b: float, length: float, delta0: float):
    """Root parameters splitting an image of length ``length`` into equal parts
    no longer than ``delta0``."""
    pieces = int(math.ceil(length / delta0))
    if pieces <= 1:
        return [a, b]
    while True:
        cells = 8 * pieces
        edges = np.linspace(a, b, cells + 1)
        seg = _image_lengths(orbit, k, edges[:-1], edges[1:], panels=1)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        targets = cum[-1] * np.arange(1, pieces) / pieces
        pts = [a, *np.interp(targets, cum, edges).tolist(), b]
        got = _image_lengths(orbit, k, pts[:-1], pts[1:])
        if got.max() <= delta0 or pieces > 4 * length / delta0 + 4:
            return pts
        pieces += 1


def _build_members(orbit, k, pieces, family, m):
    """Sample every piece ``(a, b, label, parent, parent_long)`` in one batch."""
    if not pieces:
        return [], 0
    A = np.array([p[0] for p in pieces])
    B = np.array([p[1] for p in pieces])
    S = _nodes(A, B, m)
    idx, r, phi, vec, lab, ok = orbit.evaluate(S.ravel(), k)
    shape = S.shape
    idx, r, phi, lab, ok = (x.reshape(shape) for x in (idx, r, phi, lab, ok))
    vec = vec.reshape(shape + (2,))
    lengths = _image_lengths(orbit, k, A, B)
    lo, hi = family.stable_slopes
    width = hi - lo
    out = []
    dropped = 0
    for j, (a, b, label, parent, plong) in enumerate(pieces):
        s_j, idx_j, r_j, phi_j, vec_j, ok_j = S[j], idx[j], r[j], phi[j], vec[j], ok[j]
        slope = vec_j[:, 1] / vec_j[:, 0]
        mm = m
        while np.any(np.abs(np.diff(slope)) > 0.01 * width):
            mm = 2 * mm - 1
            if mm > 257:
                raise ResolutionError("slope of a backward image varies too fast to sample")
            s_j = _nodes(a, b, mm)
            idx_j, r_j, phi_j, vec_j, _, ok_j = orbit.evaluate(s_j, k)
            slope = vec_j[:, 1] / vec_j[:, 0]
        if not np.all(ok_j):
            dropped += 1
            continue
        _, jac = _speed_and_jac(orbit.root, s_j, vec_j)
        length = float(lengths[j])
        long_gen = k if length >= family.delta0 / 3.0 else plong
        out.append(Member(k, float(a), float(b), int(label), parent, long_gen, s_j,
                          int(idx_j[0]), r_j, phi_j, jac, length))
    return out, dropped


def pull_back_family(fam: CurveFamily, orbit: RootOrbit, family: FamilyParams,
                     m: int = 17) -> CurveFamily:
    """Next generation: cut every member at singularities and strip changes,
    then split pieces longer than ``delta0``."""
    k = fam.generation + 1
    if not fam.members:
        return CurveFamily(k, fam.root, [], fam.discarded, fam.discarded_mass)
    S = np.concatenate([mem.s for mem in fam.members])
    owner = np.concatenate([np.full(mem.s.size, i) for i, mem in enumerate(fam.members)])
    *_, LAB, _ = orbit.evaluate(S, k)
    brackets = []
    starts = {}
    off = 0
    for pi, mem in enumerate(fam.members):
        lab = LAB[off:off + mem.s.size]
        ss = S[off:off + mem.s.size]
        off += mem.s.size
        change = np.flatnonzero(lab[1:] != lab[:-1])
        for j in change:
            brackets.append((ss[j], int(lab[j]), ss[j + 1], int(lab[j + 1]), pi))
        starts[pi] = (ss[0], int(lab[0]), ss[-1], int(lab[-1]))
    cuts_by_parent: dict = {}
    for br in _bisect_cuts(orbit, k, brackets):
        cuts_by_parent.setdefault(br[4], []).append(br[:4])
    runs = []
    for pi, mem in enumerate(fam.members):
        s0, l0, s1, _ = starts[pi]
        left, lab_left = s0, l0
        for a, la, b, lb in sorted(cuts_by_parent.get(pi, [])):
            runs.append((left, a, lab_left, pi))
            left, lab_left = b, lb
        runs.append((left, s1, lab_left, pi))
    runs = [ru for ru in runs if ru[2] >= 0 and ru[1] > ru[0]]
    discarded = 0
    discarded_mass = 0.0
    pieces = []
    if runs:
        lengths = _image_lengths(orbit, k, [ru[0] for ru in runs], [ru[1] for ru in runs])
        for (a, b, lab, pi), length in zip(runs, lengths):
            if length < MIN_PIECE:
                discarded += 1
                discarded_mass += _piece_mass(orbit, k, a, b)
                continue
            pts = _split_points(orbit, k, a, b, length, family.delta0)
            plong = fam.members[pi].long_gen
            pieces.extend((u, v, lab, pi, plong) for u, v in zip(pts[:-1], pts[1:]))
    members, dropped = _build_members(orbit, k, pieces, family, m)
    return CurveFamily(k, fam.root, members, fam.discarded + discarded + dropped,
                       fam.discarded_mass + discarded_mass)


def _piece_mass(orbit, k, a, b) -> float:
    s = np.array([a, 0.5 * (a + b), b])
    *_, vec, _, ok = orbit.evaluate(s, k)
    if not np.all(ok):
        return 0.0
    _, jac = _speed_and_jac(orbit.root, s, vec)
    return float(jac.max())


def root_family(W: StableCurve, family: FamilyParams, m: int = 17) -> CurveFamily:
    a, b = W.interval
    s = _nodes(a, b, m)
    length = W.length
    member = Member(0, a, b, 0, -1, 0 if length >= family.delta0 / 3.0 else -1,
                    s, W.scatterer_index, s.copy(), W.phi_at(s), np.ones_like(s), length)
    return CurveFamily(0, W, [member])


def generations(W: StableCurve, maps, n: int, family: FamilyParams, m: int = 17) -> list:
    """Generations ``0..n`` of backward images of ``W``.

    ``maps[j]`` is inverted at backward step ``j + 1``; for the composition
    ``T_n o ... o T_1`` pass ``[T_n, ..., T_1]``.  A single table may be given
    for autonomous dynamics.
    """
    if isinstance(maps, BilliardTable):
        maps = [maps] * n
    if len(maps) < n:
        raise ValueError("not enough maps for the requested number of generations")
    orbit = RootOrbit(W, maps, family.k0)
    fams = [root_family(W, family, m)]
    for _ in range(n):
        fams.append(pull_back_family(fams[-1], orbit, family, m))
    return fams


def pull_back(W: StableCurve, table: BilliardTable, family: FamilyParams) -> list:
    """Homogeneous components of the backward image of ``W`` as stable curves."""
    fam = generations(W, [table], 1, family)[1]
    return fam.curves(table.lengths)


def growth_sums(fam: CurveFamily, delta: float) -> tuple[float, float]:
    """Sum of sup-Jacobians over all members and over members shorter than ``delta``."""
    total = sum(m.sup_jacobian for m in fam.members)
    short = sum(m.sup_jacobian for m in fam.members if m.length < delta)
    return total, short


def never_long_sum(fam: CurveFamily) -> float:
    """Sum over members none of whose ancestors reached length ``delta0 / 3``."""
    return sum(m.sup_jacobian for m in fam.members if m.long_gen < 0)


def fit_decay(ns, values) -> tuple[float, float]:
    """Log-linear fit ``values ~ C theta^n``; returns (theta, C)."""
    ns = np.asarray(ns, dtype=float)
    v = np.asarray(values, dtype=float)
    keep = v > 0
    slope, icpt = np.polyfit(ns[keep], np.log(v[keep]), 1)
    return float(math.exp(slope)), float(math.exp(icpt))


def curve_distance(W1: StableCurve, W2: StableCurve, k0: int, length: Optional[float] = None,
                   n_eval: int = 257) -> float:
    """C^1 distance of the graphs on the common interval plus the symmetric
    difference of the two ``r`` intervals; infinite across scatterers or strips."""
    if W1.scatterer_index != W2.scatterer_index:
        return math.inf
    s1, s2 = W1.strip(k0), W2.strip(k0)
    if s1 is None or s2 is None or s1 != s2:
        return math.inf
    a1, b1 = W1.interval
    a2, b2 = W2.interval
    shift = 0.0
    if length is not None:
        shift = length * round(((a1 + b1) - (a2 + b2)) / (2 * length))
    a2, b2 = a2 + shift, b2 + shift
    lo, hi = max(a1, a2), min(b1, b2)
    if hi <= lo:
        return math.inf
    r = np.linspace(lo, hi, n_eval)
    d0 = np.max(np.abs(W1.phi_at(r) - W2.phi_at(r - shift)))
    d1 = np.max(np.abs(W1.slope_at(r) - W2.slope_at(r - shift)))
    sym = (b1 - a1) + (b2 - a2) - 2 * (hi - lo)
    return float(d0 + d1 + sym)


def one_step_expansion(W: StableCurve, table: BilliardTable, family: FamilyParams) -> float:
    """Sum over homogeneous components of ``T^{-1}W`` of the sup adapted-norm
    Jacobian of ``T``.

    Pieces produced only by the ``delta0`` subdivision belong to the same
    component and are merged before taking the sup.
    """
    fam = generations(W, [table], 1, family)[1]
    orbit = RootOrbit(W, [table], family.k0)
    sups = []
    prev = None
    for mem in fam.members:
        idx, r, phi, vec, _, _ = orbit.evaluate(mem.s, 1)
        w_slope = W.slope_at(mem.s)
        num = adapted_factor(table.curvatures[W.scatterer_index], w_slope) * np.sqrt(1 + w_slope ** 2)
        img_slope = vec[:, 1] / vec[:, 0]
        den = adapted_factor(table.curvatures[idx], img_slope) * np.hypot(vec[:, 0], vec[:, 1])
        val = float(np.max(num / den))
        joined = (prev is not None and prev.label == mem.label and prev.parent == mem.parent
                  and prev.s_hi == mem.s_lo)
        if joined:
            sups[-1] = max(sups[-1], val)
        else:
            sups.append(val)
        prev = mem
    return float(sum(sups))
