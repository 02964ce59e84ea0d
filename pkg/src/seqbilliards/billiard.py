"""Dispersing billiard tables on the unit torus and their collision maps.

A phase point ``(i, r, phi)`` lives on scatterer ``i``; ``r`` is clockwise
arclength from the east pole and ``phi`` the angle between the outgoing
velocity and the outward normal.  Batch routines take parallel numpy arrays
``(idx, r, phi)``; the scalar wrappers raise on tangencies.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import _kernels as K
from .errors import (
    ArityMismatch,
    FamilyBoundError,
    GridTooCoarse,
    InfiniteHorizonError,
    NoCollisionError,
    OverlapError,
    TangencyError,
)

HALF_PI = 0.5 * math.pi


@dataclass(frozen=True)
class Scatterer:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        cx, cy = self.center
        object.__setattr__(self, "center", (float(cx) % 1.0, float(cy) % 1.0))
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def curvature(self) -> float:
        return 1.0 / self.radius

    @property
    def length(self) -> float:
        return 2.0 * math.pi * self.radius


def expansion_factor(kappa_star: float, tau_star: float) -> float:
    """Certified backward expansion ``Lambda = 1 + 2 kappa_star tau_star`` of stable vectors."""
    return 1.0 + 2.0 * kappa_star * tau_star


@dataclass(frozen=True)
class FamilyParams:
    """Uniform bounds shared by every table of a family."""

    tau_star: float
    kappa_star: float
    e_star: float = 1.0
    k0: int = 4
    delta0: float = 0.05

    def __post_init__(self):
        if not 0 < self.tau_star <= 1:
            raise ValueError("tau_star must lie in (0, 1]")
        if not 0 < self.kappa_star <= 1:
            raise ValueError("kappa_star must lie in (0, 1]")
        if self.k0 < 1:
            raise ValueError("k0 must be at least 1")
        if not 0 < self.delta0 < 1:
            raise ValueError("delta0 must lie in (0, 1)")

    @property
    def expansion(self) -> float:
        """Minimal one-step expansion ``1 + 2 kappa_star tau_star``."""
        return expansion_factor(self.kappa_star, self.tau_star)

    @property
    def stable_slopes(self) -> tuple[float, float]:
        return (-1.0 / self.kappa_star - 1.0 / self.tau_star, -self.kappa_star)

    @property
    def unstable_slopes(self) -> tuple[float, float]:
        return (self.kappa_star, 1.0 / self.kappa_star + 1.0 / self.tau_star)


@dataclass(frozen=True)
class PhasePoint:
    scatterer_index: int
    r: float
    phi: float


@dataclass(frozen=True)
class HorizonCertificate:
    finite: bool
    tau_max: float
    worst_ray: Optional[PhasePoint]
    corridor: Optional[tuple[int, int]]
    corridor_margin: float
    rays_checked: int


class Step(NamedTuple):
    idx: np.ndarray
    r: np.ndarray
    phi: np.ndarray
    tau: np.ndarray
    kx: np.ndarray
    ky: np.ndarray
    status: np.ndarray

    @property
    def ok(self) -> np.ndarray:
        return self.status == K.OK


@dataclass(eq=False)
class BilliardTable:
    scatterers: tuple[Scatterer, ...]
    tau_bounds: tuple[float, float]
    kappa_bounds: tuple[float, float]
    horizon_certificate: HorizonCertificate
    family: Optional[FamilyParams] = None
    cx: np.ndarray = field(init=False, repr=False)
    cy: np.ndarray = field(init=False, repr=False)
    rad: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.cx = np.array([s.center[0] for s in self.scatterers], dtype=float)
        self.cy = np.array([s.center[1] for s in self.scatterers], dtype=float)
        self.rad = np.array([s.radius for s in self.scatterers], dtype=float)

    @property
    def n_scatterers(self) -> int:
        return len(self.scatterers)

    @property
    def lengths(self) -> np.ndarray:
        return 2.0 * np.pi * self.rad

    @property
    def curvatures(self) -> np.ndarray:
        return 1.0 / self.rad

    @property
    def total_length(self) -> float:
        return float(self.lengths.sum())

    @property
    def srb_constant(self) -> float:
        """Normalisation ``c`` of ``c cos(phi) dr dphi``."""
        return 1.0 / (2.0 * self.total_length)

    # -- batch maps -------------------------------------------------------

    def forward(self, idx, r, phi) -> Step:
        idx = np.ascontiguousarray(idx, dtype=np.int64).reshape(-1)
        r = np.ascontiguousarray(r, dtype=float).reshape(-1)
        phi = np.ascontiguousarray(phi, dtype=float).reshape(-1)
        n = idx.shape[0]
        out = Step(
            np.empty(n, np.int64), np.empty(n), np.empty(n), np.empty(n),
            np.empty(n, np.int64), np.empty(n, np.int64), np.empty(n, np.int64),
        )
        K.forward_step(self.cx, self.cy, self.rad, idx, r, phi, *out)
        return out

    def backward(self, idx, r, phi) -> Step:
        """Inverse map via time reversal ``I T I`` with ``I(r, phi) = (r, -phi)``."""
        s = self.forward(idx, r, -np.asarray(phi, dtype=float))
        return s._replace(phi=-s.phi, kx=-s.kx, ky=-s.ky)

    def iterate(self, idx, r, phi, n: int, inverse: bool = False):
        """Apply the map (or its inverse) ``n`` times; failed points become NaN."""
        idx = np.asarray(idx, dtype=np.int64).copy()
        r = np.asarray(r, dtype=float).copy()
        phi = np.asarray(phi, dtype=float).copy()
        alive = np.ones(idx.shape, dtype=bool)
        for _ in range(n):
            s = (self.backward if inverse else self.forward)(idx[alive], r[alive], phi[alive])
            good = s.ok
            sel = np.flatnonzero(alive)
            idx[sel] = np.where(good, s.idx, 0)
            r[sel] = np.where(good, s.r, np.nan)
            phi[sel] = np.where(good, s.phi, np.nan)
            alive[sel[~good]] = False
        return idx, r, phi, alive

    def position(self, idx, r):
        idx = np.asarray(idx)
        R = self.rad[idx]
        a = np.asarray(r) / R
        return self.cx[idx] + R * np.cos(a), self.cy[idx] - R * np.sin(a)

    def frame(self, idx, r):
        """Outward normal and positive unit tangent at boundary points."""
        idx = np.asarray(idx)
        a = np.asarray(r) / self.rad[idx]
        ca, sa = np.cos(a), np.sin(a)
        return (ca, -sa), (-sa, -ca)

    def velocity(self, idx, r, phi):
        (nx, ny), (tx, ty) = self.frame(idx, r)
        c, s = np.cos(phi), np.sin(phi)
        return c * nx + s * tx, c * ny + s * ty

    def sample_srb(self, rng: np.random.Generator, n: int):
        """Draw ``n`` points from the invariant measure ``c cos(phi) dr dphi``."""
        p = self.lengths / self.total_length
        idx = rng.choice(self.n_scatterers, size=n, p=p)
        r = rng.random(n) * self.lengths[idx]
        phi = np.arcsin(2.0 * rng.random(n) - 1.0)
        return idx.astype(np.int64), r, phi


# -- construction --------------------------------------------------------------


def _torus_delta(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return d - np.round(d)


def _check_overlap(scs: Sequence[Scatterer]) -> float:
    """Return the smallest gap between scatterer boundaries (own translates included)."""
    gap = math.inf
    for i, a in enumerate(scs):
        gap = min(gap, 1.0 - 2.0 * a.radius)
        for j in range(i + 1, len(scs)):
            b = scs[j]
            dist = float(np.hypot(*_torus_delta(a.center, b.center)))
            gap = min(gap, dist - a.radius - b.radius)
    return gap


def _min_gap(scs: Sequence[Scatterer]) -> float:
    """Exact lower bound on free flight: smallest boundary gap over all translates."""
    best = math.inf
    for i, a in enumerate(scs):
        for j, b in enumerate(scs):
            for kx, ky in itertools.product(range(-2, 3), repeat=2):
                if i == j and kx == 0 and ky == 0:
                    continue
                d = math.hypot(b.center[0] + kx - a.center[0], b.center[1] + ky - a.center[1])
                best = min(best, d - a.radius - b.radius)
    return best


def find_corridor(scs: Sequence[Scatterer]) -> tuple[Optional[tuple[int, int]], float]:
    """Search rational directions for a scatterer-free strip.

    Lines of direction ``(p, q)`` close up after length ``sqrt(p^2+q^2)`` and their
    perpendicular offsets live on a circle of circumference ``1/sqrt(p^2+q^2)``.
    A corridor exists exactly when the projected disks fail to cover that circle;
    only directions whose circumference exceeds the largest diameter can fail.
    Returns the offending direction (or None) and the smallest covering margin.
    """
    rmax = max(s.radius for s in scs)
    bound = 1.0 / (2.0 * rmax) ** 2
    margin = math.inf
    qmax = int(math.ceil(math.sqrt(bound))) + 1
    for p in range(0, qmax + 1):
        for q in range(-qmax, qmax + 1):
            if (p == 0 and q <= 0) or math.gcd(p, abs(q)) != 1:
                continue
            norm2 = p * p + q * q
            if norm2 > bound:
                continue
            norm = math.sqrt(norm2)
            h = 1.0 / norm
            arcs = []
            for s in scs:
                u = ((-q * s.center[0] + p * s.center[1]) / norm) % h
                arcs.append((u - s.radius, u + s.radius))
            # every arc start in (0, h] must lie inside the arcs swept so far;
            # copies shifted by -h and +h take care of the wrap
            arcs = sorted((a + k * h, b + k * h) for a, b in arcs for k in (-1, 0, 1))
            reach = max(b for a, b in arcs if a <= 0.0)
            worst = math.inf
            for lo, hi in arcs:
                if lo <= 0.0:
                    continue
                if lo > h:
                    break
                worst = min(worst, reach - lo)
                reach = max(reach, hi)
            margin = min(margin, worst)
            if worst <= 0.0:
                return (p, q), worst
    return None, margin


def _sweep_flights(tab: BilliardTable, n_rays: int):
    """Flight times on a deterministic (r, phi) grid, proportional to length."""
    share = tab.lengths / tab.total_length
    idx_l, r_l, phi_l = [], [], []
    for i, w in enumerate(share):
        m = max(int(round(n_rays * w)), 4)
        nr = max(int(round(math.sqrt(m))), 2)
        nphi = max(m // nr, 2)
        rr = (np.arange(nr) + 0.5) / nr * tab.lengths[i]
        pp = -HALF_PI + (np.arange(nphi) + 0.5) / nphi * math.pi
        R, P = np.meshgrid(rr, pp, indexing="ij")
        idx_l.append(np.full(R.size, i))
        r_l.append(R.ravel())
        phi_l.append(P.ravel())
    idx, r, phi = np.concatenate(idx_l), np.concatenate(r_l), np.concatenate(phi_l)
    return idx, r, phi, tab.forward(idx, r, phi)


_GRAZE = 1e-7


def _grazing_lengths(tab: BilliardTable, i: int, r: np.ndarray) -> np.ndarray:
    """Free length of the line tangent to scatterer ``i`` at ``r``, both ways."""
    idx = np.full(r.size, i)
    phi = HALF_PI - _GRAZE
    fwd = tab.forward(idx, r, np.full(r.size, phi))
    bwd = tab.forward(idx, r, np.full(r.size, -phi))
    miss = (fwd.status == K.MISSED) | (bwd.status == K.MISSED)
    out = np.where(fwd.ok & bwd.ok, fwd.tau + bwd.tau, -1.0)
    return np.where(miss, np.inf, out)


def _grazing_sup(tab: BilliardTable, n_grid: int = 8192, n_peaks: int = 64):
    """Supremum of free flight.

    For a fixed direction the gap between two fixed disks is convex in the
    perpendicular offset, so the longest flights sit where the line turns
    tangent to some scatterer.  The free segment of such a line is the sum of
    the two near-tangent flights from the touching point.  This reduces the
    search to one parameter per scatterer; local maxima of a grid are zoomed.
    """
    best = (-1.0, 0, 0.0)
    for i in range(tab.n_scatterers):
        ell = float(tab.lengths[i])
        h = ell / n_grid
        r = (np.arange(n_grid) + 0.5) * h
        t = _grazing_lengths(tab, i, r)
        if np.isinf(t).any():
            k = int(np.flatnonzero(np.isinf(t))[0])
            return math.inf, i, float(r[k])
        peak = (t >= np.roll(t, 1)) & (t >= np.roll(t, -1))
        cand = np.flatnonzero(peak)
        cand = cand[np.argsort(t[cand])[::-1][:n_peaks]]
        for k in cand:
            c, w, top = float(r[k]), h, float(t[k])
            for _ in range(40):
                rr = c + w * np.linspace(-1.0, 1.0, 17)
                tt = _grazing_lengths(tab, i, rr % ell)
                j = int(np.argmax(tt))
                if tt[j] >= top:
                    top, c = float(tt[j]), float(rr[j] % ell)
                w *= 0.25
            if top > best[0]:
                best = (top, i, c)
    return best


def certify_horizon(tab: BilliardTable, n_rays: int = 400_000) -> HorizonCertificate:
    """Certify a finite horizon and estimate the longest free flight."""
    corridor, margin = find_corridor(tab.scatterers)
    if corridor is not None:
        return HorizonCertificate(False, math.inf, None, corridor, margin, 0)
    idx, r, phi, s = _sweep_flights(tab, n_rays)
    if np.any(s.status == K.MISSED):
        k = int(np.flatnonzero(s.status == K.MISSED)[0])
        return HorizonCertificate(False, math.inf, PhasePoint(int(idx[k]), float(r[k]), float(phi[k])),
                                  None, margin, idx.size)
    tau = np.where(s.ok, s.tau, -1.0)
    k = int(np.argmax(tau))
    t, i, rr = _grazing_sup(tab)
    if not math.isfinite(t):
        return HorizonCertificate(False, math.inf, PhasePoint(i, rr, HALF_PI - _GRAZE),
                                  None, margin, idx.size)
    # the sweep can only undershoot the supremum; keep whichever is larger and
    # pad for the zoom stopping early and for the near-tangent launch
    if tau[k] > t:
        t, worst = float(tau[k]), PhasePoint(int(idx[k]), float(r[k]), float(phi[k]))
    else:
        worst = PhasePoint(i, rr, HALF_PI - _GRAZE)
    return HorizonCertificate(True, t + 1e-6, worst, None, margin, idx.size)


def build_table(
    scatterers: Sequence[Union[Scatterer, tuple]],
    family: Optional[FamilyParams] = None,
    require_finite_horizon: bool = True,
    n_rays: int = 400_000,
) -> BilliardTable:
    """Validate a scatterer configuration and return a certified table.

    Parameters
    ----------
    scatterers
        ``Scatterer`` objects or ``((x, y), radius)`` tuples.
    family
        Optional uniform bounds; the table must satisfy them.
    require_finite_horizon
        Raise ``InfiniteHorizonError`` when a corridor is found.  When False the
        certificate records the corridor and ``tau_bounds[1]`` is infinite.
    n_rays
        Size of the deterministic flight-time sweep.
    """
    scs = tuple(s if isinstance(s, Scatterer) else Scatterer(tuple(s[0]), s[1]) for s in scatterers)
    if not scs:
        raise ValueError("at least one scatterer is required")
    gap = _check_overlap(scs)
    if gap <= 0.0:
        raise OverlapError(f"scatterers overlap or touch (smallest gap {gap:.3g})")
    kap = [s.curvature for s in scs]
    placeholder = HorizonCertificate(False, math.inf, None, None, math.nan, 0)
    tab = BilliardTable(scs, (_min_gap(scs), math.inf), (min(kap), max(kap)), placeholder, family)
    cert = certify_horizon(tab, n_rays)
    if not cert.finite and require_finite_horizon:
        raise InfiniteHorizonError(
            f"free flight is unbounded (corridor direction {cert.corridor})"
        )
    tab.horizon_certificate = cert
    tab.tau_bounds = (tab.tau_bounds[0], cert.tau_max)
    if family is not None:
        check_family(tab, family)
    return tab


def check_family(tab: BilliardTable, fam: FamilyParams) -> None:
    kmin, kmax = tab.kappa_bounds
    tmin, tmax = tab.tau_bounds
    problems = []
    if kmin < fam.kappa_star:
        problems.append(f"kappa_min {kmin:.4g} < kappa_star {fam.kappa_star:.4g}")
    if kmax > 1.0 / fam.kappa_star:
        problems.append(f"kappa_max {kmax:.4g} > 1/kappa_star {1 / fam.kappa_star:.4g}")
    if tmin < fam.tau_star:
        problems.append(f"tau_min {tmin:.4g} < tau_star {fam.tau_star:.4g}")
    if tmax > 1.0 / fam.tau_star:
        problems.append(f"tau_max {tmax:.4g} > 1/tau_star {1 / fam.tau_star:.4g}")
    if problems:
        raise FamilyBoundError("; ".join(problems))


# -- scalar API ------------------------------------------------------------------


def _raise_status(status: int, x: PhasePoint) -> None:
    if status == K.TANGENT:
        raise TangencyError(f"tangential collision along the orbit of {x}")
    if status == K.MISSED:
        raise NoCollisionError(f"no scatterer hit within the translate block from {x}")


def next_collision(tab: BilliardTable, x: PhasePoint) -> tuple[PhasePoint, float]:
    s = tab.forward([x.scatterer_index], [x.r], [x.phi])
    _raise_status(int(s.status[0]), x)
    return PhasePoint(int(s.idx[0]), float(s.r[0]), float(s.phi[0])), float(s.tau[0])


def apply_inverse(tab: BilliardTable, x: PhasePoint) -> PhasePoint:
    y, _ = next_collision(tab, PhasePoint(x.scatterer_index, x.r, -x.phi))
    return PhasePoint(y.scatterer_index, y.r, -y.phi)


# -- derivatives --------------------------------------------------------------


def differential_from_step(tab: BilliardTable, idx, phi, idx1, phi1, tau) -> np.ndarray:
    """Stack of 2x2 matrices ``DT(x)`` given a precomputed step ``x -> Tx``."""
    k = tab.curvatures[np.asarray(idx)]
    k1 = tab.curvatures[np.asarray(idx1)]
    c, c1 = np.cos(phi), np.cos(phi1)
    tau = np.asarray(tau, dtype=float)
    D = np.empty(np.shape(tau) + (2, 2))
    D[..., 0, 0] = tau * k + c
    D[..., 0, 1] = tau
    D[..., 1, 0] = tau * k * k1 + k * c1 + k1 * c
    D[..., 1, 1] = tau * k1 + c1
    return -D / c1[..., None, None]


def differential(tab: BilliardTable, x: PhasePoint) -> np.ndarray:
    y, tau = next_collision(tab, x)
    return differential_from_step(
        tab, np.array([x.scatterer_index]), np.array([x.phi]),
        np.array([y.scatterer_index]), np.array([y.phi]), np.array([tau]),
    )[0]


def inverse_differential_from_step(tab: BilliardTable, idx, phi, back: Step) -> np.ndarray:
    """``D(T^{-1})(x)`` from the backward step already taken at ``x``."""
    D = differential_from_step(tab, idx, -np.asarray(phi), back.idx, -back.phi, back.tau)
    D[..., 0, 1] *= -1.0
    D[..., 1, 0] *= -1.0
    return D


def inverse_differential(tab: BilliardTable, x: PhasePoint) -> np.ndarray:
    back = tab.backward([x.scatterer_index], [x.r], [x.phi])
    _raise_status(int(back.status[0]), x)
    return inverse_differential_from_step(tab, np.array([x.scatterer_index]), np.array([x.phi]), back)[0]


# -- homogeneity strips --------------------------------------------------------


def strip_index(phi, k0: int) -> np.ndarray:
    """Signed strip index per angle; 0 marks the bulk.

    Strips are half-open in the distance to tangency, ``[(k+1)^-2, k^-2)``, so a
    point on a shared edge belongs to the strip whose lower edge it sits on.
    """
    phi = np.asarray(phi, dtype=float)
    dist = HALF_PI - np.abs(phi)
    with np.errstate(divide="ignore", invalid="ignore"):
        root = 1.0 / np.sqrt(dist)
        near = np.round(root)
        root = np.where(np.abs(root - near) <= 1e-9 * np.maximum(near, 1.0), near, root)
    k = np.ceil(root) - 1.0
    k = np.where(k >= k0, k, 0.0)
    k = np.where(dist <= 0.0, np.inf, k)
    return (np.sign(phi) * k).astype(float)


def homogeneity_index(phi: float, k0: int) -> Union[int, str]:
    k = float(strip_index(np.array([phi]), k0)[0])
    if k == 0.0:
        return "bulk"
    if not math.isfinite(k):
        raise TangencyError("angle is tangential; no homogeneity strip")
    return int(k)


def strip_bounds(k: int) -> tuple[float, float]:
    """Angular interval of strip ``k`` (signed); returns (phi_low, phi_high)."""
    a = abs(k)
    near, far = HALF_PI - 1.0 / (a + 1) ** 2, HALF_PI - 1.0 / a ** 2
    return (far, near) if k > 0 else (-near, -far)


# -- distances between tables -------------------------------------------------


def config_distance(t1: BilliardTable, t2: BilliardTable) -> float:
    """Smallest summed centre displacement over radius-preserving matchings."""
    if t1.n_scatterers != t2.n_scatterers:
        raise ArityMismatch("tables have different numbers of scatterers")
    if not np.allclose(np.sort(t1.rad), np.sort(t2.rad), rtol=0, atol=1e-12):
        raise ArityMismatch("scatterer arclengths differ")
    c1 = np.stack([t1.cx, t1.cy], axis=1)
    c2 = np.stack([t2.cx, t2.cy], axis=1)
    d = np.hypot(*np.moveaxis(_torus_delta(c1[:, None, :], c2[None, :, :]), -1, 0))
    same = np.abs(t1.rad[:, None] - t2.rad[None, :]) <= 1e-12
    cost = np.where(same, d, 1e6)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


@dataclass(frozen=True)
class MapDistanceReport:
    close: bool
    backward_gap: float
    jacobian_gap: float
    derivative_gap: float
    points_used: int
    points_excluded: int
    reason: str = ""


def _grid(tab: BilliardTable, n: int):
    share = tab.lengths / tab.total_length
    idx_l, r_l, phi_l = [], [], []
    for i, w in enumerate(share):
        nr = max(int(round(n * w)), 2)
        rr = (np.arange(nr) + 0.5) / nr * tab.lengths[i]
        pp = -HALF_PI + (np.arange(n) + 0.5) / n * math.pi
        R, P = np.meshgrid(rr, pp, indexing="ij")
        idx_l.append(np.full(R.size, i))
        r_l.append(R.ravel())
        phi_l.append(P.ravel())
    return np.concatenate(idx_l), np.concatenate(r_l), np.concatenate(phi_l)


def _regular_mask(tab: BilliardTable, idx, r, phi, eps, back: Step) -> np.ndarray:
    """Points whose eps-neighbourhood avoids the singular set of the inverse map."""
    good = back.ok & (np.abs(phi) < HALF_PI - eps)
    for dr, dp in ((eps, 0.0), (-eps, 0.0), (0.0, eps), (0.0, -eps)):
        nb = tab.backward(idx, (r + dr) % tab.lengths[idx], np.clip(phi + dp, -HALF_PI, HALF_PI))
        good &= nb.ok & (nb.idx == back.idx) & (nb.kx == back.kx) & (nb.ky == back.ky)
    return good


def map_distance_report(t1: BilliardTable, t2: BilliardTable, eps: float,
                        grid: int = 160, min_points: int = 200,
                        n_slopes: int = 5) -> MapDistanceReport:
    """Check the three closeness conditions on a regular grid.

    The backward images must be eps-close, the stable Jacobians of the inverse
    maps must agree to relative eps, and the inverse differentials applied to
    unit stable vectors must agree to sqrt(eps).  Grid points within eps of the
    singular set of either inverse map are excluded.
    """
    if t1.n_scatterers != t2.n_scatterers:
        raise ArityMismatch("tables have different numbers of scatterers")
    if not np.allclose(t1.lengths, t2.lengths, rtol=0, atol=1e-12):
        return MapDistanceReport(False, math.inf, math.inf, math.inf, 0, 0,
                                 "phase spaces differ (arclengths are not equal)")
    idx, r, phi = _grid(t1, grid)
    b1 = t1.backward(idx, r, phi)
    b2 = t2.backward(idx, r, phi)
    keep = _regular_mask(t1, idx, r, phi, eps, b1) & _regular_mask(t2, idx, r, phi, eps, b2)
    n_used = int(keep.sum())
    if n_used < min_points:
        raise GridTooCoarse(f"only {n_used} grid points avoid the singular sets")
    sel = lambda s: Step(*(a[keep] for a in s))  # noqa: E731
    b1, b2 = sel(b1), sel(b2)
    idx, r, phi = idx[keep], r[keep], phi[keep]
    same = b1.idx == b2.idx
    dr = (b1.r - b2.r + 0.5 * t1.lengths[b1.idx]) % t1.lengths[b1.idx] - 0.5 * t1.lengths[b1.idx]
    gap = np.where(same, np.hypot(dr, b1.phi - b2.phi), np.inf)
    D1 = inverse_differential_from_step(t1, idx, phi, b1)
    D2 = inverse_differential_from_step(t2, idx, phi, b2)
    fam = t1.family or t2.family
    lo, hi = fam.stable_slopes if fam else (-1.0 / t1.kappa_bounds[0] - 1.0 / t1.tau_bounds[0], -t1.kappa_bounds[0])
    jac_gap = 0.0
    der_gap = 0.0
    for m in np.linspace(lo, hi, n_slopes):
        v = np.array([1.0, m]) / math.hypot(1.0, m)
        w1 = D1 @ v
        w2 = D2 @ v
        j1 = np.hypot(w1[:, 0], w1[:, 1])
        j2 = np.hypot(w2[:, 0], w2[:, 1])
        jac_gap = max(jac_gap, float(np.max(np.abs(j1 / j2 - 1.0))))
        der_gap = max(der_gap, float(np.max(np.hypot(*(w1 - w2).T))))
    bgap = float(np.max(gap))
    close = bgap <= eps and jac_gap <= eps and der_gap <= math.sqrt(eps)
    return MapDistanceReport(close, bgap, jac_gap, der_gap, n_used, int((~keep).sum()))


def map_distance(t1: BilliardTable, t2: BilliardTable, eps: float, **kw) -> bool:
    return map_distance_report(t1, t2, eps, **kw).close


# -- observables ---------------------------------------------------------------


def invariance_check(tab: BilliardTable, observables, n: int, rng: np.random.Generator):
    """Compare ``E[g o T]`` with ``E[g]`` under the invariant measure.

    Returns a list of ``(mean_before, mean_after, z_score)`` for each observable,
    where the z-score uses the standard error of the paired difference.
    """
    idx, r, phi = tab.sample_srb(rng, n)
    s = tab.forward(idx, r, phi)
    ok = s.ok
    out = []
    for g in observables:
        a = g(idx[ok], r[ok], phi[ok])
        b = g(s.idx[ok], s.r[ok], s.phi[ok])
        d = b - a
        se = d.std(ddof=1) / math.sqrt(d.size)
        out.append((float(a.mean()), float(b.mean()), float(d.mean() / se) if se > 0 else 0.0))
    return out


# -- hyperbolicity ---------------------------------------------------------------


@dataclass(frozen=True)
class HyperbolicityReport:
    cone_margin: float  # smallest distance of an image slope from the cone boundary
    c1: np.ndarray  # per n: min ||DT^{-n} v|| / (Lambda^n ||v||)
    expansion: float  # Lambda
    samples: int

    @property
    def cone_invariant(self) -> bool:
        return self.cone_margin > 0.0

    @property
    def C1(self) -> float:
        return float(self.c1.min())


def stable_cone(tab: BilliardTable) -> tuple[float, float]:
    """Slope interval of the table's stable cone."""
    kmin, kmax = tab.kappa_bounds
    return -kmax - 1.0 / tab.tau_bounds[0], -kmin


def hyperbolicity_check(tab: BilliardTable, family: FamilyParams, rng: np.random.Generator,
                        samples: int = 1000, n: int = 5) -> HyperbolicityReport:
    """Push both stable-cone boundary vectors backward ``n`` times from random points."""
    lo, hi = stable_cone(tab)
    lam = family.expansion
    idx, r, phi = tab.sample_srb(rng, samples)
    margin = math.inf
    c1 = np.full(n, math.inf)
    for slope in (lo, hi):
        v = np.tile(np.array([1.0, slope]) / math.hypot(1.0, slope), (samples, 1))
        i, rr, p = idx.copy(), r.copy(), phi.copy()
        alive = np.ones(samples, dtype=bool)
        growth = np.zeros(samples)  # log of ||DT^{-k} v||
        for k in range(n):
            back = tab.backward(i, rr, p)
            alive &= back.ok
            D = inverse_differential_from_step(tab, i, p, back)
            w = np.einsum("nij,nj->ni", D, v)
            norm = np.hypot(w[:, 0], w[:, 1])
            s = w[:, 1] / w[:, 0]
            ok = alive & np.isfinite(s)
            if ok.any():
                margin = min(margin, float(np.min(np.minimum(s[ok] - lo, hi - s[ok]))))
                growth[ok] += np.log(norm[ok])
                c1[k] = min(c1[k], float(np.exp(np.min(growth[ok]) - (k + 1) * math.log(lam))))
            v = w / np.where(norm > 0, norm, 1.0)[:, None]
            i = np.where(back.ok, back.idx, 0)
            rr = np.where(back.ok, back.r, 0.0)
            p = np.where(back.ok, back.phi, 0.0)
    return HyperbolicityReport(margin, c1, lam, samples)
