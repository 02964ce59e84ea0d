"""Open sequential billiards: holes, survival, escape rates and exit statistics.

A hole is checked once every ``N`` collisions.  A point survives ``n`` macro
steps when it avoids the hole at macro times ``0, N, ..., (n-1) N``; the open
transfer operator is ``L_N 1_{H^c}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numba import njit

from . import _kernels as K
from .billiard import BilliardTable
from .cone import ConeParams
from .curves import StableCurve
from .errors import GeometryError, Starvation
from .stats import loglinear_fit, mean_and_se

Observable = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
P0 = 3  # cut complexity of the holes implemented here


# -- holes ---------------------------------------------------------------------------


class Hole:
    """Subset of phase space through which mass escapes."""

    kind = "abstract"

    def contains(self, table: BilliardTable, idx, r, phi) -> np.ndarray:
        raise NotImplementedError

    def measure(self, table: BilliardTable, rng: np.random.Generator, samples: int = 1_000_000):
        """Monte Carlo ``mu(H)`` and its standard error."""
        idx, r, phi = table.sample_srb(rng, samples)
        return mean_and_se(self.contains(table, idx, r, phi).astype(float))

    # (O1): number of pieces a stable curve is cut into
    def cut_count(self, table: BilliardTable, W: StableCurve, samples: int = 4097) -> int:
        s = np.linspace(*W.interval, samples)
        inside = self.contains(table, np.full(s.shape, W.scatterer_index),
                               np.mod(s, table.lengths[W.scatterer_index]), W.phi_at(s))
        return int(np.count_nonzero(inside[1:] != inside[:-1])) + 1

    # (O2): arclength of W within eps of the hole boundary
    def boundary_measure(self, table: BilliardTable, W: StableCurve, eps: float,
                         samples: int = 8193, ring: int = 16) -> float:
        s = np.linspace(*W.interval, samples)
        idx = np.full(s.shape, W.scatterer_index)
        r0, p0 = s, W.phi_at(s)
        ln = table.lengths[W.scatterer_index]
        base = self.contains(table, idx, np.mod(r0, ln), p0)
        near = np.zeros(s.shape, dtype=bool)
        for t in np.linspace(0.0, 2 * math.pi, ring, endpoint=False):
            for frac in (0.5, 1.0):
                rr = np.mod(r0 + frac * eps * math.cos(t), ln)
                pp = np.clip(p0 + frac * eps * math.sin(t), -0.5 * math.pi, 0.5 * math.pi)
                near |= self.contains(table, idx, rr, pp) != base
        speed = W.speed(s)
        return float(np.trapezoid(near * speed, s))


@dataclass(frozen=True)
class ArcHole(Hole):
    """Arc ``(a, b)`` of one scatterer: ``H = (a, b) x [-pi/2, pi/2]``."""

    scatterer_index: int
    a: float
    b: float
    kind = "I"

    def contains(self, table, idx, r, phi):
        idx = np.asarray(idx)
        r = np.asarray(r)
        return (idx == self.scatterer_index) & (r > self.a) & (r < self.b)

    def exact_measure(self, table: BilliardTable) -> float:
        return 2.0 * table.srb_constant * (self.b - self.a)

    def boundary_measure(self, table, W, eps, samples: int = 8193, ring: int = 16) -> float:
        if W.scatterer_index != self.scatterer_index:
            return 0.0
        s = np.linspace(*W.interval, samples)
        ln = table.lengths[self.scatterer_index]
        d = np.minimum(_circ(s - self.a, ln), _circ(s - self.b, ln))
        return float(np.trapezoid((d < eps) * W.speed(s), s))

    def stable_diameter(self, max_slope: float) -> float:
        """Longest straight stable segment of slope at most ``max_slope`` inside the hole."""
        w = self.b - self.a
        if max_slope * w <= math.pi:
            return math.hypot(w, max_slope * w)
        return math.pi * math.sqrt(1.0 + 1.0 / max_slope ** 2)


def _circ(d, period):
    d = np.mod(d, period)
    return np.minimum(d, period - d)


class FlightHole(Hole):
    """Points whose incoming free flight meets a set in the table."""

    def _hits(self, ax, ay, bx, by) -> np.ndarray:
        raise NotImplementedError

    def contains(self, table, idx, r, phi):
        idx = np.asarray(idx, dtype=np.int64)
        r = np.asarray(r, dtype=float)
        phi = np.asarray(phi, dtype=float)
        st = table.backward(idx, r, phi)
        ax, ay = table.position(np.where(st.ok, st.idx, 0), np.where(st.ok, st.r, 0.0))
        bx, by = table.position(idx, r)
        # the current point sits in the cell translated by (kx, ky) from the previous one
        bx = bx + st.kx
        by = by + st.ky
        return self._hits(np.asarray(ax), np.asarray(ay), bx, by) & st.ok


@njit(cache=True)
def _segments_hit_disk(ax, ay, bx, by, gx, gy, gr):
    out = np.zeros(ax.shape[0], dtype=np.bool_)
    for i in range(ax.shape[0]):
        out[i] = K.segment_hits_disk(ax[i], ay[i], bx[i], by[i], gx, gy, gr)
    return out


@dataclass(frozen=True)
class DiskHole(FlightHole):
    """Forward shadow of an open disk in the table (absorbed on the way to a collision)."""

    center: tuple
    radius: float
    kind = "II"

    def _hits(self, ax, ay, bx, by):
        return _segments_hit_disk(np.ascontiguousarray(ax, dtype=float), np.ascontiguousarray(ay, dtype=float),
                                  np.ascontiguousarray(bx, dtype=float), np.ascontiguousarray(by, dtype=float),
                                  float(self.center[0]), float(self.center[1]), float(self.radius))


@dataclass(frozen=True)
class LineCrossingHole(FlightHole):
    """Incoming flight crosses a line ``x = k h`` or ``y = k h`` (lattice of gates)."""

    spacing: float = 0.5
    kind = "gate"

    def _hits(self, ax, ay, bx, by):
        h = self.spacing
        return (np.floor(ax / h) != np.floor(bx / h)) | (np.floor(ay / h) != np.floor(by / h))


@dataclass(frozen=True)
class FullHole(Hole):
    """The whole phase space."""

    kind = "all"

    def contains(self, table, idx, r, phi):
        return np.ones(np.shape(idx), dtype=bool)


@dataclass(frozen=True)
class EmptyHole(Hole):
    """No hole: the closed system."""

    kind = "none"

    def contains(self, table, idx, r, phi):
        return np.zeros(np.shape(idx), dtype=bool)


def make_hole(table: BilliardTable, spec: dict) -> Hole:
    """Build a hole from ``{"kind": "arc"|"disk"|"gate"|"all"|"none", ...}``."""
    kind = spec.get("kind")
    if kind in ("arc", "I"):
        i = int(spec["scatterer"])
        a, b = map(float, spec["arc"])
        if not 0 <= i < table.n_scatterers:
            raise GeometryError(f"no scatterer {i}")
        if not 0.0 <= a < b <= table.lengths[i]:
            raise GeometryError("arc must satisfy 0 <= a < b <= scatterer length")
        return ArcHole(i, a, b)
    if kind in ("disk", "II"):
        c = (float(spec["center"][0]) % 1.0, float(spec["center"][1]) % 1.0)
        rad = float(spec["radius"])
        if rad <= 0:
            raise GeometryError("hole radius must be positive")
        for j in range(table.n_scatterers):
            d = np.array([table.cx[j] - c[0], table.cy[j] - c[1]])
            d -= np.round(d)
            if math.hypot(*d) <= table.rad[j] + rad:
                raise GeometryError(f"disk hole touches scatterer {j}")
        return DiskHole(c, rad)
    if kind == "gate":
        return LineCrossingHole(float(spec.get("spacing", 0.5)))
    if kind == "all":
        return FullHole()
    if kind == "none":
        return EmptyHole()
    raise GeometryError(f"unknown hole kind {kind!r}")


def stable_dictionary(table: BilliardTable, n: int, length: float, rng: np.random.Generator,
                      slopes: Optional[tuple] = None) -> list:
    """Random straight stable segments spanning the table's stable cone."""
    tmin = table.tau_bounds[0]
    kmin, kmax = table.kappa_bounds
    lo, hi = slopes or (kmin, kmax + 1.0 / tmin)
    out = []
    for j in range(n):
        idx = int(rng.integers(table.n_scatterers))
        slope = -(lo + (hi - lo) * (j % 11) / 10.0)
        r0 = rng.uniform(0.0, table.lengths[idx])
        dphi = length * abs(slope) / math.sqrt(1.0 + slope * slope)
        phi0 = rng.uniform(-0.5 * math.pi + dphi + 1e-9, 0.5 * math.pi - 1e-9)
        out.append(StableCurve.segment(idx, r0, phi0, slope, length))
    return out


def complexity(hole: Hole, table: BilliardTable, curves: Sequence[StableCurve]) -> int:
    """Largest number of pieces any curve is cut into by the hole boundary."""
    return max(hole.cut_count(table, W) for W in curves)


def transversality_constant(hole: Hole, table: BilliardTable, curves: Sequence[StableCurve],
                            eps_list=(1e-2, 1e-3)) -> float:
    """``sup m_W(N_eps(dH)) / (2 eps)``, per unit width of the neighbourhood."""
    best = 0.0
    for eps in eps_list:
        for W in curves:
            best = max(best, hole.boundary_measure(table, W, eps) / (2.0 * eps))
    return best


@dataclass(frozen=True)
class SmallHoleBound:
    threshold: float  # largest admissible stable diameter
    c: float
    A: float
    L: float

    def applies(self, stable_diameter: float) -> bool:
        return stable_diameter <= self.threshold


def small_hole_bound(params: ConeParams, Ct: float, P0: int = P0) -> SmallHoleBound:
    """Inflated cone constants for masking by a hole of small stable diameter."""
    q, d = params.q, params.delta
    grow = 2.0 * P0 ** (1 - q) * math.exp(params.a * (2 * d) ** params.beta) * params.A
    c2 = (P0 ** q * math.exp(params.a * (2 * d) ** params.alpha)
          + 2.0 * (2 ** q * d + 0.75 * params.c) + 4.0 * (P0 + 2) * P0 ** (q - 1) * Ct ** q)
    return SmallHoleBound(d * (1.0 / (4.0 * P0 * params.A)) ** (1.0 / q), c2, grow, grow)


# -- open dynamics -------------------------------------------------------------------


@dataclass
class OpenComposition:
    """Maps applied in order with a hole checked every ``N`` collisions.

    ``maps`` is a table (autonomous) or a list cycled as needed; ``holes`` is
    one hole or a list indexed by macro time (cycled).
    """

    maps: object
    holes: object
    N: int = 1

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")

    def table(self, j: int) -> BilliardTable:
        if isinstance(self.maps, BilliardTable):
            return self.maps
        return self.maps[j % len(self.maps)]

    def hole(self, k: int) -> Hole:
        if isinstance(self.holes, Hole):
            return self.holes
        return self.holes[k % len(self.holes)]

    @property
    def base(self) -> BilliardTable:
        return self.table(0)


@dataclass
class OpenRun:
    """Forward Monte Carlo of an open composition."""

    weights: np.ndarray  # f at the initial points
    alive: np.ndarray  # (n + 1, samples) survival after k checks
    absorbed_at: np.ndarray  # macro time of absorption, -1 if survived
    exit_r: np.ndarray
    exit_phi: np.ndarray
    exit_idx: np.ndarray
    final: tuple  # (idx, r, phi) after n macro steps
    lost: int  # orbits stopped by a tangency (treated as measure zero)

    @property
    def masses(self) -> np.ndarray:
        return (self.alive * self.weights).mean(axis=1)

    @property
    def survivors(self) -> np.ndarray:
        return self.alive.sum(axis=1)

    def batch_masses(self, batches: int = 20) -> np.ndarray:
        w = self.alive * self.weights
        return np.stack([b.mean(axis=1) for b in np.array_split(w, batches, axis=1)])


def _advance(comp: OpenComposition, k: int, idx, r, phi, ok):
    for j in range(comp.N):
        st = comp.table(k * comp.N + j).forward(idx, r, phi)
        ok &= st.ok
        idx = np.where(st.ok, st.idx, 0)
        r = np.where(st.ok, st.r, 0.0)
        phi = np.where(st.ok, st.phi, 0.0)
    return idx, r, phi, ok


def simulate_open(comp: OpenComposition, f: Observable, n: int, rng: np.random.Generator,
                  samples: int) -> OpenRun:
    tab = comp.base
    idx, r, phi = tab.sample_srb(rng, samples)
    w = np.asarray(f(idx, r, phi), dtype=float) * np.ones(samples)
    if np.any(w < 0):
        raise ValueError("initial density must be nonnegative")
    alive = np.zeros((n + 1, samples), dtype=bool)
    alive[0] = True
    absorbed = np.full(samples, -1)
    ex_r = np.full(samples, np.nan)
    ex_phi = np.full(samples, np.nan)
    ex_idx = np.full(samples, -1)
    ok = np.ones(samples, dtype=bool)
    live = alive[0].copy()
    for k in range(n):
        hit = live & comp.hole(k).contains(comp.table(k * comp.N), idx, r, phi)
        absorbed[hit] = k + 1
        ex_r[hit], ex_phi[hit], ex_idx[hit] = r[hit], phi[hit], idx[hit]
        live &= ~hit
        idx, r, phi, ok = _advance(comp, k, idx, r, phi, ok)
        live &= ok
        alive[k + 1] = live
    return OpenRun(w, alive, absorbed, ex_r, ex_phi, ex_idx, (idx, r, phi), int((~ok).sum()))


def survival_mass(f: Observable, comp: OpenComposition, n: int, rng: np.random.Generator,
                  samples: int = 200_000):
    """``int_{M^n} f dmu`` (surviving ``n`` checks) with its standard error."""
    if n == 0:
        return float(srb_average(comp.base, f, rng, samples)), 0.0
    run = simulate_open(comp, f, n, rng, samples)
    return mean_and_se(run.alive[n] * run.weights)


def srb_average(table: BilliardTable, f: Observable, rng: np.random.Generator, samples: int) -> float:
    idx, r, phi = table.sample_srb(rng, samples)
    return float(np.mean(f(idx, r, phi)))


@dataclass
class EscapeEstimate:
    masses: np.ndarray
    survivors: np.ndarray
    ratios: np.ndarray
    nu: float
    nu_se: float
    nu_ci: tuple
    window: tuple
    window_gap: float  # |nu(first half) - nu(second half)| of the window
    residual: float = math.nan

    @property
    def escape_rate(self) -> float:
        return -math.log(self.nu) if self.nu > 0 else math.inf

    def ratio_spread(self, last: int = 5) -> float:
        tail = self.ratios[-last:]
        return float(tail.max() - tail.min())

    def rows(self):
        for k in range(self.masses.size):
            ratio = self.ratios[k - 1] if k > 0 else math.nan
            yield k, int(self.survivors[k]), float(self.masses[k]), float(ratio), self.nu


def _nu_from(masses, lo, hi):
    if masses[lo] <= 0 or masses[hi] <= 0:
        return 0.0
    return float((masses[hi] / masses[lo]) ** (1.0 / (hi - lo)))


def escape_from_run(run: OpenRun, min_survivors: int = 1000, batches: int = 20) -> EscapeEstimate:
    n = run.alive.shape[0] - 1
    surv = run.survivors
    if surv[n] < min_survivors:
        k = int(np.argmax(surv < min_survivors))
        raise Starvation(f"only {surv[k]} survivors at macro time {k}")
    m = run.masses
    ratios = m[1:] / m[:-1]
    lo = max(1, n // 2)
    nu = _nu_from(m, lo, n)
    mid = (lo + n) // 2
    gap = abs(_nu_from(m, lo, mid) - _nu_from(m, mid, n)) if mid > lo and n > mid else math.nan
    bm = run.batch_masses(batches)
    per = np.array([_nu_from(b, lo, n) for b in bm])
    se = float(per.std(ddof=1) / math.sqrt(batches))
    return EscapeEstimate(m, surv, ratios, nu, se, (nu - 1.96 * se, nu + 1.96 * se), (lo, n), gap)


def escape_rate(f: Observable, comp: OpenComposition, n_max: int, rng: np.random.Generator,
                samples: int = 200_000, min_survivors: int = 1000) -> EscapeEstimate:
    run = simulate_open(comp, f, n_max, rng, samples)
    return escape_from_run(run, min_survivors)


@dataclass
class Cloud:
    """Weighted surviving points representing the normalised open iterate."""

    idx: np.ndarray
    r: np.ndarray
    phi: np.ndarray
    weights: np.ndarray  # sums to one

    def integral(self, psi: Observable) -> float:
        return float(self.weights @ psi(self.idx, self.r, self.phi))

    def integral_se(self, psi: Observable) -> float:
        v = psi(self.idx, self.r, self.phi)
        m = self.weights @ v
        return float(math.sqrt(np.sum(self.weights ** 2 * (v - m) ** 2)))


def limiting_density(comp: OpenComposition, n: int, rng: np.random.Generator,
                     samples: int = 200_000, f: Optional[Observable] = None,
                     min_survivors: int = 1000) -> Cloud:
    f = f or (lambda i, r, p: np.ones(np.shape(r)))
    run = simulate_open(comp, f, n, rng, samples)
    live = run.alive[n]
    if live.sum() < min_survivors:
        raise Starvation(f"only {int(live.sum())} survivors after {n} macro steps")
    w = run.weights[live]
    idx, r, phi = (a[live] for a in run.final)
    return Cloud(idx, r, phi, w / w.sum())


def eigen_residual(cloud: Cloud, comp: OpenComposition, k: int, nu: float, psis: Sequence[Observable]):
    """``|int L h psi - nu int h psi| / int h psi`` for each test function.

    ``k`` is the macro time of the cloud, so the next hole and maps are used.
    """
    idx, r, phi = cloud.idx, cloud.r, cloud.phi
    keep = ~comp.hole(k).contains(comp.table(k * comp.N), idx, r, phi)
    ok = np.ones(idx.shape, dtype=bool)
    i2, r2, p2, ok = _advance(comp, k, idx, r, phi, ok)
    out = []
    for psi in psis:
        before = cloud.integral(psi)
        after = float(cloud.weights @ np.where(keep & ok, psi(i2, r2, p2), 0.0))
        out.append(abs(after - nu * before) / abs(before))
    return out


def plateau_constant(masses: np.ndarray, nu: float, tol: float = 1e-2, span: int = 3):
    """``l(f)`` as the plateau of ``nu^{-n} mass_n``; ``None`` if no plateau is found."""
    seq = masses / nu ** np.arange(masses.size)
    for k in range(masses.size - span):
        win = seq[k:k + span + 1]
        if np.all(np.abs(np.diff(win)) / np.abs(win[:-1]) < tol):
            return float(win[-1]), k
    return None


@dataclass
class ExitStatistics:
    n: np.ndarray
    probability: np.ndarray
    se: np.ndarray
    ratio: np.ndarray  # probability / nu^n

    def rows(self):
        for k in range(self.n.size):
            yield int(self.n[k]), float(self.probability[k]), float(self.se[k]), float(self.ratio[k])


def exit_statistics(run: OpenRun, window: tuple, nu: float) -> ExitStatistics:
    """Probability of absorption at each macro time with the exit datum in ``window``.

    ``window`` is ``("phi", lo, hi)`` for an angular window, ``("r", lo, hi)``
    for a boundary interval, or ``("all",)``.
    """
    kind = window[0]
    if kind == "all":
        inside = np.ones(run.exit_r.shape, dtype=bool)
    elif kind == "phi":
        inside = (run.exit_phi >= window[1]) & (run.exit_phi < window[2])
    elif kind == "r":
        inside = (run.exit_r >= window[1]) & (run.exit_r < window[2])
    else:
        raise ValueError(f"unknown window kind {kind!r}")
    n = run.alive.shape[0] - 1
    ks = np.arange(1, n + 1)
    prob = np.empty(n)
    se = np.empty(n)
    for j, k in enumerate(ks):
        prob[j], se[j] = mean_and_se((run.absorbed_at == k) * inside * run.weights)
    # absorption at check k happens at macro time k - 1
    return ExitStatistics(ks, prob, se, prob / nu ** (ks - 1))


def window_rate(run: OpenRun, lo: int, hi: int, batches: int = 20):
    """Per-step survival factor from a log-linear fit of the masses on ``[lo, hi]``.

    Uses the same estimator as ``LazyOrbits.rate`` so the two can be compared;
    the standard error comes from the spread over sample batches.
    """
    ks = np.arange(lo, hi + 1)
    fit = loglinear_fit(ks, run.masses[lo:hi + 1])
    per = [loglinear_fit(ks, b[lo:hi + 1]).rate for b in run.batch_masses(batches)]
    return fit.rate, float(np.std(per, ddof=1) / math.sqrt(batches)), fit


def merge_runs(runs: Sequence[OpenRun]) -> OpenRun:
    """Concatenate independent runs of the same composition along the sample axis."""
    cat = lambda name: np.concatenate([getattr(x, name) for x in runs], axis=-1)  # noqa: E731
    final = tuple(np.concatenate([x.final[k] for x in runs]) for k in range(3))
    return OpenRun(cat("weights"), cat("alive"), cat("absorbed_at"), cat("exit_r"), cat("exit_phi"),
                   cat("exit_idx"), final, sum(x.lost for x in runs))


def surviving_cloud(run: OpenRun) -> Cloud:
    """The normalised survivors of a run as a weighted cloud."""
    live = run.alive[-1]
    if not live.any():
        raise Starvation("no survivors")
    w = run.weights[live]
    idx, r, phi = (a[live] for a in run.final)
    return Cloud(idx, r, phi, w / w.sum())
