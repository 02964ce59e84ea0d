"""Chaotic scattering from a box with lazy gates.

The box ``R`` is square and normalised to ``[0, 1/2]^2``; reflecting it three
times gives the unit torus, on which the usual collision map applies.  Box
dynamics are simulated directly with reflecting walls by a separate kernel, so
the cover can be checked against it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from ..billiard import BilliardTable, build_table
from ..errors import BilliardError, GeometryError, HorizonError, InfiniteHorizonError, SymmetryError
from ..open_systems import LineCrossingHole, OpenComposition
from ..stats import loglinear_fit

HALF = 0.5
EXIT_TOL = 1e-9


# -- box kernels -----------------------------------------------------------------------


@njit(cache=True)
def _first_obstacle(px, py, vx, vy, ox, oy, orad):
    best = np.inf
    bj = -1
    for j in range(ox.shape[0]):
        dx = px - ox[j]
        dy = py - oy[j]
        b = dx * vx + dy * vy
        if b >= 0.0:
            continue
        disc = b * b - (dx * dx + dy * dy - orad[j] * orad[j])
        if disc <= 0.0:
            continue
        s = -b - np.sqrt(disc)
        if 1e-12 < s < best:
            best = s
            bj = j
    return bj, best


@njit(cache=True)
def _wall_times(px, py, vx, vy, lo, hi):
    tx = np.inf
    ty = np.inf
    if vx > 0.0:
        tx = (hi - px) / vx
    elif vx < 0.0:
        tx = (lo - px) / vx
    if vy > 0.0:
        ty = (hi - py) / vy
    elif vy < 0.0:
        ty = (lo - py) / vy
    return max(tx, 0.0), max(ty, 0.0)


@njit(cache=True)
def _flight(px, py, vx, vy, ox, oy, orad, lo, hi, transparent):
    """Fly to the next collision; walls reflect unless ``transparent``.

    Returns (status, j, x, y, vx, vy) with status 0 collision, 1 exit
    (position on the wall), 2 lost (tangency or runaway).
    """
    for _ in range(64):
        j, s = _first_obstacle(px, py, vx, vy, ox, oy, orad)
        tx, ty = _wall_times(px, py, vx, vy, lo, hi)
        tw = min(tx, ty)
        if j >= 0 and s <= tw:
            hx = px + s * vx
            hy = py + s * vy
            nx = hx - ox[j]
            ny = hy - oy[j]
            d = np.hypot(nx, ny)
            nx /= d
            ny /= d
            # pin the hit point to the circle so errors do not accumulate along long orbits
            hx = ox[j] + orad[j] * nx
            hy = oy[j] + orad[j] * ny
            vn = vx * nx + vy * ny
            if -vn < 1e-10:
                return 2, j, hx, hy, vx, vy
            wx = vx - 2.0 * vn * nx
            wy = vy - 2.0 * vn * ny
            d = np.hypot(wx, wy)
            return 0, j, hx, hy, wx / d, wy / d
        px += tw * vx
        py += tw * vy
        # snap onto the wall that was reached
        if tx <= ty:
            px = hi if vx > 0.0 else lo
        if ty <= tx:
            py = hi if vy > 0.0 else lo
        if transparent:
            return 1, -1, px, py, vx, vy
        if tx <= ty:
            vx = -vx
        if ty <= tx:
            vy = -vy
    return 2, -1, px, py, vx, vy


@njit(cache=True)
def _state(ox, oy, orad, j, r, phi):
    R = orad[j]
    a = r / R
    nx = np.cos(a)
    ny = -np.sin(a)
    c = np.cos(phi)
    s = np.sin(phi)
    return ox[j] + R * nx, oy[j] + R * ny, c * nx + s * ny, c * ny - s * nx


@njit(cache=True)
def _coords(ox, oy, orad, j, hx, hy, wx, wy):
    R = orad[j]
    nx = (hx - ox[j]) / R
    ny = (hy - oy[j]) / R
    a = np.arctan2(-ny, nx)
    if a < 0.0:
        a += 2.0 * np.pi
    return a * R, np.arctan2(wx * ny - wy * nx, wx * nx + wy * ny)


@njit(cache=True)
def _box_step(ox, oy, orad, lo, hi, j, r, phi, out_j, out_r, out_phi, out_status):
    for k in range(j.shape[0]):
        px, py, vx, vy = _state(ox, oy, orad, j[k], r[k], phi[k])
        st, jj, hx, hy, wx, wy = _flight(px, py, vx, vy, ox, oy, orad, lo, hi, False)
        out_status[k] = st
        out_j[k] = jj
        if st == 0:
            out_r[k], out_phi[k] = _coords(ox, oy, orad, jj, hx, hy, wx, wy)
        else:
            out_r[k] = np.nan
            out_phi[k] = np.nan


@njit(cache=True)
def _enters_box(ax, ay, bx, by, lo, hi):
    """Liang-Barsky test of the segment against the open box shrunk by EXIT_TOL."""
    lo = lo + 1e-9
    hi = hi - 1e-9
    t0 = 0.0
    t1 = 1.0
    dx = bx - ax
    dy = by - ay
    for p, q in ((-dx, ax - lo), (dx, hi - ax), (-dy, ay - lo), (dy, hi - ay)):
        if p == 0.0:
            if q < 0.0:
                return False
        else:
            t = q / p
            if p < 0.0:
                t0 = max(t0, t)
            else:
                t1 = min(t1, t)
    return t0 < t1


@njit(cache=True)
def _reentry(px, py, vx, vy, ox, oy, orad, lo, hi):
    """Follow the escaped particle in free space; 1 if it ever re-enters the box."""
    for _ in range(128):
        j, s = _first_obstacle(px, py, vx, vy, ox, oy, orad)
        if j < 0:
            return 1 if _enters_box(px, py, px + 8.0 * vx, py + 8.0 * vy, lo, hi) else 0
        hx = px + s * vx
        hy = py + s * vy
        if _enters_box(px, py, hx, hy, lo, hi):
            return 1
        nx = (hx - ox[j]) / orad[j]
        ny = (hy - oy[j]) / orad[j]
        vn = vx * nx + vy * ny
        vx -= 2.0 * vn * nx
        vy -= 2.0 * vn * ny
        px, py = hx, hy
    return 0


@njit(cache=True)
def _lazy(ox, oy, orad, lo, hi, j, r, phi, n_macro, N,
          exit_k, ex, ey, etheta, reentry, status):
    for k in range(j.shape[0]):
        exit_k[k] = -1
        reentry[k] = 0
        status[k] = 0
        ex[k] = np.nan
        ey[k] = np.nan
        etheta[k] = np.nan
        jj = j[k]
        px, py, vx, vy = _state(ox, oy, orad, jj, r[k], phi[k])
        for m in range(n_macro):
            st, jj, px, py, vx, vy = _flight(px, py, vx, vy, ox, oy, orad, lo, hi, True)
            if st == 1:
                exit_k[k] = m
                ex[k] = px
                ey[k] = py
                etheta[k] = np.arctan2(vy, vx)
                reentry[k] = _reentry(px, py, vx, vy, ox, oy, orad, lo, hi)
                break
            for _ in range(N - 1):
                if st != 0:
                    break
                st, jj, px, py, vx, vy = _flight(px, py, vx, vy, ox, oy, orad, lo, hi, False)
            if st != 0:
                status[k] = 2
                break


# -- construction ------------------------------------------------------------------------


@dataclass(eq=False)
class BoxedTable:
    box: tuple  # (x0, x1, y0, y1) in the caller's units
    obstacles: tuple  # ((x, y), radius) in the caller's units
    symmetric_lines: tuple  # per obstacle, the box sides it is reflected across
    torus: BilliardTable
    scale: float
    ox: np.ndarray = field(repr=False)
    oy: np.ndarray = field(repr=False)
    orad: np.ndarray = field(repr=False)
    gates: tuple = ()  # open wall segments ((x0, y0), (x1, y1)) in normalised units
    cover_error: float = math.nan

    lo = 0.0
    hi = HALF

    @property
    def lengths(self) -> np.ndarray:
        return 2.0 * math.pi * self.orad

    def inside(self, j, r) -> np.ndarray:
        x, y = self.position(j, r)
        return (x >= -1e-15) & (x <= HALF + 1e-15) & (y >= -1e-15) & (y <= HALF + 1e-15)

    def position(self, j, r):
        j = np.asarray(j)
        R = self.orad[j]
        a = np.asarray(r) / R
        return self.ox[j] + R * np.cos(a), self.oy[j] - R * np.sin(a)

    def sample(self, rng: np.random.Generator, n: int):
        """Points of the box phase space with density ``cos(phi)`` on the boundary arcs inside R."""
        p = self.lengths / self.lengths.sum()
        out_j = np.empty(0, np.int64)
        out_r = np.empty(0)
        while out_j.size < n:
            m = 2 * (n - out_j.size) + 16
            j = rng.choice(self.orad.size, size=m, p=p)
            r = rng.random(m) * self.lengths[j]
            keep = self.inside(j, r)
            out_j = np.concatenate([out_j, j[keep]])
            out_r = np.concatenate([out_r, r[keep]])
        phi = np.arcsin(2.0 * rng.random(n) - 1.0)
        return out_j[:n].astype(np.int64), out_r[:n], phi

    def step(self, j, r, phi):
        """One collision of the box billiard with reflecting walls."""
        j = np.ascontiguousarray(j, dtype=np.int64)
        r = np.ascontiguousarray(r, dtype=float)
        phi = np.ascontiguousarray(phi, dtype=float)
        oj, orr, op, st = np.empty_like(j), np.empty_like(r), np.empty_like(phi), np.empty_like(j)
        _box_step(self.ox, self.oy, self.orad, self.lo, self.hi, j, r, phi, oj, orr, op, st)
        return oj, orr, op, st == 0

    def project(self, idx, r, phi):
        """Torus phase point to box phase point by folding the position and velocity."""
        x, y = self.torus.position(idx, r)
        vx, vy = self.torus.velocity(idx, r, phi)
        x, y = np.mod(x, 1.0), np.mod(y, 1.0)
        vx, vy = np.asarray(vx).copy(), np.asarray(vy).copy()
        fx, fy = x > HALF, y > HALF
        x = np.where(fx, 1.0 - x, x)
        y = np.where(fy, 1.0 - y, y)
        vx[fx] *= -1.0
        vy[fy] *= -1.0
        gap = np.abs(np.hypot(x[:, None] - self.ox, y[:, None] - self.oy) - self.orad)
        j = np.argmin(gap, axis=1)
        nx = (x - self.ox[j]) / self.orad[j]
        ny = (y - self.oy[j]) / self.orad[j]
        a = np.mod(np.arctan2(-ny, nx), 2.0 * math.pi)
        return j.astype(np.int64), a * self.orad[j], np.arctan2(vx * ny - vy * nx, vx * nx + vy * ny)

    def check_cover(self, rng: np.random.Generator, samples: int = 1000) -> float:
        """Largest ``|pi(T~ x) - T(pi x)|`` over random torus points."""
        idx, r, phi = self.torus.sample_srb(rng, samples)
        st = self.torus.forward(idx, r, phi)
        ok = st.ok
        j1, r1, p1 = self.project(st.idx[ok], st.r[ok], st.phi[ok])
        j0, r0, q0 = self.project(idx[ok], r[ok], phi[ok])
        j2, r2, p2, ok2 = self.step(j0, r0, q0)
        if not np.all(ok2 & (j1 == j2)):
            return math.inf
        L = self.lengths[j1]
        dr = np.abs(np.mod(r1 - r2 + 0.5 * L, L) - 0.5 * L)
        return float(max(dr.max(), np.abs(p1 - p2).max()))

    def open_system(self, N: int) -> OpenComposition:
        """Unfolded open system whose hole is the set of flights crossing a box wall."""
        return OpenComposition(self.torus, LineCrossingHole(HALF), N)

    def lift(self, rng: np.random.Generator, samples: int):
        """Torus starting points ``T~ x~`` with ``x~`` invariantly distributed."""
        idx, r, phi = self.torus.sample_srb(rng, samples)
        st = self.torus.forward(idx, r, phi)
        return st.idx[st.ok], st.r[st.ok], st.phi[st.ok]


def _open_gates(ox, oy, orad):
    """Parts of the four walls not covered by obstacles."""
    gates = []
    sides = [((0.0, 0.0), (HALF, 0.0)), ((HALF, 0.0), (HALF, HALF)),
             ((HALF, HALF), (0.0, HALF)), ((0.0, HALF), (0.0, 0.0))]
    for a, b in sides:
        a, b = np.array(a), np.array(b)
        covered = []
        for x, y, R in zip(ox, oy, orad):
            # chord of the disk along the wall line, in the wall parameter t in [0, 1]
            d = b - a
            L = np.linalg.norm(d)
            u = d / L
            w = np.array([x, y]) - a
            along = w @ u
            off = abs(w[0] * u[1] - w[1] * u[0])
            if off < R:
                h = math.sqrt(R * R - off * off)
                covered.append(((along - h) / L, (along + h) / L))
        t = 0.0
        for c0, c1 in sorted(covered):
            if c0 > t:
                gates.append((tuple(a + t * (b - a)), tuple(a + c0 * (b - a))))
            t = max(t, c1)
        if t < 1.0:
            gates.append((tuple(a + t * (b - a)), tuple(b)))
    return tuple(gates)


def build_boxed(obstacles: Sequence, box: Sequence[float] = (0.0, 1.0, 0.0, 1.0),
                n_rays: int = 400_000, check_samples: int = 1000, seed: int = 0) -> BoxedTable:
    """Validate a box of disks and build its four-copy torus cover.

    ``obstacles`` are ``((x, y), radius)``; ``box`` is ``(x0, x1, y0, y1)`` and
    must be square.  A disk that meets a wall must be centred on it.
    """
    x0, x1, y0, y1 = map(float, box)
    if not (x1 > x0 and y1 > y0) or abs((x1 - x0) - (y1 - y0)) > 1e-12 * (x1 - x0):
        raise GeometryError("only square boxes are supported")
    s = HALF / (x1 - x0)
    obs = tuple(((float(c[0]), float(c[1])), float(R)) for c, R in obstacles)
    lines = []
    ox, oy, orad = [], [], []
    for (cx, cy), R in obs:
        if R <= 0:
            raise GeometryError("obstacle radius must be positive")
        met = []
        for name, dist in (("left", cx - x0), ("right", x1 - cx), ("bottom", cy - y0), ("top", y1 - cy)):
            if dist < -R or (dist < 0 and abs(dist) >= R):
                raise GeometryError(f"obstacle at {(cx, cy)} lies outside the box")
            if abs(dist) < R:
                if abs(dist) > 1e-12 * (x1 - x0):
                    raise SymmetryError(f"obstacle at {(cx, cy)} crosses the {name} wall off-centre")
                met.append(name)
        lines.append(tuple(met))
        ox.append((cx - x0) * s)
        oy.append((cy - y0) * s)
        orad.append(R * s)
    copies = []
    for x, y, R in zip(ox, oy, orad):
        for cx, cy in ((x, y), (1.0 - x, y), (x, 1.0 - y), (1.0 - x, 1.0 - y)):
            c = (round(cx % 1.0, 13) % 1.0, round(cy % 1.0, 13) % 1.0)
            if (c, R) not in copies:
                copies.append((c, R))
    try:
        torus = build_table(copies, n_rays=n_rays)
    except InfiniteHorizonError as exc:
        raise HorizonError(f"unfolded table has infinite horizon: {exc}") from exc
    ox, oy, orad = np.array(ox), np.array(oy), np.array(orad)
    bt = BoxedTable((x0, x1, y0, y1), obs, tuple(lines), torus, s, ox, oy, orad,
                    _open_gates(ox, oy, orad))
    if check_samples:
        bt.cover_error = bt.check_cover(np.random.default_rng(seed), check_samples)
        if not bt.cover_error < 1e-8:
            raise BilliardError(f"torus cover disagrees with the box map ({bt.cover_error:.3g})")
    return bt


# -- lazy gates -----------------------------------------------------------------------------


@dataclass
class LazyGateState:
    """Box phase point, collisions since the last transparency, and whether it is still inside."""

    j: np.ndarray
    r: np.ndarray
    phi: np.ndarray
    counter: int = 0
    in_box: np.ndarray = None


@dataclass
class LazyOrbits:
    """Exit records of a beam of lazy-gate orbits."""

    N: int
    n_macro: int
    exit_macro: np.ndarray  # transparency index of the exit, -1 if still inside
    exit_x: np.ndarray
    exit_y: np.ndarray
    exit_angle: np.ndarray
    reentries: np.ndarray
    lost: np.ndarray

    def alive(self) -> np.ndarray:
        """``alive[k]``: still in the box after ``k`` transparencies (lost orbits dropped)."""
        keep = ~self.lost
        e = self.exit_macro[keep]
        k = np.arange(self.n_macro + 1)[:, None]
        return (e[None, :] < 0) | (e[None, :] >= k)

    def survival(self) -> np.ndarray:
        return self.alive().mean(axis=1)

    def rate(self, lo: int, hi: int, batches: int = 20):
        """Per-step survival factor from a log-linear fit of ``S`` on ``[lo, hi]`` with a batch SE."""
        a = self.alive()
        ks = np.arange(lo, hi + 1)
        fit = loglinear_fit(ks, a[lo:hi + 1].mean(axis=1))
        per = [loglinear_fit(ks, b[lo:hi + 1].mean(axis=1)).rate for b in np.array_split(a, batches, axis=1)]
        return fit.rate, float(np.std(per, ddof=1) / math.sqrt(batches)), fit

    def exit_histogram(self, bins: int = 36):
        done = self.exit_macro >= 0
        counts, edges = np.histogram(self.exit_angle[done], bins=bins, range=(-math.pi, math.pi))
        return edges, counts

    def write_survival_csv(self, path, header: dict | None = None) -> None:
        s = self.survival()
        alive = self.alive().sum(axis=1)
        with open(path, "w", newline="") as fh:
            _header(fh, header)
            w = csv.writer(fh)
            w.writerow(["n", "inside", "survival"])
            for k in range(s.size):
                w.writerow([k, int(alive[k]), repr(float(s[k]))])

    def write_histogram_csv(self, path, bins: int = 36, header: dict | None = None) -> None:
        edges, counts = self.exit_histogram(bins)
        with open(path, "w", newline="") as fh:
            _header(fh, header)
            w = csv.writer(fh)
            w.writerow(["theta_lo", "theta_hi", "count"])
            for i in range(counts.size):
                w.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), int(counts[i])])


def _header(fh, header):
    for k, v in (header or {}).items():
        fh.write(f"# {k}: {v}\n")


def lazy_orbit(boxed: BoxedTable, x0, n_macro: int, N: int) -> LazyOrbits:
    """Run lazy-gate orbits from box phase points ``x0 = (j, r, phi)``.

    Walls reflect except on the flight that follows collisions ``0, N, 2N, ...``.
    Orbits hitting a tangency are dropped and flagged in ``lost``.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    j, r, phi = (np.ascontiguousarray(a) for a in x0)
    j = j.astype(np.int64)
    r = r.astype(float)
    phi = phi.astype(float)
    n = j.size
    exit_k = np.empty(n, np.int64)
    ex, ey, th = np.empty(n), np.empty(n), np.empty(n)
    re = np.empty(n, np.int64)
    st = np.empty(n, np.int64)
    _lazy(boxed.ox, boxed.oy, boxed.orad, boxed.lo, boxed.hi, j, r, phi, n_macro, N, exit_k, ex, ey, th, re, st)
    return LazyOrbits(N, n_macro, exit_k, ex, ey, th, re, st != 0)
