"""Random Lorentz gas on Z^2 with lazy gates.

Each unit cell has disks of radius ``r`` at its corners and a disk of radius
``rho`` whose centre ``omega(z)`` depends on the site.  A macro step is ``N``
collisions; only the flight leaving the first of them may pass through a gate
into a neighbouring cell.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numba import njit

from ..errors import ConfigError, GeometryError, Starvation
from ..stats import loglinear_fit
from .scattering import _flight

# gate symbols: 0 stay, 1 right, 2 up, 3 left, 4 down
SHIFTS = np.array([[0, 0], [1, 0], [0, 1], [-1, 0], [0, -1]], dtype=np.int64)
SYMBOLS = ("w0", "w1", "w2", "w3", "w4")
_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class LorentzConfig:
    r: float = 0.42
    rho: float = 0.25
    eps: float = 0.01
    N: int = 4
    seed: int = 0
    omega_table: tuple = ()  # ((zx, zy), (cx, cy)) overrides

    def __post_init__(self):
        r, rho, eps = self.r, self.rho, self.eps
        if not 1.0 / 3.0 <= r < 0.5:
            raise ConfigError(f"corner radius {r} outside [1/3, 1/2)")
        if not 1.0 - 2.0 * r < rho < math.sqrt(2.0) / 2.0 - r:
            raise ConfigError(f"central radius {rho} outside (1 - 2r, sqrt(2)/2 - r)")
        if eps <= 0:
            raise ConfigError("margin must be positive")
        if self.center_bounds[0] > self.center_bounds[1]:
            raise ConfigError("no admissible centre: the margin is too large")
        if self.N < 1:
            raise ConfigError("N must be at least 1")
        for _, c in self.omega_table:
            self.check_center(c)

    @property
    def tau_star(self) -> float:
        return min(self.eps, 1.0 - 2.0 * self.r)

    @property
    def corners_block_diagonals(self) -> bool:
        """Corner disks alone stop every flight between adjacent gates.

        The extreme chord between adjacent gates passes at distance
        ``(1 - r)/sqrt(2)`` from the shared corner.
        """
        return (1.0 - self.r) / math.sqrt(2.0) < self.r

    @property
    def center_bounds(self) -> tuple:
        hi = self.r + self.rho - self.eps
        return 1.0 - hi, hi

    def check_center(self, c) -> None:
        lo, hi = self.center_bounds
        if not (lo <= c[0] <= hi and lo <= c[1] <= hi):
            raise ConfigError(f"centre {tuple(c)} outside [{lo:.6g}, {hi:.6g}]^2")
        gap = _corner_gap(c[0], c[1], self.r, self.rho)
        if gap < self.tau_star:
            raise GeometryError(f"centre {tuple(c)} is {gap:.4g} from a corner disk (< {self.tau_star:.4g})")

    def omega(self, z) -> tuple:
        """Centre of the obstacle in cell ``z``: a pure function of the seed and the site."""
        for site, c in self.omega_table:
            if tuple(site) == tuple(z):
                return tuple(c)
        lo, hi = self.center_bounds
        cx, cy, ok = _omega(np.uint64(self.seed & _MASK), int(z[0]), int(z[1]), lo, hi,
                            self.r, self.rho, self.tau_star)
        if not ok:
            raise GeometryError("no admissible centre found; the admissible set is too small")
        return cx, cy

    def _overrides(self):
        n = len(self.omega_table)
        sites = np.array([s for s, _ in self.omega_table], dtype=np.int64).reshape(n, 2)
        cents = np.array([c for _, c in self.omega_table], dtype=float).reshape(n, 2)
        return sites, cents


@njit(cache=True)
def _corner_gap(cx, cy, r, rho):
    g = np.inf
    for qx in (0.0, 1.0):
        for qy in (0.0, 1.0):
            g = min(g, np.hypot(cx - qx, cy - qy) - r - rho)
    return g


@njit(cache=True)
def _mix(x):
    x = x + np.uint64(0x9E3779B97F4A7C15)
    z = x
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31)), x


@njit(cache=True)
def _omega(seed, zx, zy, lo, hi, r, rho, gap):
    state = seed ^ (np.uint64(zx + 2147483648) * np.uint64(0xD1B54A32D192ED03)) \
        ^ (np.uint64(zy + 2147483648) * np.uint64(0xABC98388FB8FAC03))
    scale = 1.0 / 9007199254740992.0
    for _ in range(100000):
        a, state = _mix(state)
        b, state = _mix(state)
        cx = lo + (hi - lo) * (a >> np.uint64(11)) * scale
        cy = lo + (hi - lo) * (b >> np.uint64(11)) * scale
        if _corner_gap(cx, cy, r, rho) >= gap:
            return cx, cy, True
    return 0.5, 0.5, False


@njit(cache=True)
def _center(seed, zx, zy, lo, hi, r, rho, gap, ov_sites, ov_cents):
    for i in range(ov_sites.shape[0]):
        if ov_sites[i, 0] == zx and ov_sites[i, 1] == zy:
            return ov_cents[i, 0], ov_cents[i, 1]
    cx, cy, _ = _omega(seed, zx, zy, lo, hi, r, rho, gap)
    return cx, cy


@njit
def _walk(r, rho, lo, hi, gap, seed, ov_sites, ov_cents, px0, py0, vx0, vy0, zx0, zy0,
          n_macro, N, out_z, out_sym, out_status, log):
    ox = np.array([0.0, 1.0, 0.0, 1.0, 0.5])
    oy = np.array([0.0, 0.0, 1.0, 1.0, 0.5])
    orad = np.array([r, r, r, r, rho])
    for w in range(px0.shape[0]):
        px, py, vx, vy = px0[w], py0[w], vx0[w], vy0[w]
        zx, zy = zx0[w], zy0[w]
        ox[4], oy[4] = _center(seed, zx, zy, lo, hi, r, rho, gap, ov_sites, ov_cents)
        out_status[w] = 0
        if out_z.shape[1] > 1:
            out_z[w, 0, 0] = zx
            out_z[w, 0, 1] = zy
        c = 0
        for m in range(n_macro):
            st, j, px, py, vx, vy = _flight(px, py, vx, vy, ox, oy, orad, 0.0, 1.0, True)
            sym = 0
            if st == 1:
                if px >= 1.0:
                    sym, px, zx = 1, 0.0, zx + 1
                elif py >= 1.0:
                    sym, py, zy = 2, 0.0, zy + 1
                elif px <= 0.0:
                    sym, px, zx = 3, 1.0, zx - 1
                else:
                    sym, py, zy = 4, 1.0, zy - 1
                ox[4], oy[4] = _center(seed, zx, zy, lo, hi, r, rho, gap, ov_sites, ov_cents)
                st, j, px, py, vx, vy = _flight(px, py, vx, vy, ox, oy, orad, 0.0, 1.0, True)
                if st == 1:
                    st = 3  # second gate before a collision
            out_sym[w, m] = sym
            for k in range(N):
                if k > 0 and st == 0:
                    st, j, px, py, vx, vy = _flight(px, py, vx, vy, ox, oy, orad, 0.0, 1.0, False)
                if st != 0:
                    break
                if log.shape[0] > w and c < log.shape[1]:
                    log[w, c, 0] = px
                    log[w, c, 1] = py
                    log[w, c, 2] = vx
                    log[w, c, 3] = vy
                c += 1
            if out_z.shape[1] > 1:
                out_z[w, m + 1, 0] = zx
                out_z[w, m + 1, 1] = zy
            if st != 0:
                out_status[w] = st
                for mm in range(m + 1, n_macro):
                    out_sym[w, mm] = -1
                break
        if out_z.shape[1] == 1:
            out_z[w, 0, 0] = zx
            out_z[w, 0, 1] = zy


@dataclass
class WalkRecord:
    """Walks of one or more walkers in a fixed environment."""

    config: LorentzConfig
    z: np.ndarray  # (walkers, n + 1, 2) lattice path, or (walkers, 1, 2) final sites only
    symbols: np.ndarray  # (walkers, n) gate symbols, -1 after a lost orbit
    status: np.ndarray  # 0 fine, 2 tangency, 3 crossed two gates
    collisions: Optional[np.ndarray] = None  # (walkers, n N, 4) positions and velocities

    @property
    def final(self) -> np.ndarray:
        return self.z[:, -1, :]

    @property
    def ok(self) -> np.ndarray:
        return self.status == 0

    def drift(self):
        """Mean displacement per macro step with its standard error, per coordinate."""
        n = self.symbols.shape[1]
        zf = self.final[self.ok].astype(float)
        mean = zf.mean(axis=0) / n
        se = zf.std(axis=0, ddof=1) / math.sqrt(zf.shape[0]) / n
        return mean, se

    def write_csv(self, path, walker: int = 0, header: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            for k, v in (header or {}).items():
                fh.write(f"# {k}: {v}\n")
            w = csv.writer(fh)
            w.writerow(["step", "z_x", "z_y", "gate"])
            for m in range(self.symbols.shape[1]):
                s = int(self.symbols[walker, m])
                w.writerow([m, int(self.z[walker, m, 0]), int(self.z[walker, m, 1]), SYMBOLS[s] if s >= 0 else "lost"])
            n = self.symbols.shape[1]
            w.writerow([n, int(self.z[walker, n, 0]), int(self.z[walker, n, 1]), ""])


Density = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def sample_cell(config: LorentzConfig, z, rng: np.random.Generator, n: int, f0: Optional[Density] = None):
    """Collision points of cell ``z`` drawn from ``f0 dmu`` (``mu`` the invariant measure).

    ``f0(j, s, phi)`` takes the obstacle index (0-3 corners, 4 centre), the
    angle ``s`` on that obstacle and the collision angle.  Returns positions and
    outgoing velocities.
    """
    r, rho = config.r, config.rho
    cx, cy = config.omega(z)
    lengths = np.array([0.5 * math.pi * r] * 4 + [2.0 * math.pi * rho])
    m = n if f0 is None else 4 * n
    j = rng.choice(5, size=m, p=lengths / lengths.sum())
    u = rng.random(m)
    # quarter arcs facing the cell interior: corner (0,0) spans angles [0, pi/2], etc.
    start = np.array([0.0, 0.5, 1.5, 1.0, 0.0]) * math.pi
    span = np.array([0.5, 0.5, 0.5, 0.5, 2.0]) * math.pi
    s = start[j] + span[j] * u
    phi = np.arcsin(2.0 * rng.random(m) - 1.0)
    if f0 is not None:
        w = np.asarray(f0(j, s, phi), dtype=float) * np.ones(m)
        pick = rng.choice(m, size=n, p=w / w.sum())
        j, s, phi = j[pick], s[pick], phi[pick]
    ox = np.array([0.0, 1.0, 0.0, 1.0, cx])[j]
    oy = np.array([0.0, 0.0, 1.0, 1.0, cy])[j]
    R = np.where(j == 4, rho, r)
    nx, ny = np.cos(s), np.sin(s)
    tx, ty = ny, -nx  # clockwise tangent
    c, sn = np.cos(phi), np.sin(phi)
    return ox + R * nx, oy + R * ny, c * nx + sn * tx, c * ny + sn * ty


def lorentz_walk(config: LorentzConfig, n_macro: int, walkers: int = 1, rng: Optional[np.random.Generator] = None,
                 f0: Optional[Density] = None, start=(0, 0), keep_paths: bool = True,
                 log_collisions: bool = False) -> WalkRecord:
    """Simulate ``walkers`` independent particles in the environment fixed by ``config.seed``."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    px, py, vx, vy = sample_cell(config, start, rng, walkers, f0)
    lo, hi = config.center_bounds
    sites, cents = config._overrides()
    z = np.zeros((walkers, n_macro + 1 if keep_paths else 1, 2), dtype=np.int64)
    sym = np.zeros((walkers, n_macro), dtype=np.int8)
    status = np.zeros(walkers, dtype=np.int64)
    log = np.zeros((walkers if log_collisions else 0, n_macro * config.N if log_collisions else 0, 4))
    zx0 = np.full(walkers, int(start[0]), dtype=np.int64)
    zy0 = np.full(walkers, int(start[1]), dtype=np.int64)
    _walk(config.r, config.rho, lo, hi, config.tau_star, np.uint64(config.seed & _MASK), sites, cents,
          px, py, vx, vy, zx0, zy0, n_macro, config.N, z, sym, status, log)
    return WalkRecord(config, z, sym, status, log if log_collisions else None)


# -- memory loss --------------------------------------------------------------------------------


@dataclass
class MemoryLossTable:
    lag: np.ndarray  # n - m
    difference: np.ndarray  # total variation between the two next-gate laws
    se: np.ndarray
    full: np.ndarray  # conditional probability given the whole history
    recent: np.ndarray  # conditional probability given the history since time m
    counts: np.ndarray  # walkers matching the shorter conditioning history
    path: tuple
    m: int
    N: int
    resolved: int = 0  # leading lags whose difference exceeds twice its standard error
    fit: object = None

    def rows(self):
        for i in range(self.lag.size):
            yield (int(self.lag[i]), float(self.full[i]), float(self.recent[i]),
                   float(self.difference[i]), float(self.se[i]), int(self.counts[i]))

    def decays(self, level: float = 0.95) -> bool:
        return self.fit is not None and self.fit.slope_negative(level)


def _path_counts(sym: np.ndarray, path: Sequence[int], offset: int, n_max: int):
    """Next-symbol counts among walkers following ``path[offset:n]``, for ``n = offset..n_max``."""
    match = np.ones(sym.shape[0], dtype=bool)
    out = np.zeros((n_max + 1 - offset, 5), dtype=np.int64)
    for n in range(offset, n_max + 1):
        out[n - offset] = np.bincount(sym[match, n - offset].clip(0), minlength=5)[:5]
        match = match & (sym[:, n - offset] == path[n])
    return out


def _laws(counts, min_count, offset):
    den = counts.sum(axis=1)
    if den.min() < min_count:
        k = int(np.argmin(den >= min_count))
        raise Starvation(f"only {int(den[k])} walkers follow the path up to step {k + offset}")
    return counts / den[:, None], den


def typical_path(sym: np.ndarray, length: int, move_at: Optional[int] = None) -> tuple:
    """Greedy most frequent continuation, step by step.

    With ``move_at`` the symbol at that step is the most frequent gate
    crossing instead, so the history carries information about the position.
    """
    match = np.ones(sym.shape[0], dtype=bool)
    path = []
    for n in range(length):
        counts = np.bincount(sym[match, n].clip(0), minlength=5)
        if n == move_at:
            counts[0] = -1
        s = int(np.argmax(counts))
        path.append(s)
        match &= sym[:, n] == s
    return tuple(path)


def _counted_walks(config, steps, walkers, chunk, rng, f0, start, path, offset, n_max):
    counts = np.zeros((n_max + 1 - offset, 5), dtype=np.int64)
    done = 0
    while done < walkers:
        k = min(chunk, walkers - done)
        rec = lorentz_walk(config, steps, k, rng, f0, start=start, keep_paths=False)
        counts += _path_counts(rec.symbols[rec.ok], path, offset, n_max)
        done += k
    return counts


def _tv_se(p, q, n1, n2):
    """Delta-method standard error of the total variation distance of two multinomial estimates."""
    sgn = np.sign(p - q)
    v1 = (np.einsum("ij,ij->i", sgn * sgn, p) - np.einsum("ij,ij->i", sgn, p) ** 2) / n1
    v2 = (np.einsum("ij,ij->i", sgn * sgn, q) - np.einsum("ij,ij->i", sgn, q) ** 2) / n2
    return 0.5 * np.sqrt(np.maximum(v1 + v2, 1.0 / np.minimum(n1, n2)))


def memory_loss_lorentz(config: LorentzConfig, m: int, n_max: int, walkers: int = 1_000_000,
                        rng: Optional[np.random.Generator] = None, path: Optional[Sequence[int]] = None,
                        f0: Optional[Density] = None, min_count: int = 200,
                        chunk: int = 1_000_000) -> MemoryLossTable:
    """Compare the next-gate law given the full history and given the history since time ``m``.

    Both laws are estimated by counting walkers that follow the path.  The
    second walk starts fresh from ``f0`` at the site ``z_m`` reached by the
    path, i.e. in the shifted environment.  Without ``path`` a pilot run picks
    the greedy most likely path, with a gate crossing forced at step ``m - 1``.

    ``difference`` is the total variation distance between the two next-gate
    laws, which bounds the gap for every symbol; ``full`` and ``recent`` hold
    the probabilities of the path's own next symbol.  The log-linear fit uses
    the leading lags resolved above twice their standard error.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    if path is None:
        pilot = lorentz_walk(config, n_max + 1, min(walkers, 100_000), rng, f0, keep_paths=False)
        path = typical_path(pilot.symbols[pilot.ok], n_max + 1, m - 1 if m else None)
    path = tuple(int(v) for v in path)
    if len(path) < n_max + 1:
        raise ValueError("path shorter than n_max + 1")
    pa, den_a = _laws(_counted_walks(config, n_max + 1, walkers, chunk, rng, f0, (0, 0), path, 0, n_max),
                      min_count, 0)
    own = np.array(path[: n_max + 1])
    if m == 0:
        # no history is dropped: both laws are the same estimate
        z = np.zeros(den_a.size)
        p = pa[np.arange(own.size), own]
        return MemoryLossTable(np.arange(z.size), z, z, p, p, den_a, path, 0, config.N)
    zm = SHIFTS[list(path[:m])].sum(axis=0)
    pb, den_b = _laws(_counted_walks(config, n_max + 1 - m, walkers, chunk, rng, f0,
                                     (int(zm[0]), int(zm[1])), path, m, n_max), min_count, m)
    pa, den_a, own = pa[m:], den_a[m:], own[m:]
    lag = np.arange(den_b.size)
    diff = 0.5 * np.abs(pa - pb).sum(axis=1)
    se = _tv_se(pa, pb, den_a, den_b)
    above = diff > 2.0 * se
    resolved = int(np.argmin(above)) if not above.all() else above.size
    tab = MemoryLossTable(lag, diff, se, pa[lag, own], pb[lag, own], den_b, path, m, config.N, resolved)
    if resolved >= 3:
        tab.fit = loglinear_fit(lag[:resolved], diff[:resolved])
    return tab


@dataclass
class SweepResult:
    N_values: list
    tables: dict = field(default_factory=dict)
    smallest: Optional[int] = None


def memory_loss_sweep(config: LorentzConfig, N_values: Sequence[int], m: int, n_max: int,
                      walkers: int = 1_000_000, rng: Optional[np.random.Generator] = None,
                      level: float = 0.95) -> SweepResult:
    """Smallest ``N`` whose difference table decays with a negative slope at ``level``."""
    from dataclasses import replace

    rng = rng if rng is not None else np.random.default_rng(config.seed)
    out = SweepResult(list(N_values))
    for N in N_values:
        tab = memory_loss_lorentz(replace(config, N=int(N)), m, n_max, walkers, rng)
        out.tables[int(N)] = tab
        if tab.decays(level):
            out.smallest = int(N)
            break
    return out
