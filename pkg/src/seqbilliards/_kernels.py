"""Compiled inner loops for the collision map on the unit torus.

Positions on scatterer ``i`` use clockwise arclength ``r`` measured from the
east pole, so the boundary point is ``c + R (cos(r/R), -sin(r/R))``.  The
outgoing velocity is ``cos(phi) n + sin(phi) t`` where ``n`` is the outward
normal and ``t`` the unit tangent in the direction of increasing ``r``.
"""

import numpy as np
from numba import njit

# status codes returned by the kernels
OK = 0
TANGENT = 1
MISSED = 2

COS_TOL = 1e-10
DISC_TOL = 1e-14
SHIFTS = 2  # translates -2..2 in each direction


@njit(cache=True)
def boundary_frame(cx, cy, R, r):
    a = r / R
    ca = np.cos(a)
    sa = np.sin(a)
    return cx + R * ca, cy - R * sa, ca, -sa, -sa, -ca


@njit(cache=True)
def ray_hit(px, py, vx, vy, cx, cy, rad):
    """First entry of the ray into any translate of any scatterer.

    Returns (j, kx, ky, s, disc); j = -1 when nothing is hit.
    """
    best_s = np.inf
    best_j = -1
    best_kx = 0
    best_ky = 0
    best_disc = 0.0
    for j in range(cx.shape[0]):
        R = rad[j]
        for kx in range(-SHIFTS, SHIFTS + 1):
            dx = px - (cx[j] + kx)
            for ky in range(-SHIFTS, SHIFTS + 1):
                dy = py - (cy[j] + ky)
                b = dx * vx + dy * vy
                if b >= 0.0:
                    continue
                disc = b * b - (dx * dx + dy * dy - R * R)
                if disc < 0.0:
                    continue
                s = -b - np.sqrt(disc)
                if s <= 1e-12 or s >= best_s:
                    continue
                best_s = s
                best_j = j
                best_kx = kx
                best_ky = ky
                best_disc = disc
    return best_j, best_kx, best_ky, best_s, best_disc


@njit(cache=True)
def collide(cx, cy, rad, j, kx, ky, hx, hy, vx, vy):
    """Reflect at the hit point and express the result in (r, phi)."""
    R = rad[j]
    nx = (hx - (cx[j] + kx)) / R
    ny = (hy - (cy[j] + ky)) / R
    a = np.arctan2(-ny, nx)
    if a < 0.0:
        a += 2.0 * np.pi
    r1 = a * R
    vn = vx * nx + vy * ny
    wx = vx - 2.0 * vn * nx
    wy = vy - 2.0 * vn * ny
    tx = ny
    ty = -nx
    phi1 = np.arctan2(wx * tx + wy * ty, wx * nx + wy * ny)
    return r1, phi1


@njit(cache=True)
def forward_step(cx, cy, rad, idx, r, phi, out_idx, out_r, out_phi, out_tau,
                 out_kx, out_ky, out_status):
    """Apply the collision map to every point of the batch."""
    for k in range(idx.shape[0]):
        i = idx[k]
        p = phi[k]
        out_idx[k] = -1
        out_r[k] = np.nan
        out_phi[k] = np.nan
        out_tau[k] = np.nan
        out_kx[k] = 0
        out_ky[k] = 0
        c = np.cos(p)
        if c < COS_TOL:
            out_status[k] = TANGENT
            continue
        px, py, nx, ny, tx, ty = boundary_frame(cx[i], cy[i], rad[i], r[k])
        sn = np.sin(p)
        vx = c * nx + sn * tx
        vy = c * ny + sn * ty
        j, kx, ky, s, disc = ray_hit(px, py, vx, vy, cx, cy, rad)
        if j < 0:
            out_status[k] = MISSED
            continue
        if disc < DISC_TOL:
            out_status[k] = TANGENT
            continue
        hx = px + s * vx
        hy = py + s * vy
        r1, phi1 = collide(cx, cy, rad, j, kx, ky, hx, hy, vx, vy)
        if np.cos(phi1) < COS_TOL:
            out_status[k] = TANGENT
            continue
        out_idx[k] = j
        out_r[k] = r1
        out_phi[k] = phi1
        out_tau[k] = s
        out_kx[k] = kx
        out_ky[k] = ky
        out_status[k] = OK


@njit(cache=True)
def segment_hits_disk(ax, ay, bx, by, gx, gy, gr):
    """True when the segment [a, b] meets any translate of the closed disk."""
    dx = bx - ax
    dy = by - ay
    L2 = dx * dx + dy * dy
    for kx in range(-SHIFTS, SHIFTS + 1):
        for ky in range(-SHIFTS, SHIFTS + 1):
            qx = gx + kx - ax
            qy = gy + ky - ay
            t = 0.0
            if L2 > 0.0:
                t = (qx * dx + qy * dy) / L2
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
            ex = qx - t * dx
            ey = qy - t * dy
            if ex * ex + ey * ey <= gr * gr:
                return True
    return False
