"""Compiled interpolation kernels for DSS grids and space-time cells.

Fields are stored as ``g = |x| u`` so that a lambda-DSS field is periodic in
``log|x|`` with period ``log(lambda)``; evaluation returns ``g / |x|``.  The
angular direction uses a product grid (Gauss-Legendre in cos(theta), uniform in
phi); stencils crossing a pole are continued through the reflected node
``(theta, phi) -> (-theta, phi + pi)``, which is the same physical direction.
"""

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi


@njit(cache=True)
def _lagrange(x, nodes, start, m, w):
    for j in range(m):
        p = 1.0
        xj = nodes[start + j]
        for k in range(m):
            if k != j:
                p *= (x - nodes[start + k]) / (xj - nodes[start + k])
        w[j] = p


@njit(cache=True)
def _uniform_lagrange(u, start, m, w):
    # nodes at integers start..start+m-1
    for j in range(m):
        p = 1.0
        xj = start + j
        for k in range(m):
            if k != j:
                p *= (u - (start + k)) / (xj - (start + k))
        w[j] = p


@njit(cache=True)
def _theta_stencil(theta, th_ext, ext_idx, ext_flip, m, idx, flip, w):
    n = th_ext.shape[0]
    pos = np.searchsorted(th_ext, theta, side="right")
    start = pos - m // 2
    if start < 0:
        start = 0
    if start > n - m:
        start = n - m
    _lagrange(theta, th_ext, start, m, w)
    for j in range(m):
        idx[j] = ext_idx[start + j]
        flip[j] = ext_flip[start + j]


@njit(cache=True)
def _periodic_stencil(u, period, m, idx, w):
    i0 = math.floor(u)
    start = i0 - (m // 2 - 1)
    _uniform_lagrange(u, start, m, w)
    for j in range(m):
        idx[j] = (start + j) % period


@njit(cache=True)
def _clamped_stencil(u, n, m, idx, w):
    i0 = math.floor(u)
    start = i0 - (m // 2 - 1)
    if start < 0:
        start = 0
    if start > n - m:
        start = n - m
    _uniform_lagrange(u, start, m, w)
    for j in range(m):
        idx[j] = start + j


@njit(cache=True)
def _direction(x, y, z, r):
    c = z / r
    if c > 1.0:
        c = 1.0
    elif c < -1.0:
        c = -1.0
    theta = math.acos(c)
    phi = math.atan2(y, x)
    if phi < 0.0:
        phi += TWO_PI
    return theta, phi


MAXW = 8


@njit(cache=True)
def make_work():
    """Scratch buffers for stencils (index and weight arrays)."""
    return np.empty((4, MAXW), np.int64), np.empty((4, MAXW))


@njit(cache=True)
def _grid_value(G, dr, nr, th_ext, ext_idx, ext_flip, nphi, deg, x, y, z, out,
                iw, fw):
    """Evaluate the DSS grid at one point; returns False at the origin."""
    r = math.sqrt(x * x + y * y + z * z)
    C = G.shape[3]
    if r == 0.0:
        for c in range(C):
            out[c] = np.nan
        return False
    m = deg + 1
    mr = min(m, nr)
    theta, phi = _direction(x, y, z, r)
    s = math.log(r) / dr
    s = s - nr * math.floor(s / nr)
    ridx, rw = iw[0], fw[0]
    _periodic_stencil(s, nr, mr, ridx, rw)
    tidx, tfl, tw = iw[1], iw[2], fw[1]
    _theta_stencil(theta, th_ext, ext_idx, ext_flip, m, tidx, tfl, tw)
    pidx, pw = iw[3], fw[2]
    _periodic_stencil(phi / (TWO_PI / nphi), nphi, m, pidx, pw)
    half = nphi // 2
    for c in range(C):
        out[c] = 0.0
    for a in range(mr):
        for b in range(m):
            wab = rw[a] * tw[b]
            for d in range(m):
                w = wab * pw[d]
                k = (pidx[d] + tfl[b] * half) % nphi
                for c in range(C):
                    out[c] += w * G[ridx[a], tidx[b], k, c]
    for c in range(C):
        out[c] /= r
    return True


@njit(cache=True)
def eval_grid(points, G, dr, nr, th_ext, ext_idx, ext_flip, nphi, deg):
    N = points.shape[0]
    out = np.empty((N, G.shape[3]))
    buf = np.empty(G.shape[3])
    iw, fw = make_work()
    for p in range(N):
        _grid_value(G, dr, nr, th_ext, ext_idx, ext_flip, nphi, deg,
                    points[p, 0], points[p, 1], points[p, 2], buf, iw, fw)
        for c in range(G.shape[3]):
            out[p, c] = buf[c]
    return out


# ---------------------------------------------------------------------------
# space-time cells
#
# A cell is passed to compiled code as a tuple
#   (G, ell, ln_rmin, dr, nrc, th_ext, ext_idx, ext_flip, nphi, deg,
#    fG, fdr, fnr, fth_ext, fext_idx, fext_flip, fnphi, fdeg, far_scale,
#    env_C, env_a, env_b)
# with G[it, ir, ith, iph, c] = |x| u at the nodes and ell = log_lambda(t).
# ---------------------------------------------------------------------------

STATUS_INSIDE = 0
STATUS_INNER = 1
STATUS_FAR = 2


@njit(cache=True)
def _cell_core(G, ell, ln_rmin, dr, nrc, th_ext, ext_idx, ext_flip, nphi, deg,
               ellq, sq, theta, phi, out, iw, fw):
    nt = ell.shape[0]
    mt = min(nt, 4)
    tpos = np.searchsorted(ell, ellq, side="right")
    tstart = tpos - mt // 2
    if tstart < 0:
        tstart = 0
    if tstart > nt - mt:
        tstart = nt - mt
    tw = fw[3]
    _lagrange(ellq, ell, tstart, mt, tw)
    m = deg + 1
    mr = min(m, nrc)
    ridx, rw = iw[0], fw[0]
    _clamped_stencil(sq, nrc, mr, ridx, rw)
    tidx, tfl, thw = iw[1], iw[2], fw[1]
    _theta_stencil(theta, th_ext, ext_idx, ext_flip, m, tidx, tfl, thw)
    pidx, pw = iw[3], fw[2]
    _periodic_stencil(phi / (TWO_PI / nphi), nphi, m, pidx, pw)
    half = nphi // 2
    C = G.shape[4]
    for c in range(C):
        out[c] = 0.0
    for it in range(mt):
        wt = tw[it]
        ti = tstart + it
        for a in range(mr):
            wa = wt * rw[a]
            for b in range(m):
                wab = wa * thw[b]
                for d in range(m):
                    w = wab * pw[d]
                    k = (pidx[d] + tfl[b] * half) % nphi
                    for c in range(C):
                        out[c] += w * G[ti, ridx[a], tidx[b], k, c]


@njit(cache=True)
def cell_point(cell, lnlam, x, y, z, t, out, iw, fw):
    """Value of a DSS cell at (x, t) with inner clamp and far model.

    Returns the status code (inside / inner clamp / far model).
    """
    (G, ell, ln_rmin, dr, nrc, th_ext, ext_idx, ext_flip, nphi, deg,
     fG, fdr, fnr, fth_ext, fext_idx, fext_flip, fnphi, fdeg, far_scale,
     env_C, env_a, env_b) = cell
    r = math.sqrt(x * x + y * y + z * z)
    C = G.shape[4]
    if r == 0.0:
        for c in range(C):
            out[c] = 0.0
        return STATUS_INNER
    lraw = math.log(t) / lnlam
    mm = -math.floor(0.5 * lraw)
    ellq = lraw + 2.0 * mm
    lnr = math.log(r) + mm * lnlam
    sq = (lnr - ln_rmin) / dr
    theta, phi = _direction(x, y, z, r)
    if sq > nrc - 1 + 1e-9:
        if far_scale == 0.0:
            for c in range(C):
                out[c] = 0.0
        else:
            _grid_value(fG, fdr, fnr, fth_ext, fext_idx, fext_flip, fnphi, fdeg,
                        x, y, z, out, iw, fw)
            for c in range(C):
                out[c] *= far_scale
        return STATUS_FAR
    if sq < -1e-9:
        _cell_core(G, ell, ln_rmin, dr, nrc, th_ext, ext_idx, ext_flip, nphi,
                   deg, ellq, 0.0, theta, phi, out, iw, fw)
        # value at the inner radius, rescaled back to the physical point
        scale = math.exp(mm * lnlam - ln_rmin)
        for c in range(C):
            out[c] *= scale
        return STATUS_INNER
    _cell_core(G, ell, ln_rmin, dr, nrc, th_ext, ext_idx, ext_flip, nphi, deg,
               ellq, sq, theta, phi, out, iw, fw)
    for c in range(C):
        out[c] /= r
    return STATUS_INSIDE


@njit(cache=True)
def eval_cell(cell, lnlam, points, times):
    N = points.shape[0]
    C = cell[0].shape[4]
    out = np.empty((N, C))
    status = np.empty(N, np.int64)
    buf = np.empty(C)
    iw, fw = make_work()
    for p in range(N):
        status[p] = cell_point(cell, lnlam, points[p, 0], points[p, 1],
                               points[p, 2], times[p], buf, iw, fw)
        for c in range(C):
            out[p, c] = buf[c]
    return out, status
