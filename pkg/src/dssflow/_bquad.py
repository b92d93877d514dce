"""Compiled quadrature for the bilinear Duhamel term.

    B(f, g)(x, t) = -1/2 int_0^t int dK(x - y, t - s) : (f g + g f)(y, s) dy ds

Time: ``s in [0, t/2]`` uses ``v = sqrt(s)`` and ``s in [t/2, t]`` uses
``tau = sqrt(t - s)``, both with panels graded toward the endpoint.  Space: a
smooth partition ``chi0(|y|) + (1 - chi0(|y|)) = 1`` with ``chi0 = 1`` near
the origin; the first piece is integrated in origin-centred log-radial shells,
the second in x-centred log-radial shells (Lebedev directions).  The x-centred
rule pairs antipodal directions, so the odd part of the kernel cancels
exactly near ``y = x``.
"""

import math

import numpy as np
from numba import njit

from ._interp import cell_point, make_work

FOUR_PI = 4.0 * math.pi
SQRT_PI = math.sqrt(math.pi)


def _series():
    n = np.arange(14)
    fact = np.array([math.factorial(k) for k in n], float)
    c = 2.0 * (-1.0) ** n / (SQRT_PI * fact * (2 * n + 1))
    return (8.0 * n * (n - 1) * (n - 2) * c), (4.0 * n * (n - 1) * c)


SER_A, SER_C = _series()


ETA_START = 0.25


@njit(cache=True)
def _eta(s):
    """C-infinity step: 1 on [0, ETA_START], 0 on [1, inf)."""
    if s <= ETA_START:
        return 1.0
    if s >= 1.0:
        return 0.0
    u = (1.0 - s) / (1.0 - ETA_START)
    a = math.exp(-1.0 / u)
    b = math.exp(-1.0 / (1.0 - u))
    return a / (a + b)


@njit(cache=True)
def oseen_AC(r, tau2):
    a = 0.5 / math.sqrt(tau2)
    ar = a * r
    if ar >= 1.0:
        E = math.erf(ar)
        G = (2.0 * a / SQRT_PI) * math.exp(-ar * ar)
        A = 4 * a ** 4 * r * G + 10 * a * a * G / r + 15 * G / r ** 3 - 15 * E / r ** 4
        C = -2 * a * a * G / r - 3 * G / r ** 3 + 3 * E / r ** 4
        return A, C
    A = 0.0
    C = 0.0
    a2 = a * a
    r2 = r * r
    # term n: coef_n a^(2n+1) r^(2n-3); start at n = 2 (C) and n = 3 (A)
    p = a ** 5 * r  # n = 2
    for n in range(2, SER_A.shape[0]):
        A += SER_A[n] * p
        C += SER_C[n] * p
        p *= a2 * r2
    return A, C


@njit(cache=True)
def contract(z0, z1, z2, tau2, F, out):
    """out_i = sum_jk d_k K_ij(z, tau2) F_jk for symmetric F (3x3)."""
    r2 = z0 * z0 + z1 * z1 + z2 * z2
    r = math.sqrt(r2)
    gam = (FOUR_PI * tau2) ** -1.5 * math.exp(-r2 / (4.0 * tau2))
    c0 = -gam / (2.0 * tau2)
    Fz0 = F[0, 0] * z0 + F[0, 1] * z1 + F[0, 2] * z2
    Fz1 = F[1, 0] * z0 + F[1, 1] * z1 + F[1, 2] * z2
    Fz2 = F[2, 0] * z0 + F[2, 1] * z1 + F[2, 2] * z2
    out[0] = c0 * Fz0
    out[1] = c0 * Fz1
    out[2] = c0 * Fz2
    if r == 0.0:
        return
    A, C = oseen_AC(r, tau2)
    ir = 1.0 / r
    q = (z0 * Fz0 + z1 * Fz1 + z2 * Fz2) * ir * ir
    tr = F[0, 0] + F[1, 1] + F[2, 2]
    k = 1.0 / FOUR_PI
    out[0] += k * (A * q * z0 * ir + C * (2.0 * Fz0 * ir + z0 * ir * tr))
    out[1] += k * (A * q * z1 * ir + C * (2.0 * Fz1 * ir + z1 * ir * tr))
    out[2] += k * (A * q * z2 * ir + C * (2.0 * Fz2 * ir + z2 * ir * tr))


@njit(cache=True)
def _sym_product(f, g, F):
    for i in range(3):
        for j in range(3):
            F[i, j] = f[i] * g[j] + g[i] * f[j]


@njit(cache=True)
def _spatial(cf, cg, same, lnlam, x0, x1, x2, R, s, tau2, rules, acc, work):
    (xg, wg, d_lo, w_lo, d_hi, w_hi, ratio, rho_lo_frac, rho_hi_mult,
     r_lo_frac, hi_band) = rules
    fb, gb, F, v, iw, fw = work
    acc[0] = 0.0
    acc[1] = 0.0
    acc[2] = 0.0
    tau = math.sqrt(tau2)
    h0 = 0.5 * R
    ng = xg.shape[0]
    # x-centred shells, weight 1 - eta(|y| / h0)
    rho_lo = rho_lo_frac * tau
    rho_hi = rho_hi_mult * max(R, math.sqrt(s + tau2))
    a = rho_lo
    while a < rho_hi:
        b = a * ratio
        hi_order = (b > R / hi_band) and (a < R * hi_band)
        if hi_order:
            dirs = d_hi
            dw = w_hi
        else:
            dirs = d_lo
            dw = w_lo
        for j in range(ng):
            rho = a + (b - a) * xg[j]
            wr = (b - a) * wg[j] * rho * rho
            for m in range(dirs.shape[0]):
                y0 = x0 + rho * dirs[m, 0]
                y1 = x1 + rho * dirs[m, 1]
                y2 = x2 + rho * dirs[m, 2]
                ry = math.sqrt(y0 * y0 + y1 * y1 + y2 * y2)
                wt = wr * dw[m] * (1.0 - _eta(ry / h0))
                if wt == 0.0:
                    continue
                cell_point(cf, lnlam, y0, y1, y2, s, fb, iw, fw)
                if same:
                    _sym_product(fb, fb, F)
                else:
                    cell_point(cg, lnlam, y0, y1, y2, s, gb, iw, fw)
                    _sym_product(fb, gb, F)
                contract(x0 - y0, x1 - y1, x2 - y2, tau2, F, v)
                acc[0] += wt * v[0]
                acc[1] += wt * v[1]
                acc[2] += wt * v[2]
        a = b
    # origin-centred shells, weight eta(|y| / h0)
    a = _origin_cut(h0, s, r_lo_frac)
    while a < h0:
        b = min(a * ratio, h0)
        for j in range(ng):
            r = a + (b - a) * xg[j]
            wr = (b - a) * wg[j] * r * r * _eta(r / h0)
            if wr == 0.0:
                continue
            for m in range(d_lo.shape[0]):
                y0 = r * d_lo[m, 0]
                y1 = r * d_lo[m, 1]
                y2 = r * d_lo[m, 2]
                wt = wr * w_lo[m]
                cell_point(cf, lnlam, y0, y1, y2, s, fb, iw, fw)
                if same:
                    _sym_product(fb, fb, F)
                else:
                    cell_point(cg, lnlam, y0, y1, y2, s, gb, iw, fw)
                    _sym_product(fb, gb, F)
                contract(x0 - y0, x1 - y1, x2 - y2, tau2, F, v)
                acc[0] += wt * v[0]
                acc[1] += wt * v[1]
                acc[2] += wt * v[2]
        a = b


@njit(cache=True)
def _origin_cut(h0, s, r_lo_frac):
    # below sqrt(s)/16 the fields are bounded by their value scale at sqrt(s),
    # so the ball is left to the envelope bound
    return max(r_lo_frac * h0, min(h0 / 32.0, math.sqrt(s) / 16.0))


@njit(cache=True)
def _tail_bound(R, s, tau2, rules, envs, CS):
    """Envelope bound of the pieces of space the shells leave out."""
    (xg, wg, d_lo, w_lo, d_hi, w_hi, ratio, rho_lo_frac, rho_hi_mult,
     r_lo_frac, hi_band) = rules
    Cf, af, bf, Cg, ag, bg = envs
    tau = math.sqrt(tau2)
    ss = math.sqrt(s)
    pre = 2.0 * Cf * Cg * CS * ss ** (af + ag)
    beta = bf + bg
    # far: rho > rho_hi, |y| >= rho / 2
    rho_hi = rho_hi_mult * max(R, math.sqrt(s + tau2))
    far = FOUR_PI * pre * 2.0 ** beta * rho_hi ** (-1.0 - beta) / (1.0 + beta)
    # origin ball |y| < r_lo, |x - y| >= R / 2
    r_lo = _origin_cut(0.5 * R, s, r_lo_frac)
    vol = FOUR_PI / 3.0 * r_lo ** 3 * ss ** -beta
    if beta < 3.0:
        vol = min(vol, FOUR_PI * r_lo ** (3.0 - beta) / (3.0 - beta))
    org = pre * (0.5 * R + tau) ** -4 * vol
    # ball |x - y| < rho_lo, no use of the cancellation
    rho_lo = rho_lo_frac * tau
    near = pre * tau ** -4 * (max(R - rho_lo, 0.0) + ss) ** -beta * FOUR_PI / 3.0 * rho_lo ** 3
    return far + org + near


@njit(cache=True)
def b_targets(cf, cg, same, lnlam, points, times, trule, rules, envs, CS):
    """B(f, g) at each (point, time); returns values and tail bounds."""
    tl_v, tl_w, tu_t, tu_w = trule
    N = points.shape[0]
    out = np.zeros((N, 3))
    tails = np.zeros(N)
    iw, fw = make_work()
    work = (np.empty(cf[0].shape[4]), np.empty(cg[0].shape[4]), np.empty((3, 3)),
            np.empty(3), iw, fw)
    acc = np.empty(3)
    for p in range(N):
        x0 = points[p, 0]
        x1 = points[p, 1]
        x2 = points[p, 2]
        t = times[p]
        R = math.sqrt(x0 * x0 + x1 * x1 + x2 * x2)
        h = math.sqrt(0.5 * t)
        r0 = 0.0
        r1 = 0.0
        r2 = 0.0
        tb = 0.0
        # lower part: s = v^2, ds = 2 v dv
        for k in range(tl_v.shape[0]):
            v = tl_v[k] * h
            s = v * v
            w = tl_w[k] * h * 2.0 * v
            _spatial(cf, cg, same, lnlam, x0, x1, x2, R, s, t - s, rules, acc, work)
            r0 += w * acc[0]
            r1 += w * acc[1]
            r2 += w * acc[2]
            tb += w * _tail_bound(R, s, t - s, rules, envs, CS)
        # upper part: s = t - tau^2, ds = 2 tau dtau
        for k in range(tu_t.shape[0]):
            tau = tu_t[k] * h
            s = t - tau * tau
            w = tu_w[k] * h * 2.0 * tau
            _spatial(cf, cg, same, lnlam, x0, x1, x2, R, s, tau * tau, rules, acc, work)
            r0 += w * acc[0]
            r1 += w * acc[1]
            r2 += w * acc[2]
            tb += w * _tail_bound(R, s, tau * tau, rules, envs, CS)
        out[p, 0] = -0.5 * r0
        out[p, 1] = -0.5 * r1
        out[p, 2] = -0.5 * r2
        tails[p] = 0.5 * tb
    return out, tails
