"""Heat and Oseen kernels, the heat semigroup on DSS data, and integral oracles.

Notation: ``Gamma(z, t) = (4 pi t)^{-3/2} exp(-|z|^2 / 4t)`` is the heat kernel
and ``K(z, t)`` the Oseen kernel of ``e^{t Lap} P``.  The gradient

    d_k K_ij = delta_ij d_k Gamma
               + (1/4pi) [A zh_i zh_j zh_k + C (delta_ij zh_k + delta_ik zh_j + delta_jk zh_i)]

has closed-form radial coefficients ``A(r, t)``, ``C(r, t)`` built from
``erf(r / 2 sqrt t)`` and the Gaussian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import erf

from .errors import CannotCertifyError, ConvergenceError, InvalidExponentError, RegionError
from .sphere import frame, lebedev


@dataclass(frozen=True)
class QuadratureConfig:
    """Tunable quadrature parameters (all tolerances relative).

    ``level`` scales node counts: 0 is the default, each increment refines
    every panel rule.
    """

    rel_tol: float = 1e-3
    abs_tol: float = 1e-12
    tail_fraction: float = 0.1
    level: int = 0
    heat_window: float = 10.0
    heat_phi: int = 12
    time_substitution: str = "sqrt"
    depth: int = 12

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise RegionError("tolerances must be positive")


SQRT_PI = math.sqrt(math.pi)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def heat_kernel(z, t):
    z = np.asarray(z, float)
    r2 = np.sum(z * z, axis=-1)
    return (4 * np.pi * t) ** -1.5 * np.exp(-r2 / (4 * t))


def _series_coeffs(n_terms=12):
    # erf(a r)/r = sum_n c_n (a r)^(2n) * a, c_n = 2 (-1)^n / (sqrt(pi) n! (2n+1))
    n = np.arange(n_terms)
    fact = np.array([math.factorial(k) for k in n], float)
    return n, 2.0 * (-1.0) ** n / (SQRT_PI * fact * (2 * n + 1))


_SER_N, _SER_C = _series_coeffs()


def oseen_coefficients(r, t):
    """Radial coefficients ``A, C`` of the Oseen gradient (without 1/4pi)."""
    r = np.asarray(r, float)
    t = np.broadcast_to(np.asarray(t, float), r.shape)
    a = 0.5 / np.sqrt(t)
    ar = a * r
    A = np.empty(r.shape)
    C = np.empty(r.shape)
    big = ar >= 1.0
    if np.any(big):
        rb, ab = r[big], a[big]
        E = erf(ab * rb)
        G = (2 * ab / SQRT_PI) * np.exp(-(ab * rb) ** 2)
        A[big] = 4 * ab ** 4 * rb * G + 10 * ab ** 2 * G / rb + 15 * G / rb ** 3 - 15 * E / rb ** 4
        C[big] = -2 * ab ** 2 * G / rb - 3 * G / rb ** 3 + 3 * E / rb ** 4
    sm = ~big
    if np.any(sm):
        rs, as_ = r[sm], a[sm]
        n, c = _SER_N, _SER_C
        # erf(a r)/r = sum c_n a^(2n+1) r^(2n); derivatives give
        # A = sum 8 n (n-1)(n-2) c_n a^(2n+1) r^(2n-3), C = sum 4 n (n-1) c_n a^(2n+1) r^(2n-3)
        pw = as_[:, None] ** (2 * n + 1) * rs[:, None] ** np.maximum(2 * n - 3, 0)
        A[sm] = pw @ (8 * n * (n - 1) * (n - 2) * c)
        C[sm] = pw @ (4 * n * (n - 1) * c)
    return A, C


def oseen_grad_kernel(x, t):
    """Tensor ``T[..., i, j, k] = d_k K_ij(x, t)`` (units length^-4).

    >>> T1 = oseen_grad_kernel([0.3, -0.2, 0.5], 0.7)
    >>> T2 = oseen_grad_kernel([0.6, -0.4, 1.0], 2.8)
    >>> bool(np.allclose(T2, T1 / 16, rtol=1e-12))
    True
    """
    x = np.asarray(x, float)
    t = float(t) if np.ndim(t) == 0 else np.asarray(t, float)
    if np.any(np.asarray(t) <= 0):
        raise RegionError("the kernel needs t > 0")
    r = np.linalg.norm(x, axis=-1)
    tt = np.broadcast_to(t, r.shape)
    A, C = oseen_coefficients(r, tt)
    with np.errstate(invalid="ignore", divide="ignore"):
        zh = np.where(r[..., None] > 0, x / r[..., None], 0.0)
    gam = heat_kernel(x, tt)
    dgam = -x * (gam / (2 * tt))[..., None]
    eye = np.eye(3)
    T = (eye[..., :, :, None] * dgam[..., None, None, :]
         + (1 / (4 * np.pi)) * (A[..., None, None, None] * zh[..., :, None, None]
                                * zh[..., None, :, None] * zh[..., None, None, :]
                                + C[..., None, None, None] * (
                                    eye[:, :, None] * zh[..., None, None, :]
                                    + eye[:, None, :] * zh[..., None, :, None]
                                    + eye[None, :, :] * zh[..., :, None, None])))
    return T


def oseen_grad_fourier(x, t, n_radial=160, order=131):
    """Independent evaluation of d_k K_ij from the Fourier multiplier.

    ``(2pi)^-3 int (delta_ij - xi_i xi_j/|xi|^2) i xi_k exp(-t|xi|^2 + i xi.x) dxi``
    with Gauss-Legendre in |xi| and a Lebedev rule in the direction.
    """
    x = np.asarray(x, float)
    w_dirs, w_w = lebedev(order)
    rho_max = 9.0 / math.sqrt(t)
    xg, wg = np.polynomial.legendre.leggauss(n_radial)
    rho = 0.5 * rho_max * (xg + 1)
    wr = 0.5 * rho_max * wg
    proj = np.eye(3)[None] - w_dirs[:, :, None] * w_dirs[:, None, :]  # (M,3,3)
    phase = np.outer(rho, w_dirs @ x)  # (Nr, M)
    s = np.sin(phase)
    radial = wr * rho ** 3 * np.exp(-t * rho ** 2)
    # real part of i * exp(i phase) = -sin(phase)
    S = -(radial[:, None] * s).sum(axis=0) * w_w  # (M,)
    T = np.einsum("m,mij,mk->ijk", S, proj, w_dirs)
    return T / (2 * np.pi) ** 3


def solonnikov_constant(points, times):
    """sup of |grad K| (|x| + sqrt t)^4 over a sample cloud."""
    T = oseen_grad_kernel(points, times)
    r = np.linalg.norm(points, axis=-1)
    mag = np.sqrt(np.sum(T ** 2, axis=(-1, -2, -3)))
    return float(np.max(mag * (r + np.sqrt(times)) ** 4))


# ---------------------------------------------------------------------------
# heat semigroup on DSS data
# ---------------------------------------------------------------------------

def _gl(n):
    return np.polynomial.legendre.leggauss(n)


def _panel_rule(edges, n):
    x, w = _gl(n)
    edges = np.asarray(edges, float)
    a, b = edges[:-1, None], edges[1:, None]
    return (0.5 * (b - a) * x + 0.5 * (a + b)).ravel(), (0.5 * (b - a) * w).ravel()


def _heat_radial_edges(R, t, lam, L, width=1.5):
    st = math.sqrt(t)
    lo, hi = max(0.0, R - L * st), R + L * st
    cuts = {lo, hi}
    if lo < R < hi:
        cuts.add(R)
    # annulus boundaries lam^k inside the window
    if lo > 0:
        k0 = math.floor(math.log(lo) / math.log(lam))
    else:
        k0 = math.floor(math.log(1e-4 * st) / math.log(lam))
    k1 = math.ceil(math.log(hi) / math.log(lam))
    for k in range(k0, k1 + 1):
        b = lam ** k
        if lo < b < hi:
            cuts.add(b)
    inner = []
    if lo == 0.0:
        # log-graded panels toward the origin
        r = min(st, hi)
        r_stop = 1e-4 * st
        while r > r_stop:
            inner.append(r)
            r *= 0.25
        cuts.update(inner)
        cuts.discard(0.0)
        cuts.add(r_stop)
    cuts = np.array(sorted(cuts))
    out = [cuts[0]]
    for a, b in zip(cuts[:-1], cuts[1:]):
        m = max(1, int(math.ceil((b - a) / (width * st))))
        out.extend(list(np.linspace(a, b, m + 1)[1:]))
    return np.array(out), (1e-4 * st if lo == 0.0 else 0.0)


def _heat_rule(R, t, lam, cfg):
    """Nodes (r, u, phi) and weights for int Gamma(x - y, t) f(y) dy, |x| = R."""
    L = cfg.heat_window
    n_r = 4 + cfg.level
    n_u = 4 + cfg.level
    n_phi = cfg.heat_phi + 4 * cfg.level
    edges, r_inner = _heat_radial_edges(R, t, lam, L)
    r, wr = _panel_rule(edges, n_r)
    st2 = L * L * t
    rows_r, rows_u, rows_w = [], [], []
    for ri, wri in zip(r, wr):
        kappa = R * ri / (2 * t)
        umax = min(2.0, (st2 - (R - ri) ** 2) / (2 * R * ri)) if R * ri > 0 else 2.0
        if umax <= 0:
            continue
        if kappa * umax <= 2.0:
            ue = np.linspace(0.0, umax, 3)
        else:
            ue = [0.0]
            v = 0.25 / kappa
            while v < umax:
                ue.append(v)
                v *= 2.0
            ue.append(umax)
        u, wu = _panel_rule(ue, n_u)
        base = (4 * np.pi * t) ** -1.5 * math.exp(-(R - ri) ** 2 / (4 * t))
        rows_r.append(np.full(len(u), ri))
        rows_u.append(u)
        rows_w.append(wri * ri * ri * base * np.exp(-kappa * u) * wu)
    r_all = np.concatenate(rows_r)
    u_all = np.concatenate(rows_u)
    w_all = np.concatenate(rows_w)
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    return r_all, u_all, w_all * (2 * np.pi / n_phi), phi, r_inner


def heat_quadrature_points(x, t, lam, cfg):
    """Quadrature points and weights for one target, plus the inner radius."""
    x = np.asarray(x, float)
    R = float(np.linalg.norm(x))
    e1, e2, e3 = frame(x)
    r, u, w, phi, r_inner = _heat_rule(R, t, lam, cfg)
    ct = 1.0 - u
    st = np.sqrt(np.clip(u * (2.0 - u), 0.0, None))
    cp, sp = np.cos(phi), np.sin(phi)
    P = (r[:, None, None] * (st[:, None, None] * (cp[None, :, None] * e1 + sp[None, :, None] * e2)
                             + ct[:, None, None] * e3))
    W = np.repeat(w, len(phi))
    return P.reshape(-1, 3), W, r_inner


def heat_evolve(field, points, times, cfg=None, batch=32):
    """``e^{t Lap} u0`` at the given (x, t) pairs.

    Each target uses origin-centred spherical coordinates with the polar axis
    through x: a Gaussian-windowed radial rule split at the annulus
    boundaries, the variable ``u = 1 - cos(theta)`` with panels graded on the
    scale ``2t/(R r)``, and a uniform azimuthal rule.  The ball ``|y| < r_in``
    around the origin is skipped; its contribution is bounded by
    ``sup(|y||u0|) * r_in^2 * 2pi * (4 pi t)^{-3/2}`` and checked against the
    tolerance.
    """
    cfg = cfg or QuadratureConfig()
    P = np.atleast_2d(np.asarray(points, float))
    T = np.broadcast_to(np.asarray(times, float), (len(P),))
    if np.any(T <= 0):
        raise RegionError("heat evolution needs t > 0")
    lam = field.lam
    C = field.n_components
    out = np.zeros((len(P), C))
    ru_sup = float(np.max(np.linalg.norm(field.samples, axis=-1)
                          * field.grid.radial_nodes[:, None], initial=0.0))
    spike = singular_ball(field)
    if spike is not None:
        from .norms import _ball_rule
        xs, rho_b, sprof = spike
        ball_p, ball_w, _ = _ball_rule(xs, rho_b, 8 + 2 * cfg.level, n_gl=5,
                                       order=11 + 6 * cfg.level)
    worst = 0.0
    for b0 in range(0, len(P), batch):
        pts, wts, starts, inner, smins = [], [], [], [], []
        bpts, bwts, bstarts = [], [], []
        n = nb = 0
        for x, t in zip(P[b0:b0 + batch], T[b0:b0 + batch]):
            q, w, r_in = heat_quadrature_points(x, t, lam, cfg)
            pts.append(q)
            wts.append(w)
            starts.append(n)
            n += len(w)
            inner.append(ru_sup * r_in ** 2 * 2 * np.pi * (4 * np.pi * t) ** -1.5)
            if spike is not None:
                smin = 2e-3 * math.sqrt(t) / rho_b
                smins.append(np.full(len(w), smin))
                bq, bw = _ball_copies(x, t, xs, rho_b, lam, ball_p, ball_w, cfg, smin)
                bpts.append(bq)
                bwts.append(bw * heat_kernel(x - bq, t))
                bstarts.append(nb)
                nb += len(bw)
        Q = np.concatenate(pts)
        W = np.concatenate(wts)
        vals = field.evaluate(Q)
        if spike is not None:
            # the main rule sees the field minus the resolved spike copies
            vals = vals - _spike_dss(sprof, Q, lam, np.concatenate(smins))
        res = np.add.reduceat(vals * W[:, None], np.array(starts), axis=0)
        if spike is not None and nb > 0:
            BQ = np.concatenate(bpts)
            BW = np.concatenate(bwts)
            bv = _spike_dss(sprof, BQ, lam, None) * BW[:, None]
            # reduceat needs strictly valid starts; accumulate per target
            ends = bstarts[1:] + [nb]
            for i, (s0, s1) in enumerate(zip(bstarts, ends)):
                if s1 > s0:
                    res[i] += bv[s0:s1].sum(axis=0)
        out[b0:b0 + batch] = res
        mags = np.linalg.norm(res, axis=-1)
        rel = np.array(inner) / np.maximum(mags, cfg.abs_tol)
        worst = max(worst, float(rel.max(initial=0.0)))
    if worst > cfg.rel_tol:
        raise ConvergenceError("inner tail of the heat quadrature exceeds tolerance",
                               achieved=worst, tol=cfg.rel_tol)
    return out


def singular_ball(field):
    """(x*, ball radius, spike profile) for analytic fields with a recorded spike."""
    xs = field.meta.get("x_star")
    sp = field.meta.get("spike_profile")
    if field.profile is None or xs is None or sp is None:
        return None
    return np.asarray(xs, float), float(field.meta["radius"]), sp


def _spike_dss(profile, q, lam, min_scale):
    """DSS extension of the spike profile, zero on copies below ``min_scale``."""
    from .dss_core import reduce_to_annulus

    y, m = reduce_to_annulus(q, lam)
    v = profile(y) * (lam ** m)[:, None]
    if min_scale is not None:
        v[lam ** -m < min_scale] = 0.0
    return v


def _ball_copies(x, t, xs, rho_b, lam, ball_p, ball_w, cfg, min_scale):
    """Ball-rule points of the spike copies lam^k B(x*, rho_b) near x."""
    R = float(np.linalg.norm(x))
    L = cfg.heat_window * math.sqrt(t)
    rs = float(np.linalg.norm(xs))
    pts, wts = [], []
    kmax = math.ceil(math.log((R + L) / max(rs - rho_b, 1e-12)) / math.log(lam))
    kmin = math.floor(math.log(min_scale) / math.log(lam)) - 1
    if R > L:
        kmin = max(kmin, math.floor(math.log((R - L) / (rs + rho_b)) / math.log(lam)))
    for k in range(kmin, kmax + 1):
        sc = lam ** k
        if sc < min_scale * (1 - 1e-12):
            continue
        c = xs * sc
        if abs(np.linalg.norm(x - c)) > L + rho_b * sc:
            continue
        pts.append(ball_p * sc)
        wts.append(ball_w * sc ** 3)
    if not pts:
        return np.zeros((0, 3)), np.zeros(0)
    return np.concatenate(pts), np.concatenate(wts)


# ---------------------------------------------------------------------------
# bilinear Duhamel term
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def solonnikov_sup():
    """Measured ``sup |grad K|(|x| + sqrt t)^4`` (scale invariant, so t = 1)."""
    dirs, _ = lebedev(17)
    r = np.geomspace(1e-3, 1e3, 121)
    pts = (r[:, None, None] * dirs[None]).reshape(-1, 3)
    return solonnikov_constant(pts, np.ones(len(pts)))


@lru_cache(maxsize=None)
def _b_rules(level, ratio=4.0):
    """Time rule and spatial parameters of the B quadrature at a given level."""
    ng = 4 + level
    x, w = _gl(ng)
    xg, wg = 0.5 * (x + 1), 0.5 * w
    d_lo, w_lo = lebedev(11 + 6 * level)
    d_hi, w_hi = lebedev(23 + 12 * level)
    edges = np.array([0.0, 0.25, 1.0]) if level == 0 else 4.0 ** -np.arange(level + 1, -1, -1)
    if level > 0:
        edges = np.concatenate([[0.0], edges])
    tv, tw = _panel_rule(edges, ng)
    trule = (tv, tw, tv.copy(), tw.copy())
    return trule, (xg, wg, d_lo, w_lo, d_hi, w_hi, ratio, 1.0 / 128, 64.0, 1e-3, 2.0)


def _vanishes(cell):
    """True when the cell is zero everywhere: zero samples and no far model."""
    return not np.any(cell.samples) and (cell.far_field is None or cell.far_scale == 0.0)


def bilinear_B(f, g, points, times, cfg=None, return_tail=False):
    """``B(f, g)(x, t) = -1/2 int_0^t e^{(t-s)Lap} P div(f g + g f) ds``.

    ``f`` and ``g`` are :class:`SpaceTimeCell` objects; outside their shells
    the cells supply the inner clamp and the far model.  Both must carry a
    decay envelope, which bounds the pieces of space the quadrature leaves
    out.  The integrand is symmetrized, so ``B(f, g) == B(g, f)`` bitwise.

    Returns values of shape (N, 3), plus the per-target tail bounds when
    ``return_tail`` is set.  Raises :class:`CannotCertifyError` without
    envelopes and :class:`ConvergenceError` when a tail bound exceeds
    ``tail_fraction`` of the largest value in the batch.
    """
    from . import _bquad
    cfg = cfg or QuadratureConfig()
    if f.envelope is None or g.envelope is None:
        raise CannotCertifyError("bilinear_B needs decay envelopes on both inputs",
                                 labels=[f.label, g.label])
    P = np.ascontiguousarray(np.atleast_2d(np.asarray(points, float)))
    T = np.ascontiguousarray(np.broadcast_to(np.asarray(times, float), (len(P),)))
    if np.any(T <= 0):
        raise RegionError("B needs t > 0")
    if np.any(np.linalg.norm(P, axis=-1) == 0):
        raise RegionError("B targets must avoid the origin")
    if _vanishes(f) or _vanishes(g):
        vals = np.zeros((len(P), 3))
        return (vals, np.zeros(len(P))) if return_tail else vals
    trule, rules = _b_rules(int(cfg.level))
    ef, eg = f.envelope, g.envelope
    envs = (float(ef.C), float(ef.alpha), float(ef.beta),
            float(eg.C), float(eg.alpha), float(eg.beta))
    same = f is g
    vals, tails = _bquad.b_targets(f.as_tuple(), g.as_tuple(), same, math.log(f.lam),
                                   P, T, trule, rules, envs, solonnikov_sup())
    scale = max(float(np.max(np.linalg.norm(vals, axis=-1), initial=0.0)), cfg.abs_tol)
    worst = float(np.max(tails, initial=0.0)) / scale
    if worst > cfg.tail_fraction:
        raise ConvergenceError("uncovered part of the B quadrature exceeds the tail budget",
                               achieved=worst, tol=cfg.tail_fraction)
    return (vals, tails) if return_tail else vals


def heat_radial_oracle(profile_1d, R, t, n=4000):
    """Radial heat evolution of a radial scalar f(|y|) by 1-D quadrature.

    ``(4 pi t)^{-1/2} / R * int_0^inf r f(r) [e^{-(R-r)^2/4t} - e^{-(R+r)^2/4t}] dr``
    """
    st = math.sqrt(t)
    hi = R + 12 * st
    edges = np.unique(np.concatenate([np.geomspace(1e-8 * st, min(st, hi), 40),
                                      np.linspace(max(R - 12 * st, 0.0), hi, 60)]))
    edges = np.concatenate([[0.0], edges[edges > 0]])
    r, w = _panel_rule(edges, 8)
    k = np.exp(-(R - r) ** 2 / (4 * t)) - np.exp(-(R + r) ** 2 / (4 * t))
    return float(np.sum(w * r * profile_1d(r) * k) / (R * math.sqrt(4 * np.pi * t)))


# ---------------------------------------------------------------------------
# integral oracles
# ---------------------------------------------------------------------------

def _mu_integral(r, R, c, a):
    """int_{-1}^{1} (|x - y| + c)^{-a} dmu for |x| = R, |y| = r.

    Uses d = |x - y| as the variable: d dd = -R r dmu.
    """
    def G(d):
        s = d + c
        if abs(a - 1.0) < 1e-12:
            return d - c * np.log(s)
        if abs(a - 2.0) < 1e-12:
            return np.log(s) + c / s
        return s ** (2 - a) / (2 - a) - c * s ** (1 - a) / (1 - a)

    lo = np.abs(R - r)
    hi = R + r
    out = (G(hi) - G(lo)) / (R * r)
    # cancellation for small r: fall back to the midpoint value 2 (R + c)^-a
    small = r < 1e-7 * max(R, c)
    if np.any(small):
        out = np.where(small, 2.0 * (R + c) ** (-a), out)
    return out


def _graded_edges(point, scale, lo, hi, ratio=4.0, n_levels=8):
    """Breakpoints clustering at ``point`` down to ``scale``."""
    e = [lo, hi]
    if lo < point < hi:
        e.append(point)
    d = scale
    for _ in range(n_levels):
        for s in (point - d, point + d):
            if lo < s < hi:
                e.append(s)
        d *= ratio
    return e


def _radial_integral(R, c, sq, a_ker, a_env, n_gl, extra_levels=0):
    """2 pi int_0^inf r^2 (r + sq)^(-a_env) mu_integral(r) dr for a batch of (c, sq)."""
    out = np.empty(len(c))
    big = 1e7 * (R + 1.0)
    for i, (ci, si) in enumerate(zip(c, sq)):
        scale_near = max(ci, 1e-9 * R)
        edges = set(_graded_edges(R, scale_near, 0.0, big, n_levels=12 + extra_levels))
        s0 = max(si, 1e-12)
        g = s0 * 1e-6
        while g < big:
            edges.add(g)
            g *= 2.0
        edges = np.array(sorted(edges))
        r, w = _panel_rule(edges, n_gl)
        f = 2 * np.pi * r * r * (r + si) ** (-a_env) * _mu_integral(r, R, ci, a_ker)
        out[i] = np.sum(w * f)
    return out


def _time_nodes(t, b, n_gl, levels=24):
    """Nodes/weights for int_0^t s^(-b/2) F(s) ds with endpoint grading.

    On [0, t/2] uses s = (t/2) w^(1/(1-b/2)) (absorbs s^(-b/2)) with geometric
    panels in w; on [t/2, t] uses tau = sqrt(t - s) with geometric panels.
    """
    p = 1.0 / (1.0 - b / 2.0)
    e = [0.0] + [2.0 ** -k for k in range(levels, -1, -1)]
    w_, ww = _panel_rule(e, n_gl)
    s_low = 0.5 * t * w_ ** p
    # s^(-b/2) ds = (t/2)^(1-b/2) p dw
    wt_low = (0.5 * t) ** (1.0 - b / 2.0) * p * ww
    tau_max = math.sqrt(0.5 * t)
    e = [0.0] + [tau_max * 2.0 ** -k for k in range(levels, -1, -1)]
    tau, wtau = _panel_rule(e, n_gl)
    s_up = t - tau ** 2
    wt_up = 2 * tau * wtau * s_up ** (-b / 2.0)
    return np.concatenate([s_low, s_up]), np.concatenate([wt_low, wt_up])


def lemma28_oracle(x, t, a, b, level=0):
    """(lhs, rhs, ratio) for the convolution of a gradient-kernel bound with an envelope.

    lhs = int_0^t int (|x-y| + sqrt(t-s))^-4 (|y| + sqrt s)^-a s^(-b/2) dy ds,
    rhs = sqrt(t)^(a-1) (|x|+sqrt t)^-a + sqrt(t)^3 (|x|+sqrt t)^-4.

    The angular integral is done in closed form; radius and time use graded
    composite Gauss-Legendre rules (``level`` refines both).
    """
    a, b = float(a), float(b)
    if not (0 <= a < 5 and 0 <= b < 2 and a + b < 5):
        raise InvalidExponentError("need a in [0,5), b in [0,2), a+b < 5", a=a, b=b)
    R = float(np.linalg.norm(x))
    n_gl = 8 + 4 * level
    s, ws = _time_nodes(t, b, n_gl, levels=24 + 8 * level)
    inner = _radial_integral(R, np.sqrt(t - s), np.sqrt(s), 4.0, a, n_gl, 4 * level)
    lhs = float(np.sum(ws * inner))
    st = math.sqrt(t)
    rhs = st ** (a - 1) * (R + st) ** (-a) + st ** 3 * (R + st) ** (-4)
    return lhs, rhs, lhs / rhs


def tsai_phi_oracle(x, a, b, level=0):
    """phi(x, a, b) = int_0^1 int (|x-y| + sqrt(1-t))^-a (|y| + sqrt t)^-b dy dt."""
    a, b = float(a), float(b)
    if not (0 < a < 5 and 0 < b < 5 and a + b > 3):
        raise InvalidExponentError("need 0 < a, b < 5 and a + b > 3", a=a, b=b)
    R = float(np.linalg.norm(x))
    n_gl = 8 + 4 * level
    s, ws = _time_nodes(1.0, 0.0, n_gl, levels=24 + 8 * level)
    inner = _radial_integral(R, np.sqrt(1.0 - s), np.sqrt(s), a, b, n_gl, 4 * level)
    return float(np.sum(ws * inner))


def tsai_model_comparison(R_values, phis, a, b):
    """Residuals of least-squares fits with and without the log R factor.

    Model 0: phi = c1 R^-a + c2 R^-b + c3 R^(3-a-b); model 1 adds
    c4 R^(3-a-b) log R.  Fits are in relative terms (weights 1/phi).
    """
    R = np.asarray(R_values, float)
    y = np.asarray(phis, float)
    cols = [R ** -a, R ** -b, R ** (3 - a - b)]
    B0 = np.stack(cols, 1) / y[:, None]
    B1 = np.stack(cols + [R ** (3 - a - b) * np.log(R)], 1) / y[:, None]
    one = np.ones_like(y)

    def resid(B):
        # drop exactly repeated columns (e.g. a = b)
        _, idx = np.unique(np.round(B, 12), axis=1, return_index=True)
        B = B[:, np.sort(idx)]
        c, *_ = np.linalg.lstsq(B, one, rcond=None)
        return float(np.linalg.norm(B @ c - one))

    return resid(B0), resid(B1)


def loglog_slope(xs, ys):
    xs, ys = np.log(np.asarray(xs, float)), np.log(np.abs(np.asarray(ys, float)))
    return float(np.polyfit(xs, ys, 1)[0])
