"""Constructive splittings of DSS data, heat flows and Picard iterates.

Data split: ``u0 = a0 + b0`` with ``a0`` small in weak L^3 and ``|x||b0|``
bounded.  The bounded piece starts from the cap
``b~0 = u0 * min(1, M / (|x| |u0|))`` (the quantity ``|x||u0|`` is invariant
under the DSS scaling, so the cap is DSS), ``a~0 = u0 - b~0`` lives where
``|x||u0| > M``, and ``a0 = P a~0``, ``b0 = u0 - a0``.  The height ``M``
doubles until the measured certificate of ``a0`` meets epsilon.

Heat split: ``P_{0,i} = e^{t Lap}`` of the two data parts.  Picard split:
at each step the bilinear pieces ``A`` (small x small), ``B`` (bounded x
bounded) and ``C`` (cross terms) are assigned as ``(A + C)(1 - chi_R)`` to the
small part and ``(A + C) chi_R + B`` to the bounded part, where
``chi_R(x, t) = chi(|x| / (R sqrt t))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numpy as np

from .dss_core import (DssField, build_grid, leray_project, make_cell, make_test_data,
                       spike_core_profile, zero_cell_like)
from .errors import CoverageError, InvalidExponentError, TuningFailureError
from .kernels import QuadratureConfig, bilinear_B, heat_evolve
from .norms import annulus_quadrature, besov_norm, lq_annulus, weak_lp_quasinorm
from .picard import CellSpec, _work_envelope, envelope_fit, exponent_table, theta


@dataclass(frozen=True)
class SplitPair:
    """``small_part + bounded_part`` with measured certificates."""

    small_part: object
    bounded_part: object
    certificates: dict = dc_field(default_factory=dict)
    mode: str = "L3w"

    def reconstruction_residual(self, original):
        """Max node discrepancy ``|original - (small + bounded)|``."""
        s = self.small_part.samples + self.bounded_part.samples
        return float(np.max(np.abs(original.samples - s), initial=0.0))


def _node_sup_xu(field):
    r = field.grid.radial_nodes[:, None]
    return float(np.max(np.linalg.norm(field.samples, axis=-1) * r, initial=0.0))


def _zero_field(u0):
    return u0.with_samples(np.zeros_like(u0.samples), profile=None, meta={})


@lru_cache(maxsize=None)
def besov_embedding_constant(p, lam=2.0, window=8.0, n=96):
    """Ratio ``||f||_{B^{-1+3/p}_{p,inf}} / ||f||_{L^{3,inf}}`` fitted once on
    the swirl field; used to turn weak-L^3 certificates into Besov ones."""
    grid = build_grid(lam, 16, 96, 3)
    f = make_test_data("swirl", grid)
    return besov_norm(f, -1.0 + 3.0 / p, p, window, n).value / weak_lp_quasinorm(f, 3)


def _cap_factor(u0, M):
    def factor(y):
        v = u0.evaluate(y)
        g = np.linalg.norm(y, axis=-1) * np.linalg.norm(v, axis=-1)
        with np.errstate(divide="ignore"):
            c = np.where(g > M, M / g, 1.0)
        return v, c
    return factor


def _pieces(u0, M):
    """Analytic a~0 and the part of b~0 carried by the spike (if any)."""
    factor = _cap_factor(u0, M)

    def a_tilde(y):
        v, c = factor(np.atleast_2d(y))
        return v * (1.0 - c)[:, None]
    return a_tilde


def split_data(u0, epsilon, mode="L3w", p=None, max_rounds=16, refine=4,
               leray_tol=1e-3, M0=None):
    """Split DSS data into a weak-L^3-small part and a ``1/|x|``-bounded part.

    Returns a :class:`SplitPair` of :class:`DssField` objects.  The small part
    is ``a0 = a~0 + I[P a~0 - a~0]``: the exact analytic core plus the grid
    interpolant of the nonlocal Leray correction, so ``a0`` equals ``P a~0``
    at every node while keeping the unresolved core for the norms.
    ``mode`` is ``"L3w"`` or ``"Besov"`` (the latter needs ``p``).
    """
    if mode not in ("L3w", "Besov"):
        raise InvalidExponentError(f"unknown split mode {mode!r}")
    if mode == "Besov" and (p is None or not p > 3):
        raise InvalidExponentError("Besov mode needs p > 3", p=p)
    epsilon = float(epsilon)
    emb = besov_embedding_constant(float(p), u0.lam) if mode == "Besov" else 1.0
    nodes = u0.grid.nodes()
    w_u0 = weak_lp_quasinorm(u0, 3, refine)
    if w_u0 == 0.0 and not np.any(u0.samples):
        z = _zero_field(u0)
        return SplitPair(z, z, {"epsilon": epsilon, "achieved": 0.0, "C_bounded": 0.0,
                                "M": None, "rounds": 0, "degenerate": True}, mode)
    if emb * w_u0 < epsilon:
        z = _zero_field(u0)
        return SplitPair(u0, z, {"epsilon": epsilon, "achieved": emb * w_u0,
                                 "weak_L3": w_u0, "C_bounded": 0.0, "M": None,
                                 "rounds": 0, "degenerate": True}, mode)
    q = u0.meta.get("q")
    if all(k in u0.meta for k in ("gamma", "x_star", "radius", "amplitude")):
        return _split_stream(u0, epsilon, mode, p, emb, max_rounds, refine, q)
    if M0 is None:
        # start at the level of |x||u0| typical of the annulus quadrature points
        pts, mags, _ = annulus_quadrature(u0, refine)
        g = np.linalg.norm(pts, axis=-1) * mags
        M0 = float(np.median(g[g > 0])) if np.any(g > 0) else 1.0
    M = float(M0)
    best = None
    meta_sp = {k: u0.meta[k] for k in ("x_star", "radius") if k in u0.meta}
    for rnd in range(1, max_rounds + 1):
        a_t = _pieces(u0, M)
        at_field = DssField(u0.grid, a_t(nodes).reshape(u0.samples.shape), u0.roughness_tag,
                            a_t, False, dict(meta_sp))
        proxy = weak_lp_quasinorm(at_field, 3, refine)
        if emb * proxy >= 0.5 * epsilon:
            best = proxy if best is None else min(best, proxy)
            M *= 2.0
            continue
        Pa = leray_project(at_field, leray_tol)
        corr = DssField(u0.grid, Pa.samples - at_field.samples)

        def a_prof(y, a_t=a_t, corr=corr):
            return a_t(y) + corr.evaluate(y)

        meta_a = dict(meta_sp, spike_profile=a_t) if meta_sp else {}
        a0 = DssField(u0.grid, Pa.samples, u0.roughness_tag, a_prof, True, meta_a)
        w_a0 = weak_lp_quasinorm(a0, 3, refine)
        achieved = emb * w_a0
        if achieved >= epsilon:
            best = w_a0 if best is None else min(best, w_a0)
            M *= 2.0
            continue
        u_prof = u0.evaluate
        sp = u0.meta.get("spike_profile")

        def b_prof(y, a_prof=a_prof):
            return u_prof(y) - a_prof(y)

        meta_b = {}
        if sp is not None:
            meta_b = dict(meta_sp, spike_profile=lambda y, sp=sp, a_t=a_t: sp(y) - a_t(y))
        b0 = DssField(u0.grid, u0.samples - Pa.samples, u0.roughness_tag, b_prof, True, meta_b)
        cert = {"epsilon": epsilon, "achieved": float(achieved), "weak_L3": float(w_a0),
                "weak_L3_uncorrected": float(proxy), "C_bounded": _node_sup_xu(b0),
                "M": M, "rounds": rnd, "degenerate": False,
                "leray_tail": Pa.meta.get("tail_estimate")}
        if q is not None and not math.isinf(float(q)):
            cert["Lq_A0"] = float(lq_annulus(a0, float(q), refine=refine))
        if mode == "Besov":
            cert["embedding_constant"] = emb
            cert["besov_direct"] = besov_norm(a0, -1.0 + 3.0 / p, p, 8.0).value
        return SplitPair(a0, b0, cert, mode)
    raise TuningFailureError("data split did not reach epsilon", epsilon=epsilon,
                             best=None if best is None else emb * best, rounds=max_rounds)


def _fibonacci_sphere(n):
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = math.pi * (1.0 + 5.0 ** 0.5) * i
    s = np.sqrt(1.0 - z * z)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)


def _sup_xu_near(profile, x_star, r_lo, r_hi, n_dir=256, n_rad=24):
    """``max |x||f(x)|`` over a dense set of points with ``r_lo <= |x - x*| <= r_hi``."""
    d = _fibonacci_sphere(n_dir)
    rad = np.geomspace(r_lo, r_hi, n_rad)
    pts = (np.asarray(x_star, float) + rad[:, None, None] * d[None]).reshape(-1, 3)
    v = profile(pts)
    return float(np.max(np.linalg.norm(pts, axis=-1) * np.linalg.norm(v, axis=-1)))


def _split_stream(u0, epsilon, mode, p, emb, max_rounds, refine, q):
    """Stream-function truncation of the spike: ``a0 = curl(psi kappa(rho/delta) e)``.

    ``a0`` is a curl, so ``P a0 = a0`` holds exactly; ``b0 = u0 - a0`` vanishes
    near the singular point.  ``delta`` halves each round until the weak-L^3
    certificate of ``a0`` is below epsilon.
    """
    m = u0.meta
    amp, gam, xs, rad = float(m["amplitude"]), float(m["gamma"]), m["x_star"], float(m["radius"])
    nodes = u0.grid.nodes()
    meta_sp = {"x_star": xs, "radius": rad}
    sp = m.get("spike_profile")
    u_prof = u0.evaluate
    best = None
    delta = rad
    for rnd in range(1, max_rounds + 1):
        core = spike_core_profile(amp, gam, xs, rad, delta)
        a0 = DssField(u0.grid, core(nodes).reshape(u0.samples.shape), u0.roughness_tag,
                      core, True, dict(meta_sp, spike_profile=core))
        w_a0 = weak_lp_quasinorm(a0, 3, refine)
        achieved = emb * w_a0
        if achieved >= epsilon:
            best = achieved if best is None else min(best, achieved)
            delta *= 0.5
            continue

        def b_prof(y, core=core):
            return u_prof(y) - core(y)

        meta_b = {}
        if sp is not None:
            meta_b = dict(meta_sp, spike_profile=lambda y, core=core: sp(y) - core(y))
        b0 = DssField(u0.grid, u0.samples - a0.samples, u0.roughness_tag, b_prof, True, meta_b)
        c_b = max(_node_sup_xu(b0), _sup_xu_near(b_prof, xs, 0.25 * delta, rad))
        cert = {"epsilon": epsilon, "achieved": float(achieved), "weak_L3": float(w_a0),
                "C_bounded": c_b, "delta": delta, "M": None, "rounds": rnd,
                "degenerate": False, "construction": "stream"}
        if q is not None and not math.isinf(float(q)):
            cert["Lq_A0"] = float(lq_annulus(a0, float(q), refine=refine))
        if mode == "Besov":
            cert["embedding_constant"] = emb
            cert["besov_direct"] = besov_norm(a0, -1.0 + 3.0 / p, p, 8.0).value
        return SplitPair(a0, b0, cert, mode)
    raise TuningFailureError("data split did not reach epsilon", epsilon=epsilon,
                             best=best, rounds=max_rounds)


# ---------------------------------------------------------------------------
# heat split
# ---------------------------------------------------------------------------

def _cell_from_heat(field, base, cfg):
    P, T = base.nodes()
    if not np.any(field.samples) and field.profile is None:
        return zero_cell_like(base, field.n_components)
    v = heat_evolve(field, P, T, cfg)
    c = base.replace(samples=v.reshape(base.samples.shape), far_field=field, far_scale=1.0)
    return c.replace(envelope=_work_envelope(c))


def _base_cell(u0, spec):
    grid = spec.build(u0.lam)
    return make_cell(grid, spec.n_time, spec.shell,
                     func=lambda P, T: np.zeros((len(P), u0.n_components)))


def split_heat(u0, q, epsilon, cfg=None, cell_spec=None, data_split=None, R0=0.0):
    """``e^{t Lap} u0 = P_{0,1} + P_{0,2}`` on the cell layout.

    Certificates: the envelope of ``P_{0,1}`` at ``(-3/q, 1 - 3/q)`` (must be
    at most epsilon) and of ``P_{0,2}`` at ``(0, 1)``.  A missed certificate
    is flagged, not raised.
    """
    cfg = cfg or QuadratureConfig()
    spec = cell_spec or CellSpec()
    th = theta(q)
    sp = data_split or split_data(u0, epsilon)
    base = _base_cell(u0, spec)
    P01 = _cell_from_heat(sp.small_part, base, cfg).replace(label="P01")
    P02 = _cell_from_heat(sp.bounded_part, base, cfg).replace(label="P02")
    e1 = envelope_fit(P01, -(1.0 - th), th, R0)
    e2 = envelope_fit(P02, 0.0, 1.0, R0)
    cert = {"epsilon": float(epsilon), "C_small": e1.C, "C_bounded": e2.C,
            "small_ok": bool(e1.C <= epsilon), "data": sp.certificates}
    return SplitPair(P01, P02, cert, "heat")


# ---------------------------------------------------------------------------
# Picard split
# ---------------------------------------------------------------------------

def chi(s):
    """C-infinity radial cutoff: 1 on [0, 1], 0 on [2, inf)."""
    s = np.asarray(s, float)
    u = np.clip(2.0 - s, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return a / (a + b)


def chi_R(cell, R):
    P, T = cell.nodes()
    return chi(np.linalg.norm(P, axis=-1) / (R * np.sqrt(T)))


def _with_env(c, label):
    c = c.replace(label=label)
    return c.replace(envelope=_work_envelope(c))


def split_picard(u0, q, epsilon, k, R_cut=2.0, cfg=None, cell_spec=None, heat_split=None,
                 R0=0.0, max_doublings=8):
    """Split ``P_k = P_{k,1} + P_{k,2}`` following the A/B/C recursion.

    Returns ``(pair, diff_pair, history)``: the split of ``P_k``, the split of
    ``P_k - P_{k-1}`` with envelopes measured against ``(a_k - 1, a_k)``
    (thm13 indexing) and ``(b_k - 1, b_k)``, and per-step records.
    """
    cfg = cfg or QuadratureConfig()
    spec = cell_spec or CellSpec()
    th = theta(q)
    hs = heat_split or split_heat(u0, q, epsilon, cfg, spec, R0=R0)
    P01, P02 = hs.small_part, hs.bounded_part
    P1, P2 = P01, P02
    prev = (P01, P02)
    pts, T = P01.nodes()
    history = []
    rmax = P01.shell[1] / math.sqrt(P01.time_nodes[0])
    for j in range(k):
        A = bilinear_B(P1, P1, pts, T, cfg)
        Bb = bilinear_B(P2, P2, pts, T, cfg)
        Cc = 2.0 * bilinear_B(P1, P2, pts, T, cfg)
        budget = (2.0 - 2.0 ** -(j + 1)) * epsilon
        R = float(R_cut)
        for _ in range(max_doublings + 1):
            if 2.0 * R > rmax:
                raise CoverageError("cutoff radius exceeds the cell coverage", R_cut=R,
                                    coverage=rmax, k=j + 1)
            c = chi_R(P01, R)[:, None]
            small = P01.samples.reshape(-1, 3) + (A + Cc) * (1.0 - c)
            bounded = P02.samples.reshape(-1, 3) + (A + Cc) * c + Bb
            S1 = _with_env(P01.replace(samples=small.reshape(P01.samples.shape)), f"P{j + 1},1")
            e1 = envelope_fit(S1, -(1.0 - th), th, R0)
            if e1.C <= budget:
                break
            R *= 2.0
        S2 = _with_env(P02.replace(samples=bounded.reshape(P02.samples.shape)), f"P{j + 1},2")
        e2 = envelope_fit(S2, 0.0, 1.0, R0)
        history.append({"k": j + 1, "R_cut": R, "C_small": e1.C, "budget": budget,
                        "small_ok": bool(e1.C <= budget), "C_bounded": e2.C})
        prev = (P1, P2)
        P1, P2 = S1, S2
    pair = SplitPair(P1, P2, {"epsilon": float(epsilon), "history": history}, f"picard({k})")
    if k == 0:
        return pair, None, history
    a_k = exponent_table(q, k, "thm13")[k]["a_k"]
    b_k = exponent_table(q, k, "thm13")[k]["b_k"]
    D1 = P1.combine(prev[0], 1.0, -1.0, label=f"P'{k},1")
    D2 = P2.combine(prev[1], 1.0, -1.0, label=f"P'{k},2")
    R0d = max(R0, 1e-12)
    ed1 = envelope_fit(D1, a_k - 1.0, a_k, R0d)
    ed2 = envelope_fit(D2, b_k - 1.0, b_k, R0d)
    diff = SplitPair(D1, D2, {"a_k": a_k, "b_k": b_k, "C_small": ed1.C,
                              "C_bounded": ed2.C, "slope_small": ed1.slope,
                              "slope_bounded": ed2.slope}, f"picard_diff({k})")
    return pair, diff, history
