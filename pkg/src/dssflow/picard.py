"""Picard iterates on the fundamental space-time cell and their decay checks.

``P_0 = e^{t Lap} u0`` and ``P_{k+1} = P_0 + B(P_k, P_k)``.  Increments are
computed directly as ``D_{k+1} = P_{k+1} - P_k = B(D_k, P_k + P_{k-1})`` (the
difference of two symmetric bilinear terms), so the quadrature error of each
increment is relative to the increment itself.

Envelopes are bounds ``|f(x, t)| <= C sqrt(t)^alpha (|x| + sqrt t)^(-beta)``
on the region ``|x| >= R0 sqrt t``; all fits are sups over stored nodes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from .dss_core import build_grid, make_cell, zero_cell_like
from .errors import (DssError, InvalidExponentError, PreconditionError, RegionError)
from .kernels import QuadratureConfig, bilinear_B, heat_evolve, loglog_slope

CAP = 4.0


# ---------------------------------------------------------------------------
# envelopes and exponents
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayEnvelope:
    """``|f| <= C sqrt(t)^alpha (|x| + sqrt t)^(-beta)`` on ``region``.

    ``region`` is ``(R0, shell, band)``; ``slope`` is the secondary log-log
    regression diagnostic (None when not fitted).
    """

    C: float
    alpha: float
    beta: float
    region: tuple = (0.0, None, None)
    slope: object = None

    def __post_init__(self):
        if not (self.C >= 0):
            raise RegionError("an envelope constant must be non-negative", C=self.C)

    def weight(self, points, times):
        r = np.linalg.norm(np.atleast_2d(points), axis=-1)
        st = np.sqrt(np.asarray(times, float))
        return st ** self.alpha * (r + st) ** (-self.beta)

    def bound(self, points, times):
        return self.C * self.weight(points, times)

    def to_dict(self):
        R0, shell, band = self.region
        return {"C": float(self.C), "alpha": float(self.alpha), "beta": float(self.beta),
                "R0": float(R0),
                "shell": None if shell is None else [float(v) for v in shell],
                "band": None if band is None else [float(v) for v in band],
                "slope": None if self.slope is None else float(self.slope)}


def _check_q(q):
    q = float(q)
    if not q > 3:
        raise InvalidExponentError("the roughness exponent must satisfy q > 3", q=q)
    return q


def theta(q):
    """``1 - 3/q`` (1 for q = inf)."""
    return 1.0 - 3.0 / _check_q(q)


def k_q(q):
    """``ceil(4q/(q-3) - 2)``; for q = inf the limit value 2."""
    q = _check_q(q)
    if math.isinf(q):
        return 2
    return int(math.ceil(4.0 * q / (q - 3.0) - 2.0 - 1e-12))


def b_sequence(q, k_max):
    """``b_1 = 1, b_2 = 2, b_{k+1} = min(b_k + 1 - 3/q, 4)``; index 0 is undefined."""
    th = theta(q)
    b = [float("nan"), 1.0, 2.0]
    while len(b) <= k_max:
        b.append(min(b[-1] + th, CAP))
    return b[:k_max + 1]


def exponent_table(q, k_max, convention="thm12"):
    """Rows ``{k, a_k, b_k, k_q}`` for the requested indexing convention.

    ``thm12``: ``a_k = (k + 2)(1 - 3/q)`` (uncapped); ``thm13``:
    ``a_k = min((k + 1)(1 - 3/q), 4)``.  The two are never converted into
    each other.
    """
    th = theta(q)
    if convention == "thm12":
        a = [(k + 2) * th for k in range(k_max + 1)]
    elif convention == "thm13":
        a = [min((k + 1) * th, CAP) for k in range(k_max + 1)]
    else:
        raise InvalidExponentError(f"unknown convention {convention!r}")
    b = b_sequence(q, k_max)
    kq = k_q(q)
    return [{"k": k, "a_k": a[k], "b_k": b[k], "k_q": kq} for k in range(k_max + 1)]


def predicted_increment_exponent(q, k):
    """Decay exponent of ``|P_{k+1} - P_k|`` at fixed t: ``min((k+2)(1-3/q), 4)``."""
    return min((k + 2) * theta(q), CAP)


# ---------------------------------------------------------------------------
# fits on cells
# ---------------------------------------------------------------------------

def _node_arrays(cell):
    P, T = cell.nodes()
    vals = np.linalg.norm(cell.samples.reshape(len(P), -1), axis=-1)
    return P, T, np.linalg.norm(P, axis=-1), vals


def _region_mask(r, T, R0):
    return r >= R0 * np.sqrt(T) * (1 - 1e-12)


def radial_profile(cell, t=None):
    """Sup over directions of ``|f|`` on each shell radius at the time node
    closest to ``t`` (default the first node, t = 1)."""
    it = 0 if t is None else int(np.argmin(np.abs(cell.time_nodes - t)))
    mags = np.linalg.norm(cell.samples[it], axis=-1)
    return cell.radii, mags.max(axis=1), float(cell.time_nodes[it])


def fit_slope(cell, R0=2.0, t=None):
    """Log-log slope of the sup-over-angle profile against ``|x| + sqrt t``."""
    r, m, tt = radial_profile(cell, t)
    keep = (r >= R0 * math.sqrt(tt)) & (m > 0)
    if keep.sum() < 2:
        return float("nan")
    return loglog_slope(r[keep] + math.sqrt(tt), m[keep])


def envelope_fit(samples, alpha, beta, R0=2.0):
    """Smallest C with ``|f| <= C sqrt(t)^alpha (|x| + sqrt t)^-beta`` over the
    stored nodes of the region ``|x| >= R0 sqrt t``."""
    P, T, r, vals = _node_arrays(samples)
    mask = _region_mask(r, T, R0)
    if not np.any(mask):
        raise RegionError("envelope region is empty on this cell", R0=R0,
                          shell=list(samples.shell))
    st = np.sqrt(T[mask])
    w = st ** alpha * (r[mask] + st) ** (-beta)
    C = float(np.max(vals[mask] / w))
    band = (float(samples.time_nodes[0]), float(samples.time_nodes[-1]))
    return DecayEnvelope(C, float(alpha), float(beta), (float(R0), tuple(samples.shell), band),
                         slope=fit_slope(samples, R0))


def littleo_profile(samples, q, r_list, a=None):
    """``s(r) = sup_{|x| >= r sqrt t} |f| w(x, t)`` over stored nodes.

    The default weight is ``sqrt(t)^(3/q) (|x| + sqrt t)^(1 - 3/q)``; with
    ``a`` given it is ``sqrt(t)^(1 - a) (|x| + sqrt t)^a``.  The sequence is
    non-increasing by construction; radii past the cell coverage are dropped
    with a warning.
    """
    P, T, r, vals = _node_arrays(samples)
    st = np.sqrt(T)
    if a is None:
        th = theta(q)
        w = st ** (1.0 - th) * (r + st) ** th
    else:
        w = st ** (1.0 - a) * (r + st) ** a
    weighted = vals * w
    rho = r / st
    order = np.argsort(-rho)
    # suffix maximum over decreasing rho gives sup over {rho >= r}
    run = np.maximum.accumulate(weighted[order])
    rs = rho[order]
    out = []
    for rr in np.asarray(r_list, float):
        n = int(np.searchsorted(-rs, -rr * (1 - 1e-12), side="right"))
        if n == 0:
            warnings.warn(f"littleo_profile: region empty at r={rr:g}; sequence truncated",
                          RuntimeWarning, stacklevel=2)
            break
        out.append(float(run[n - 1]))
    out = np.minimum.accumulate(np.asarray(out)) if out else np.asarray(out)
    return out


# ---------------------------------------------------------------------------
# iterates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CellSpec:
    """Layout of the cells that hold the iterates."""

    n_radial: int = 4
    n_angular: int = 24
    interp_order: int = 1
    n_time: int = 3
    shell: tuple = (0.5, 32.0)

    def build(self, lam):
        grid = build_grid(lam, self.n_radial, self.n_angular, self.interp_order)
        return grid

    def to_dict(self):
        return {"n_radial": self.n_radial, "n_angular": self.n_angular,
                "interp_order": self.interp_order, "n_time": self.n_time,
                "shell": list(self.shell)}


@dataclass(frozen=True)
class PicardSequence:
    """Iterates ``P_0..P_K`` plus the increments ``D_k = P_k - P_{k-1}``."""

    iterates: list
    increments: list
    q: float
    lam: float
    meta: dict = dc_field(default_factory=dict)

    @property
    def K(self):
        return len(self.iterates) - 1

    def increment(self, k):
        """``P_{k+1} - P_k``."""
        return self.increments[k + 1]

    def difference(self, i, j):
        """``P_i - P_j`` accumulated from increments (no cancellation)."""
        if i == j:
            return zero_cell_like(self.iterates[0])
        sign = 1.0
        if i < j:
            i, j, sign = j, i, -1.0
        s = self.increments[j + 1].samples.copy()
        for k in range(j + 2, i + 1):
            s = s + self.increments[k].samples
        return self.iterates[0].replace(samples=sign * s, envelope=None, far_field=None,
                                        far_scale=0.0, label=f"P{i}-P{j}")


def _work_envelope(cell):
    """(0, 1) envelope over the whole cell, used by the B tail certificates."""
    P, T, r, vals = _node_arrays(cell)
    C = float(np.max(vals * (r + np.sqrt(T)), initial=0.0))
    return DecayEnvelope(max(C, 1e-300), 0.0, 1.0, (0.0, tuple(cell.shell), None))


def picard_iterates(u0, k_max, cell_spec=None, cfg=None, heat_cfg=None, zero_tol=1e-6,
                    progress=None):
    """Build ``P_0..P_{k_max}`` on the cell layout ``cell_spec``.

    ``P_0`` samples the heat evolution of ``u0``; every later iterate adds one
    bilinear increment.  Once an increment is below ``zero_tol * sup|P_0|`` it
    is below quadrature resolution, and it and all later increments are
    stored as zero.  Errors are re-raised with the failing ``k`` attached.
    """
    spec = cell_spec or CellSpec()
    cfg = cfg or QuadratureConfig()
    grid = spec.build(u0.lam)
    q = u0.meta.get("q", u0.roughness_tag)
    q = float("inf") if q in ("inf", None) else float(q)
    lam = u0.lam
    base = make_cell(grid, spec.n_time, spec.shell, samples=None,
                     func=lambda P, T: np.zeros((len(P), u0.n_components)))
    zero = base.replace(label="P0")
    trivial = PicardSequence([zero] * (k_max + 1), [zero] * (k_max + 1), q, lam,
                             {"cell": spec.to_dict(), "zeroed_from": 1})
    # grid samples alone can miss a narrow spike, so the analytic profile counts
    if not np.any(u0.samples) and u0.profile is None:
        return trivial
    P, T = base.nodes()
    try:
        v0 = heat_evolve(u0, P, T, heat_cfg or cfg)
    except DssError as e:
        raise type(e)(f"P_0: {e}", k=0, **e.details) from e
    if not np.any(v0):
        return trivial
    P0 = base.replace(samples=v0.reshape(base.samples.shape), far_field=u0, far_scale=1.0,
                      label="P0")
    P0 = P0.replace(envelope=_work_envelope(P0))
    sup0 = float(np.max(np.abs(v0)))
    iterates, incs = [P0], [P0]
    zeroed = None
    for k in range(k_max):
        if zeroed is not None:
            D = zero_cell_like(P0)
        else:
            if k == 0:
                f, g = P0, P0
            else:
                f = incs[k]
                g = iterates[k].combine(iterates[k - 1], label="sum")
                g = g.replace(envelope=_work_envelope(g))
            try:
                vals = bilinear_B(f, g, P, T, cfg)
            except DssError as e:
                raise type(e)(f"P_{k + 1}: {e}", k=k + 1, **e.details) from e
            if np.max(np.abs(vals)) <= zero_tol * sup0:
                zeroed = k + 1
                vals = np.zeros_like(vals)
            D = P0.replace(samples=vals.reshape(P0.samples.shape), far_field=None,
                           far_scale=0.0, label=f"D{k + 1}")
        D = D.replace(envelope=_work_envelope(D))
        Pk = iterates[-1].combine(D, label=f"P{k + 1}")
        Pk = Pk.replace(envelope=_work_envelope(Pk))
        iterates.append(Pk)
        incs.append(D)
        if progress is not None:
            progress(k + 1)
    return PicardSequence(iterates, incs, q, lam,
                          {"cell": spec.to_dict(), "zeroed_from": zeroed,
                           "level": cfg.level})


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class Report:
    """Sections of named results; every section carries a ``status`` of
    ``pass``, ``fail`` or ``inconclusive``."""

    sections: dict = dc_field(default_factory=dict)
    meta: dict = dc_field(default_factory=dict)

    def add(self, name, status, **data):
        self.sections[name] = {"status": status, **data}

    @property
    def ok(self):
        return all(s["status"] != "fail" for s in self.sections.values())

    def to_dict(self):
        return {"meta": self.meta, "sections": self.sections, "ok": self.ok}

    def envelope_rows(self):
        """CSV rows ``(section, k, alpha, beta, C, slope, stable)``."""
        rows = []
        for name, sec in self.sections.items():
            for e in sec.get("envelopes", []):
                rows.append((name, e.get("k"), e["alpha"], e["beta"], e["C"],
                             e.get("slope"), e.get("stable")))
        return rows


def _stable(a, b, rel=0.2):
    if a is None or b is None:
        return None
    if a == 0 and b == 0:
        return True
    return abs(a - b) <= rel * max(abs(a), abs(b))


def verify_decay(seq, surrogate_K=None, R0=2.0, r_list=None, refined=None, strict=True):
    """Envelope, slope and little-o checks with ``P_K`` standing in for u.

    ``refined`` is an optional second sequence at a finer layout; constants
    are then flagged stable when they agree within 20%.  With ``strict``
    False a too-short sequence gives an inconclusive report instead of a
    :class:`PreconditionError`.
    """
    q = seq.q
    kq = k_q(q)
    K = seq.K if surrogate_K is None else int(surrogate_K)
    rep = Report(meta={"q": q, "k_q": kq, "K": K, "R0": R0, "lambda": seq.lam})
    if K < kq + 1 or K > seq.K:
        if strict:
            raise PreconditionError("the surrogate needs K >= k_q + 1 stored iterates",
                                    K=K, k_q=kq, available=seq.K)
        rep.add("surrogate", "inconclusive", reason="K < k_q + 1", K=K, k_q=kq)
        K = min(K, seq.K)
    S = seq.iterates[K]
    S_ref = refined.iterates[min(K, refined.K)] if refined is not None else None
    th = theta(q)
    if not np.any(S.samples):
        rep.add("trivial", "pass", reason="zero data")
        return rep
    lo, hi = S.shell
    if r_list is None:
        r_list = np.geomspace(max(R0, lo * 1.0001), hi / math.sqrt(seq.lam ** 2), 6)
    # leading-order envelope of the surrogate
    e = envelope_fit(S, -3.0 / q if q < np.inf else 0.0, th, R0)
    e_ref = envelope_fit(S_ref, e.alpha, e.beta, R0) if S_ref is not None else None
    st = _stable(e.C, None if e_ref is None else e_ref.C)
    rep.add("envelope_u", "pass" if st is not False else "fail",
            envelopes=[{**e.to_dict(), "k": K, "stable": st}])
    # envelopes of S - P_k at the thm12 exponents
    table = exponent_table(q, K, "thm12")
    envs = []
    status = "pass"
    base_slope = fit_slope(S, R0)
    for k in range(min(kq, K)):
        diff = seq.difference(K, k)
        a = table[k]["a_k"]
        ek = envelope_fit(diff, a - 1.0, a, R0)
        row = {**ek.to_dict(), "k": k, "stable": None}
        if refined is not None and k < refined.K:
            er = envelope_fit(refined.difference(min(K, refined.K), k), a - 1.0, a, R0)
            row["stable"] = _stable(ek.C, er.C)
            if row["stable"] is False:
                status = "fail"
        envs.append(row)
    rep.add("envelope_u_minus_Pk", status, envelopes=envs, surrogate_slope=base_slope)
    # little-o profiles
    s = littleo_profile(S, q, r_list)
    ok = bool(len(s) >= 2 and np.all(np.diff(s) <= 0))
    rep.add("littleo_u", "pass" if ok else "fail", r=list(map(float, r_list[:len(s)])),
            s=s.tolist(), ratio=float(s[-1] / s[0]) if len(s) and s[0] > 0 else None)
    t13 = exponent_table(q, K, "thm13")
    prof = []
    for k in range(min(kq, K)):
        sk = littleo_profile(seq.difference(K, k), q, r_list, a=t13[k]["a_k"])
        prof.append({"k": k, "a_k": t13[k]["a_k"], "s": sk.tolist()})
    rep.add("littleo_u_minus_Pk", "pass", profiles=prof)
    return rep
