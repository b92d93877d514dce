"""Small-data mild solver with a drift, via the contraction principle.

Solves ``u = e^{t Lap} u0 + B(u, u) + B(a, u) + B(u, a)`` on a cell layout,
where ``B`` is :func:`dssflow.kernels.bilinear_B` (which already carries the
minus sign of the Duhamel term) and ``a`` is a fixed drift.  Because ``B`` is
symmetric, ``B(a, u) + B(u, a) = 2 B(a, u)``.

The working norm is the max over the stored times of the discrete ``L^p``
norm over the shell.  Every constant entering the contraction argument
(``C_B``, ``delta``, the drift factor) is measured, never assumed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np

from .dss_core import DssField, SpaceTimeCell, make_cell, zero_cell_like
from .errors import DivergenceError, PreconditionError, RegionError
from .kernels import QuadratureConfig, bilinear_B, heat_evolve
from .norms import cell_lp_norms, kato_norm
from .picard import CellSpec, _work_envelope

DRIFT_LIMIT = 0.125


@dataclass
class ContractionCertificate:
    """Measured constants and the residual history of one solve."""

    C_B: float
    delta: float
    drift_factor: float
    residuals: list = dc_field(default_factory=list)
    converged: bool = False
    ratio: float = float("nan")
    predicted_ratio: float = float("nan")
    p: float = float("inf")
    iterations: int = 0
    refused: bool = False
    bound_check: dict = dc_field(default_factory=dict)
    notes: dict = dc_field(default_factory=dict)

    def ratios(self):
        r = np.asarray(self.residuals, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return r[1:] / r[:-1]

    def to_dict(self):
        d = asdict(self)
        d["p"] = "inf" if math.isinf(self.p) else self.p
        return d


def working_norm(cell, p):
    """``max_t ||cell(t)||_{L^p(shell)}`` over the stored times."""
    return float(np.max(cell_lp_norms(cell, p), initial=0.0))


def solver_cell_spec():
    """Compact default layout: one octave of shell, two time nodes."""
    return CellSpec(n_radial=2, n_angular=24, interp_order=1, n_time=2, shell=(1.0, 4.0))


def _base(lam, spec, ncomp=3):
    grid = spec.build(lam)
    return make_cell(grid, spec.n_time, spec.shell,
                     func=lambda P, T: np.zeros((len(P), ncomp)))


def _enveloped(cell, label=""):
    cell = cell.replace(label=label) if label else cell
    return cell.replace(envelope=_work_envelope(cell))


def evolve_data(u0, cell_spec=None, cfg=None):
    """``e^{t Lap} u0`` sampled on the solver layout (far model: ``u0`` itself)."""
    spec = cell_spec or solver_cell_spec()
    base = _base(u0.lam, spec, u0.n_components)
    if not np.any(u0.samples) and u0.profile is None:
        return _enveloped(base, "E0")
    P, T = base.nodes()
    v = heat_evolve(u0, P, T, cfg)
    c = base.replace(samples=v.reshape(base.samples.shape), far_field=u0, far_scale=1.0)
    return _enveloped(c, "E0")


def data_norm(u0, cell, p):
    """Discrete ``L^p`` norm of the data over the cell's shell (same weights)."""
    P, _ = cell.nodes()
    n_space = len(P) // len(cell.time_nodes)
    vals = u0.evaluate(P[:n_space])
    c = cell.replace(samples=np.broadcast_to(
        vals.reshape((1,) + cell.samples.shape[1:]), cell.samples.shape).copy())
    return working_norm(c, p)


def _B_cell(f, g, like, cfg):
    P, T = like.nodes()
    if not np.any(f.samples) or not np.any(g.samples):
        return zero_cell_like(like)
    v = bilinear_B(f, g, P, T, cfg)
    return like.replace(samples=v.reshape(like.samples.shape), far_field=None,
                        far_scale=0.0, envelope=None, label="B")


def measure_C_B(probes, p, cfg=None):
    """``max ||B(f, g)|| / (||f|| ||g||)`` over all probe pairs."""
    best = 0.0
    for i, f in enumerate(probes):
        for g in probes[i:]:
            nf, ng = working_norm(f, p), working_norm(g, p)
            if nf == 0 or ng == 0:
                continue
            b = _B_cell(f, g, f, cfg)
            best = max(best, working_norm(b, p) / (nf * ng))
    return best


def _as_drift(drift_a):
    if drift_a is None or not np.any(drift_a.samples):
        return None
    return drift_a if drift_a.envelope is not None else _enveloped(drift_a)


def measure_drift_factor(drift_a, probe, p, cfg=None):
    """``(||B(e, a)|| + ||B(a, e)||) / ||e||`` on one probe ``e``."""
    drift_a = _as_drift(drift_a)
    if drift_a is None:
        return 0.0
    ne = working_norm(probe, p)
    if ne == 0:
        return 0.0
    b = _B_cell(drift_a, probe, probe, cfg)
    return 2.0 * working_norm(b, p) / ne


def drift_threshold(drift_a, probe, p, cfg=None):
    """Kato-infinity size of ``drift_a`` at which the drift factor reaches 1/8.

    The drift factor is linear in the drift, so one measurement fixes the
    threshold: ``||a||_K * (1/8) / factor(a)``.
    """
    k = kato_norm(drift_a, float("inf")).value
    f = measure_drift_factor(drift_a, probe, p, cfg)
    return float("inf") if f == 0 else k * DRIFT_LIMIT / f


def fixed_point_solve(e0, drift_a=None, p=float("inf"), T=None, cfg=None, cell_spec=None,
                      initial="data", tol=1e-6, max_iter=30, C_B=None, enforce=True):
    """Picard iteration for the perturbed mild equation.

    ``e0`` is DSS data (a :class:`DssField`, evolved here) or an already
    evolved :class:`SpaceTimeCell`.  ``drift_a`` is a cell or ``None``.
    ``initial`` is ``"data"`` (start at ``e^{t Lap} u0``), ``"zero"``, or a
    cell on the solver layout.
    Iteration stops once the increment norm is at most ``tol * ||e0||``.

    Returns ``(solution_cell, ContractionCertificate)``.  Raises
    :class:`PreconditionError` (details include the certificate) when
    ``4 C_B delta > 1`` or the drift factor exceeds 1/8, and
    :class:`DivergenceError` when the residual grows twice in a row.
    """
    cfg = cfg or QuadratureConfig()
    p = float(p)
    if not p > 3:
        raise RegionError("the working norm needs p > 3", p=p)
    if not isinstance(initial, SpaceTimeCell) and initial not in ("data", "zero"):
        raise RegionError(f"unknown initial iterate {initial!r}")
    u0 = e0 if isinstance(e0, DssField) else None
    E0 = evolve_data(e0, cell_spec, cfg) if u0 is not None else _enveloped(e0, "E0")
    lam = E0.lam
    T = lam ** 2 if T is None else float(T)
    delta = working_norm(E0, p)
    cert = ContractionCertificate(0.0, delta, 0.0, p=p)
    if delta == 0.0:
        cert.residuals = [0.0]
        cert.converged = True
        cert.ratio = 0.0
        cert.predicted_ratio = 0.0
        cert.bound_check = {"sup_u": 0.0, "u0_norm": 0.0, "ok": True}
        return E0, cert
    if C_B is None:
        C_B = measure_C_B([E0], p, cfg)
    cert.C_B = float(C_B)
    cert.drift_factor = measure_drift_factor(drift_a, E0, p, cfg)
    cert.predicted_ratio = 4.0 * cert.C_B * delta + 2.0 * cert.drift_factor
    if u0 is not None and not math.isinf(p):
        n0 = data_norm(u0, E0, p)
        cert.notes["T_u0"] = n0 ** (-2.0 / (1.0 - 3.0 / p)) if n0 > 0 else float("inf")
    cert.notes["T"] = T
    bad = []
    if 4.0 * cert.C_B * delta > 1.0:
        bad.append("4 C_B delta > 1")
    if cert.drift_factor > DRIFT_LIMIT:
        bad.append("drift factor > 1/8")
    if bad and enforce:
        cert.refused = True
        raise PreconditionError("contraction preconditions fail: " + ", ".join(bad),
                                C_B=cert.C_B, delta=delta, drift_factor=cert.drift_factor,
                                certificate=cert.to_dict())
    drift = _as_drift(drift_a)
    if isinstance(initial, SpaceTimeCell):
        e = _enveloped(initial, "e")
    else:
        e = E0 if initial == "data" else _enveloped(zero_cell_like(E0), "e")
    grow = 0
    for n in range(1, max_iter + 1):
        corr = _B_cell(e, e, E0, cfg)
        if drift is not None:
            corr = corr.combine(_B_cell(drift, e, E0, cfg).scaled(2.0))
        new = _enveloped(E0.combine(corr.replace(far_field=None, far_scale=0.0)), f"e{n}")
        res = working_norm(new.combine(e, 1.0, -1.0), p)
        cert.residuals.append(res)
        e = new
        cert.iterations = n
        if len(cert.residuals) >= 2 and res > cert.residuals[-2]:
            grow += 1
            if grow >= 2:
                raise DivergenceError("residuals grew twice", residuals=list(cert.residuals),
                                      certificate=cert.to_dict())
        if res <= tol * delta:
            cert.converged = True
            break
    r = cert.ratios()
    # the first step from a start other than the datum mostly measures the start
    r = r[1:] if not (isinstance(initial, str) and initial == "data") else r
    r = r[np.isfinite(r)]
    cert.ratio = float(r.max()) if len(r) else 0.0
    sup_u = working_norm(e, p)
    if u0 is not None:
        n0 = data_norm(u0, E0, p)
        cert.bound_check = {"sup_u": sup_u, "u0_norm": n0, "ok": bool(sup_u <= 2.0 * n0)}
    else:
        cert.bound_check = {"sup_u": sup_u, "e0_norm": delta, "ok": bool(sup_u <= 2.0 * delta)}
    return e.replace(label="u"), cert


def mild_identity_residual(u, E0, drift_a=None, cfg=None, p=float("inf")):
    """``||u - E0 - B(u, u) - 2 B(a, u)||`` relative to ``||u||`` at the nodes."""
    u = _enveloped(u)
    rhs = E0.combine(_B_cell(u, u, E0, cfg))
    drift_a = _as_drift(drift_a)
    if drift_a is not None:
        rhs = rhs.combine(_B_cell(drift_a, u, E0, cfg).scaled(2.0))
    nu = working_norm(u, p)
    return working_norm(u.combine(rhs, 1.0, -1.0), p) / nu if nu else 0.0


def _sup_at_time(drift_a):
    """``s -> sup |a(s)|`` for a DSS cell: band sups at the stored times,
    interpolated log-log (so ``sqrt(s) sup|a(s)|`` never exceeds its node
    values) and extended by scaling."""
    sups = cell_lp_norms(drift_a, float("inf"))
    lam = drift_a.lam
    ell = np.log(drift_a.time_nodes) / np.log(lam)
    # close the band periodically: sup at t lam^2 equals sup at t / lam
    ell_ext = np.concatenate([ell, [ell[0] + 2.0]])
    sup_ext = np.concatenate([sups, [sups[0] / lam]])

    def f(s):
        s = np.asarray(s, float)
        k = np.floor(np.log(s) / (2.0 * np.log(lam)))
        tau = s / lam ** (2 * k)
        x = np.log(tau) / np.log(lam)
        if np.all(sup_ext > 0):
            return lam ** (-k) * np.exp(np.interp(x, ell_ext, np.log(sup_ext)))
        return lam ** (-k) * np.interp(x, ell_ext, sup_ext)
    return f


def drift_time_estimate(drift_a, e_norm, T=None, n=256, lam=None):
    """``int_0^T (T - s)^(-1/2) ||a(s)||_inf e_norm ds``.

    ``drift_a`` is a :class:`SpaceTimeCell` or a callable ``s -> ||a(s)||_inf``.
    The substitution ``s = T sin^2(theta)`` removes both endpoint
    singularities for drifts of Kato class (``||a(s)|| <= c / sqrt s``), for
    which the value is at most ``pi c e_norm``.
    """
    if drift_a is None:
        return 0.0
    if isinstance(drift_a, SpaceTimeCell):
        lam = drift_a.lam
        if not np.any(drift_a.samples):
            return 0.0
        g = _sup_at_time(drift_a)
    else:
        g = drift_a
    T = (lam ** 2 if lam else 1.0) if T is None else float(T)
    x, w = np.polynomial.legendre.leggauss(n)
    th = 0.25 * math.pi * (x + 1.0)
    w = 0.25 * math.pi * w
    s = T * np.sin(th) ** 2
    vals = 2.0 * math.sqrt(T) * np.sin(th) * np.asarray(g(s), float)
    return float(e_norm * np.sum(w * vals))


def drift_time_ratio(drift_a, e_norm, T=None):
    """Measured integral over ``||a||_K e_norm`` (equals pi for ``c / sqrt s``)."""
    k = kato_norm(drift_a, float("inf")).value
    if k == 0 or e_norm == 0:
        return 0.0
    return drift_time_estimate(drift_a, e_norm, T) / (k * e_norm)
