"""Discretely self-similar (DSS) fields: grids, fields, space-time cells.

A field ``u`` is lambda-DSS when ``u(x) = lambda * u(lambda * x)``; it is fixed
by its values on the fundamental annulus ``A0 = {1 <= |x| < lambda}``.  Fields
are sampled on a log-uniform radial grid times a product angular grid, and the
extension to all of R^3 minus the origin is by the scaling rule itself, so the
DSS identity holds to rounding error.

A space-time field obeys ``u(x, t) = lambda * u(lambda x, lambda^2 t)`` and is
sampled on the band ``1 <= t <= lambda^2`` over a radial shell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from . import _interp
from .errors import (ConvergenceError, IntegrabilityError, InvalidResolutionError,
                     InvalidScaleError, OutOfShellError, RegionError,
                     SingularPointError, DssError)
from .sphere import frame, lebedev, product_grid, product_shape, theta_extension


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GridSpec:
    """Sampling grid on the fundamental annulus.

    Attributes
    ----------
    lam : float
        Scale factor, strictly greater than one.
    radial_nodes : ndarray
        ``lam**(i/n)`` for ``i = 0..n-1``.
    thetas, phis : ndarray
        Product-grid polar (Gauss-Legendre in cos) and azimuthal (uniform) nodes.
    angular_nodes : ndarray, shape (n_theta*n_phi, 3)
    angular_weights : ndarray
        Positive quadrature weights summing to 4*pi.
    interp_order : int
        Degree of the local Lagrange interpolation in every direction.
    """

    lam: float
    radial_nodes: np.ndarray
    thetas: np.ndarray
    phis: np.ndarray
    angular_nodes: np.ndarray
    angular_weights: np.ndarray
    interp_order: int = 1

    @property
    def n_radial(self):
        return len(self.radial_nodes)

    @property
    def n_theta(self):
        return len(self.thetas)

    @property
    def n_phi(self):
        return len(self.phis)

    @property
    def n_angular(self):
        return len(self.angular_weights)

    @property
    def dr(self):
        """Spacing of the radial nodes in log r."""
        return math.log(self.lam) / self.n_radial

    def theta_tables(self):
        return theta_extension(self.thetas, self.interp_order + 1)

    def nodes(self):
        """All sample points of A0, shape (n_radial * n_angular, 3)."""
        return (self.radial_nodes[:, None, None] * self.angular_nodes[None]).reshape(-1, 3)

    def describe(self):
        return {"lambda": self.lam, "n_radial": self.n_radial,
                "n_angular": self.n_angular, "interp_order": self.interp_order}


def build_grid(lam, n_radial, n_angular, interp_order=1):
    """Grid with radii ``lam**(i/n_radial)`` and a product angular rule.

    >>> g = build_grid(2.0, 32, 96, 1)
    >>> g.n_theta, g.n_phi
    (6, 16)
    """
    lam = float(lam)
    if not np.isfinite(lam) or lam <= 1.0:
        raise InvalidScaleError(f"scale factor must exceed 1, got {lam}", field="lambda")
    n_radial, n_angular, interp_order = int(n_radial), int(n_angular), int(interp_order)
    if n_radial < 2 or n_angular < 2 or interp_order < 1:
        raise InvalidResolutionError("counts must be at least 2 and order at least 1",
                                     n_radial=n_radial, n_angular=n_angular)
    n_theta, n_phi = product_shape(n_angular)
    if interp_order + 1 > min(n_theta, n_phi) or interp_order > 7:
        raise InvalidResolutionError("interpolation order too high for the angular grid",
                                     interp_order=interp_order)
    thetas, phis, pts, w = product_grid(n_theta, n_phi)
    radial = lam ** (np.arange(n_radial) / n_radial)
    return GridSpec(lam, radial, thetas, phis, pts, w, interp_order)


def refine_grid(grid, factor=2):
    """The same grid with ``factor`` times more nodes in each direction count."""
    return build_grid(grid.lam, grid.n_radial * factor, grid.n_angular * factor ** 2,
                      grid.interp_order)


def reduce_to_annulus(points, lam):
    """Return ``(y, m)`` with ``y = lam**m * x`` and ``1 <= |y| < lam``."""
    x = np.atleast_2d(np.asarray(points, float))
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0):
        raise SingularPointError("DSS fields are not defined at the origin")
    m = -np.floor(np.log(r) / math.log(lam))
    scale = lam ** m
    rr = r * scale
    up = rr >= lam
    m[up] -= 1
    lo = rr < 1.0
    m[lo] += 1
    scale = lam ** m
    return x * scale[:, None], m


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DssField:
    """Samples of a lambda-DSS field on the fundamental annulus.

    ``samples`` has shape ``(n_radial, n_angular, n_components)``.  When an
    analytic ``profile`` (a vectorised map on points of A0) is attached,
    evaluation uses it; otherwise the grid interpolant is used.  Either way the
    extension off A0 is the exact scaling rule.
    """

    grid: GridSpec
    samples: np.ndarray
    roughness_tag: object = "inf"
    profile: Optional[Callable] = None
    divergence_free: bool = False
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.samples, float)
        if s.ndim == 2:
            s = s[..., None]
        if s.shape[:2] != (self.grid.n_radial, self.grid.n_angular):
            raise InvalidResolutionError("samples do not match the grid",
                                         shape=list(s.shape))
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        g = (s * self.grid.radial_nodes[:, None, None]).reshape(
            self.grid.n_radial, self.grid.n_theta, self.grid.n_phi, s.shape[2])
        object.__setattr__(self, "_g", np.ascontiguousarray(g))

    @property
    def lam(self):
        return self.grid.lam

    @property
    def n_components(self):
        return self.samples.shape[2]

    def grid_tuple(self):
        ext, idx, flip = self.grid.theta_tables()
        return (self._g, self.grid.dr, self.grid.n_radial, ext, idx, flip,
                self.grid.n_phi, self.grid.interp_order)

    def evaluate(self, points, use_profile=True):
        """Vectorised DSS evaluation at points (N, 3) -> (N, C)."""
        x = np.atleast_2d(np.asarray(points, float))
        if use_profile and self.profile is not None:
            y, m = reduce_to_annulus(x, self.lam)
            v = np.asarray(self.profile(y), float)
            if v.ndim == 1:
                v = v[:, None]
            return v * (self.lam ** m)[:, None]
        r = np.linalg.norm(x, axis=-1)
        if np.any(r == 0):
            raise SingularPointError("DSS fields are not defined at the origin")
        return _interp.eval_grid(np.ascontiguousarray(x), *self.grid_tuple())

    def interpolant(self):
        """The same samples without the analytic profile."""
        return DssField(self.grid, self.samples, self.roughness_tag, None,
                        self.divergence_free, dict(self.meta))

    def with_samples(self, samples, **kw):
        args = dict(grid=self.grid, samples=samples, roughness_tag=self.roughness_tag,
                    profile=None, divergence_free=self.divergence_free,
                    meta=dict(self.meta))
        args.update(kw)
        return DssField(**args)

    def __add__(self, other):
        return combine_fields([(1.0, self), (1.0, other)])

    def __sub__(self, other):
        return combine_fields([(1.0, self), (-1.0, other)])

    def __rmul__(self, c):
        return combine_fields([(float(c), self)])


def combine_fields(terms, divergence_free=None):
    """Linear combination of fields on a common grid, profiles included."""
    grid = terms[0][1].grid
    samples = sum(c * f.samples for c, f in terms)
    if all(f.profile is not None for _, f in terms):
        profs = [(c, f.profile) for c, f in terms]

        def profile(y):
            return sum(c * p(y) for c, p in profs)
    else:
        profile = None
    if divergence_free is None:
        divergence_free = all(f.divergence_free for _, f in terms)
    return DssField(grid, samples, terms[0][1].roughness_tag, profile, divergence_free)


def field_from_function(grid, func, roughness_tag="inf", divergence_free=False,
                        keep_profile=True, **meta):
    """Sample a vectorised function on A0 (its DSS extension is implied)."""
    pts = grid.nodes()
    vals = np.asarray(func(pts), float)
    if vals.ndim == 1:
        vals = vals[:, None]
    samples = vals.reshape(grid.n_radial, grid.n_angular, -1)
    return DssField(grid, samples, roughness_tag, func if keep_profile else None,
                    divergence_free, meta)


def dss_eval(field, x):
    """Evaluate a DSS field at ``x`` (a point or an array of points).

    >>> g = build_grid(2.0, 32, 96)
    >>> w = make_test_data("swirl", g)
    >>> np.round(dss_eval(w, [4.0, 0.0, 0.0]), 12)
    array([0.  , 0.25, 0.  ])
    """
    x = np.asarray(x, float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if np.any(np.linalg.norm(pts, axis=-1) == 0):
        raise SingularPointError("evaluation at x = 0")
    out = field.evaluate(pts)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# space-time cells
# ---------------------------------------------------------------------------

def default_time_nodes(lam, n_time):
    """Chebyshev-Lobatto points in log t across the band [1, lam^2]."""
    if n_time == 1:
        return np.array([1.0])
    ell = 1.0 - np.cos(np.pi * np.arange(n_time) / (n_time - 1))
    return lam ** ell


def shell_indices(grid, shell):
    n = grid.n_radial
    lo = int(math.floor(n * math.log(shell[0]) / math.log(grid.lam) + 1e-9))
    hi = int(math.ceil(n * math.log(shell[1]) / math.log(grid.lam) - 1e-9))
    return lo, hi


@dataclass(frozen=True, eq=False)
class SpaceTimeCell:
    """Samples of a DSS space-time field on the band over a radial shell.

    ``samples`` has shape ``(n_time, n_shell_radii, n_angular, C)``.  The
    optional ``far_field`` (a DSS data field times ``far_scale``) is the model
    used by the convolution kernels beyond the shell, and ``envelope`` is the
    decay envelope used for their tail estimates.
    """

    grid: GridSpec
    time_nodes: np.ndarray
    shell: tuple
    samples: np.ndarray
    envelope: object = None
    far_field: Optional[DssField] = None
    far_scale: float = 0.0
    label: str = ""
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        tn = np.asarray(self.time_nodes, float)
        lam = self.grid.lam
        if np.any(np.diff(tn) <= 0) or tn[0] < 1 - 1e-12 or tn[-1] > lam ** 2 * (1 + 1e-12):
            raise RegionError("time nodes must increase within [1, lambda^2]")
        r0, r1 = float(self.shell[0]), float(self.shell[1])
        if not (0 < r0 < r1):
            raise RegionError("shell must satisfy 0 < r_min < r_max")
        lo, hi = shell_indices(self.grid, (r0, r1))
        radii = lam ** (np.arange(lo, hi + 1) / self.grid.n_radial)
        s = np.asarray(self.samples, float)
        if s.ndim == 3:
            s = s[..., None]
        if s.shape[:3] != (len(tn), len(radii), self.grid.n_angular):
            raise InvalidResolutionError("samples do not match the cell layout",
                                         shape=list(s.shape))
        s.setflags(write=False)
        object.__setattr__(self, "time_nodes", tn)
        object.__setattr__(self, "shell", (radii[0], radii[-1]))
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "_radii", radii)
        object.__setattr__(self, "_ilo", lo)

    @property
    def lam(self):
        return self.grid.lam

    @property
    def radii(self):
        return self._radii

    @property
    def n_components(self):
        return self.samples.shape[3]

    def nodes(self):
        """Node points and times, flattened in (time, radius, angle) order."""
        pts = (self._radii[:, None, None] * self.grid.angular_nodes[None]).reshape(-1, 3)
        nt = len(self.time_nodes)
        P = np.tile(pts, (nt, 1))
        T = np.repeat(self.time_nodes, len(pts))
        return P, T

    def as_tuple(self):
        g = self.grid
        G = (self.samples * self._radii[None, :, None, None]).reshape(
            len(self.time_nodes), len(self._radii), g.n_theta, g.n_phi, -1)
        ext, idx, flip = g.theta_tables()
        ell = np.log(self.time_nodes) / math.log(g.lam)
        C = self.samples.shape[3]
        if self.far_field is not None and self.far_scale != 0.0:
            ft = self.far_field.grid_tuple()
            far = (ft[0], ft[1], ft[2], ft[3], ft[4], ft[5], ft[6], ft[7])
            fs = float(self.far_scale)
        else:
            far = (np.zeros((1, 2, 4, C)), 1.0, 1, ext, idx, flip, 4, 1)
            fs = 0.0
        env = self.envelope
        eC, ea, eb = (env.C, env.alpha, env.beta) if env is not None else (0.0, 0.0, 0.0)
        return (np.ascontiguousarray(G), ell, math.log(self._radii[0]), g.dr,
                len(self._radii), ext, idx, flip, g.n_phi, g.interp_order,
                far[0], far[1], far[2], far[3], far[4], far[5], far[6], far[7], fs,
                float(eC), float(ea), float(eb))

    def evaluate_extended(self, points, times):
        """Evaluation with inner clamp and far model; returns (values, status)."""
        P = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
        T = np.ascontiguousarray(np.broadcast_to(np.asarray(times, float), (len(P),)))
        return _interp.eval_cell(self.as_tuple(), math.log(self.lam), P, T)

    def replace(self, **kw):
        args = dict(grid=self.grid, time_nodes=self.time_nodes, shell=self.shell,
                    samples=self.samples, envelope=self.envelope,
                    far_field=self.far_field, far_scale=self.far_scale,
                    label=self.label, meta=dict(self.meta))
        args.update(kw)
        return SpaceTimeCell(**args)

    def combine(self, other, a=1.0, b=1.0, label=""):
        """``a*self + b*other`` on the same layout (envelope dropped)."""
        far = self.far_field if self.far_field is not None else other.far_field
        return self.replace(samples=a * self.samples + b * other.samples,
                            envelope=None, far_field=far,
                            far_scale=a * self.far_scale + b * other.far_scale,
                            label=label)

    def __add__(self, other):
        return self.combine(other)

    def __sub__(self, other):
        return self.combine(other, 1.0, -1.0)

    def scaled(self, c):
        return self.replace(samples=c * self.samples, envelope=None,
                            far_scale=c * self.far_scale)


def make_cell(grid, n_time, shell, func=None, samples=None, time_nodes=None, **kw):
    """Build a cell by sampling ``func(points, times) -> (N, C)`` at its nodes."""
    tn = default_time_nodes(grid.lam, n_time) if time_nodes is None else np.asarray(time_nodes)
    lo, hi = shell_indices(grid, shell)
    radii = grid.lam ** (np.arange(lo, hi + 1) / grid.n_radial)
    if samples is None:
        pts = (radii[:, None, None] * grid.angular_nodes[None]).reshape(-1, 3)
        P = np.tile(pts, (len(tn), 1))
        T = np.repeat(tn, len(pts))
        vals = np.asarray(func(P, T), float)
        if vals.ndim == 1:
            vals = vals[:, None]
        samples = vals.reshape(len(tn), len(radii), grid.n_angular, -1)
    return SpaceTimeCell(grid, tn, (radii[0], radii[-1]), samples, **kw)


def zero_cell_like(cell, components=None):
    C = cell.n_components if components is None else components
    shape = cell.samples.shape[:3] + (C,)
    return cell.replace(samples=np.zeros(shape), envelope=None, far_scale=0.0,
                        far_field=None)


def reduce_to_band(points, times, lam):
    """Return reduced points, times and the integer m used."""
    x = np.atleast_2d(np.asarray(points, float))
    t = np.broadcast_to(np.asarray(times, float), (len(x),))
    if np.any(t <= 0):
        raise RegionError("times must be positive")
    m = -np.floor(0.5 * np.log(t) / math.log(lam))
    tt = t * lam ** (2 * m)
    up = tt >= lam ** 2
    m[up] -= 1
    lo = tt < 1.0
    m[lo] += 1
    return x * (lam ** m)[:, None], t * lam ** (2 * m), m


def dss_eval_spacetime(cell, x, t):
    """Evaluate a DSS space-time cell at ``(x, t)``.

    The point is reduced to the band ``1 <= t < lambda^2``; reduced points
    outside the shell raise :class:`OutOfShellError` instead of extrapolating.
    """
    x = np.asarray(x, float)
    single = x.ndim == 1
    P = np.atleast_2d(x)
    T = np.broadcast_to(np.asarray(t, float), (len(P),))
    y, tt, m = reduce_to_band(P, T, cell.lam)
    r = np.linalg.norm(y, axis=-1)
    lo, hi = cell.shell
    bad = (r < lo * (1 - 1e-12)) | (r > hi * (1 + 1e-12))
    if np.any(bad):
        raise OutOfShellError("reduced point outside the shell",
                              shell=list(cell.shell), radius=float(r[bad][0]))
    vals, _ = cell.evaluate_extended(P, T)
    return vals[0] if single else vals


# ---------------------------------------------------------------------------
# test data
# ---------------------------------------------------------------------------

def _bump(s):
    """C^3 bump (1 - s^2)^4 on [0, 1) and its derivative."""
    inside = s < 1.0
    b = np.where(inside, (1.0 - s * s) ** 4, 0.0)
    db = np.where(inside, -8.0 * s * (1.0 - s * s) ** 3, 0.0)
    return b, db


def _swirl_profile(amplitude):
    def profile(y):
        r2 = np.sum(y * y, axis=-1)
        return amplitude * np.stack([-y[:, 1], y[:, 0], np.zeros(len(y))], axis=-1) / r2[:, None]
    return profile


def _spike_profile(amplitude, gamma, x_star, radius):
    """Curl of psi(|x - x*|) e with psi ~ rho^(1-gamma): |u| ~ rho^(-gamma)."""
    e = x_star / np.linalg.norm(x_star)

    def profile(y):
        z = y - x_star
        rho = np.linalg.norm(z, axis=-1)
        s = rho / radius
        b, db = _bump(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            dpsi = rho ** (-gamma) * b + rho ** (1.0 - gamma) * db / (radius * (1.0 - gamma))
            dirn = np.cross(z, e) / rho[:, None]
        out = amplitude * dpsi[:, None] * dirn
        out[rho == 0] = 0.0
        out[s >= 1.0] = 0.0
        return out
    return profile


def spike_core_profile(amplitude, gamma, x_star, radius, delta):
    """Curl of ``psi(rho) kappa(rho / delta) e``: the spike core cut at ``delta``.

    ``psi(rho) = rho^(1-gamma) b(rho / radius) / (1 - gamma)`` is the stream
    function of the spike and ``kappa`` a smooth step (1 on [0, 1/2], 0 from
    1 on).  Being a curl, the core is exactly divergence free, and the
    spike minus its core vanishes for ``rho < delta / 2``.
    """
    x_star = np.asarray(x_star, float)
    e = x_star / np.linalg.norm(x_star)

    def profile(y):
        z = np.atleast_2d(y) - x_star
        rho = np.linalg.norm(z, axis=-1)
        s = rho / radius
        b, db = _bump(s)
        u = np.clip(2.0 * (1.0 - rho / delta), 0.0, 1.0)
        kap = _smooth_step(u)
        dkap = -2.0 / delta * _smooth_step_derivative(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            psi = rho ** (1.0 - gamma) * b / (1.0 - gamma)
            dpsi = rho ** (-gamma) * b + rho ** (1.0 - gamma) * db / (radius * (1.0 - gamma))
            dirn = np.cross(z, e) / rho[:, None]
        out = amplitude * (dpsi * kap + psi * dkap)[:, None] * dirn
        out[(rho == 0) | (rho >= delta) | (s >= 1.0)] = 0.0
        return out
    return profile


def make_test_data(family, grid, amplitude=1.0, q=None, gamma=None, x_star=None,
                   radius=None, project=False, tol=1e-3):
    """Generate a divergence-free lambda-DSS test field.

    Families
    --------
    swirl
        ``amplitude * (-x2, x1, 0) / |x|^2`` (self-similar, bounded by 1/|x|).
    point_singular
        DSS copies of a swirling spike ``|x - x*|^(-gamma)`` around the ray
        through ``x*``, cut off smoothly at ``radius``; in L^q_loc iff
        ``gamma * q < 3``.
    mixed
        Sum of the two.

    Both building blocks are curls, so the data are solenoidal by
    construction; ``project=True`` additionally applies :func:`leray_project`.
    """
    lam = grid.lam
    if family not in ("swirl", "point_singular", "mixed"):
        raise DssError(f"unknown family {family!r}", field="family")
    parts = []
    tag = "inf"
    if family in ("swirl", "mixed"):
        parts.append(_swirl_profile(float(amplitude)))
    if family in ("point_singular", "mixed"):
        q = 6.0 if q is None else float(q)
        gamma = 0.9 * 3.0 / q if gamma is None else float(gamma)
        if gamma * q >= 3.0:
            raise IntegrabilityError(f"gamma*q = {gamma * q} >= 3: not in L^q_loc",
                                     gamma=gamma, q=q)
        if not 0 <= gamma < 1:
            raise IntegrabilityError("gamma must lie in [0, 1)", gamma=gamma)
        xs = np.array([(1.0 + lam) / 2.0, 0.0, 0.0]) if x_star is None else np.asarray(x_star, float)
        rs = np.linalg.norm(xs)
        gap = min(rs - 1.0, lam - rs)
        if gap <= 0:
            raise RegionError("x* must lie inside the fundamental annulus")
        radius = min(0.25, 0.5 * gap) if radius is None else float(radius)
        if radius >= gap:
            raise RegionError("spike cutoff reaches the annulus boundary")
        spike = _spike_profile(float(amplitude), gamma, xs, radius)
        parts.append(spike)
        tag = q

    def profile(y):
        return sum(p(y) for p in parts)

    meta = {"family": family, "amplitude": float(amplitude)}
    if family != "swirl":
        meta.update(gamma=gamma, x_star=xs.tolist(), radius=float(radius), q=q,
                    spike_profile=spike)
    fld = field_from_function(grid, profile, roughness_tag=tag, divergence_free=True, **meta)
    if project and amplitude != 0:
        fld = leray_project(fld, tol)
    return fld


# ---------------------------------------------------------------------------
# Leray projection
# ---------------------------------------------------------------------------

def _smooth_step(u):
    """C^3 polynomial step: 0 for u <= 0, 1 for u >= 1.

    A polynomial step is preferred over a C-infinity one here because its
    milder derivatives keep the partition-of-unity quadrature accurate.
    """
    u = np.clip(u, 0.0, 1.0)
    return u ** 4 * (35.0 - 84.0 * u + 70.0 * u * u - 20.0 * u ** 3)


def _smooth_step_derivative(u):
    u = np.clip(u, 0.0, 1.0)
    return 140.0 * u ** 3 * (1.0 - u) ** 3


def cutoff(s):
    """Radial cutoff equal to 1 on [0, 1/2] and 0 on [1, inf)."""
    return _smooth_step(2.0 * (1.0 - np.asarray(s, float)))


def _gl_panels(edges, n):
    x, w = np.polynomial.legendre.leggauss(n)
    edges = np.asarray(edges, float)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = 0.5 * (b - a) * x[None] + 0.5 * (a + b)
    weights = 0.5 * (b - a) * w[None]
    return nodes.ravel(), weights.ravel(), np.repeat(np.arange(len(edges) - 1), n)


@dataclass
class _LerayRule:
    near_r: np.ndarray
    near_w: np.ndarray
    near_dirs: np.ndarray
    near_dw: np.ndarray
    org_s: np.ndarray  # radii as fractions of |x|
    org_w: np.ndarray
    org_dirs: np.ndarray
    org_dw: np.ndarray
    far_s: np.ndarray  # radii in units of the near-ball radius
    far_w: np.ndarray
    far_panel: np.ndarray
    far_dirs: list
    far_dw: list


def _leray_contrib(u_at, x, rule, h):
    """PV integral (1/4pi) int (3 zz - I)/|z|^3 u(y) dy for one target x."""
    R = np.linalg.norm(x)
    ux = u_at(x[None])[0]
    total = np.zeros(3)
    # near ball: x-centred, subtract u(x) (the kernel has zero spherical mean)
    rho = rule.near_r * h
    wr = rule.near_w * h
    d = rule.near_dirs
    Y = x[None, None] + rho[:, None, None] * d[None]
    du = u_at(Y.reshape(-1, 3)).reshape(len(rho), len(d), 3) - ux
    eta = cutoff(rho / h)
    proj = np.einsum("ad,rad->ra", d, du)  # omega . du
    kern = 3.0 * d[None] * proj[..., None] - du
    total += np.einsum("r,a,rai->i", wr * eta / rho, rule.near_dw, kern)
    # origin patch: |y| < |x|/2
    h0 = 0.5 * R
    r = rule.org_s * h0
    wr = rule.org_w * h0
    Y = r[:, None, None] * rule.org_dirs[None]
    uy = u_at(Y.reshape(-1, 3)).reshape(len(r), len(rule.org_dirs), 3)
    Z = x[None, None] - Y
    zn = np.linalg.norm(Z, axis=-1)
    zh = Z / zn[..., None]
    proj = np.einsum("rai,rai->ra", zh, uy)
    kern = (3.0 * zh * proj[..., None] - uy) / zn[..., None] ** 3
    total += np.einsum("r,a,rai->i", wr * r * r * cutoff(r / h0), rule.org_dw, kern)
    # far part: x-centred shells from h/2 outward
    panel_sums = []
    for k, (dirs, dw) in enumerate(zip(rule.far_dirs, rule.far_dw)):
        sel = rule.far_panel == k
        rho = rule.far_s[sel] * h
        wr = rule.far_w[sel] * h
        Y = x[None, None] + rho[:, None, None] * dirs[None]
        uy = u_at(Y.reshape(-1, 3)).reshape(len(rho), len(dirs), 3)
        yn = np.linalg.norm(Y, axis=-1)
        wgt = (1.0 - cutoff(rho / h))[:, None] * (1.0 - cutoff(yn / h0))
        proj = np.einsum("ad,rad->ra", dirs, uy)
        # z = x - y = -rho*omega; (3 zz - I)/|z|^3 is even in omega
        kern = (3.0 * dirs[None] * proj[..., None] - uy) / rho[:, None, None] ** 3
        panel_sums.append(np.einsum("r,a,ra,rai->i", wr * rho * rho, dw, wgt, kern))
    panel_sums = np.array(panel_sums)
    total += panel_sums.sum(axis=0)
    # geometric tail beyond the last shell (each doubling halves the shell sum)
    tail = panel_sums[-1]
    total += tail
    return ux, total / (4.0 * np.pi), np.linalg.norm(tail) / (4.0 * np.pi)


def _leray_rule(lam, depth=16, n_gl=10):
    near_r, near_w, _ = _gl_panels([0, 1 / 16, 1 / 8, 1 / 4, 1 / 2, 1], n_gl)
    nd, ndw = lebedev(17)
    n_org = int(math.ceil(math.log(1e4) / math.log(lam)))
    edges = np.exp(-math.log(lam) * np.arange(n_org, -1, -1))
    org_s, org_w, _ = _gl_panels(np.concatenate([[0.0], edges]), n_gl)
    od, odw = lebedev(17)
    # far shells in units of h: [1/2, 1], [1, 2], [2, 4], ...
    fs, fw, fp = [], [], []
    dirs, dws = [], []
    lo = 0.5
    for k in range(depth):
        hi = 2.0 * lo
        s, w, _ = _gl_panels([lo, hi], n_gl if hi <= 16 else 5)
        fs.append(s); fw.append(w); fp.append(np.full(len(s), k))
        d, dw = lebedev(47 if hi <= 8 else 17)
        dirs.append(d); dws.append(dw)
        lo = hi
    return _LerayRule(near_r, near_w, nd, ndw, org_s, org_w, od, odw,
                      np.concatenate(fs), np.concatenate(fw), np.concatenate(fp),
                      dirs, dws)


def leray_project(field, tol=1e-3, depth=16):
    """Leray projection ``u - grad Lap^{-1} div u`` of a DSS vector field.

    Computed at every node of A0 from the principal-value representation
    ``P u = (2/3) u + (1/4 pi) PV int (3 zz - I)/|z|^3 u(x - z) dz`` split into
    a near ball ``|x - y| < 1/2`` (x-centred, odd cancellation by antipodal
    Lebedev nodes), an origin patch and dyadic far shells with a geometric
    tail.  The result carries samples only.
    """
    if field.n_components != 3:
        raise DssError("Leray projection needs a 3-vector field")
    if not np.any(field.samples) and field.profile is None:
        return field.with_samples(np.zeros_like(field.samples), divergence_free=True)
    rule = _leray_rule(field.lam, depth=depth)
    pts = field.grid.nodes()
    u_at = field.evaluate
    out = np.empty((len(pts), 3))
    tails = np.empty(len(pts))
    for i, x in enumerate(pts):
        ux, pv, tail = _leray_contrib(u_at, x, rule, 0.5)
        out[i] = (2.0 / 3.0) * ux + pv
        tails[i] = tail
    rn = np.linalg.norm(pts, axis=-1)
    scale = max(float(np.max(np.linalg.norm(field.samples, axis=-1) *
                             field.grid.radial_nodes[:, None])),
                float(np.max(np.linalg.norm(out, axis=-1) * rn)), 1e-300)
    worst = float(np.max(tails * np.linalg.norm(pts, axis=-1)))
    if worst > tol * scale:
        raise ConvergenceError("far-field tail exceeds the tolerance",
                               achieved=worst / scale, tol=tol)
    samples = out.reshape(field.samples.shape)
    res = field.with_samples(samples, divergence_free=True,
                             meta={"tail_estimate": worst / scale, "tol": tol})
    return res


# ---------------------------------------------------------------------------
# divergence
# ---------------------------------------------------------------------------

def _theta_derivative_matrix(thetas):
    """Rows: d/dtheta at the nodes from the periodic (double sphere) extension.

    The extended node set is invariant under theta -> theta + pi, so one of
    cos(n theta), sin(n theta) is degenerate on it; the better conditioned one
    completes the trigonometric basis.
    """
    n = len(thetas)
    nodes = np.concatenate([thetas, 2 * np.pi - thetas])
    ks = np.arange(n)
    ss = np.arange(1, n)
    best = None
    for top in (np.cos, np.sin):
        V = np.concatenate([np.cos(np.outer(nodes, ks)), np.sin(np.outer(nodes, ss)),
                            top(n * nodes)[:, None]], axis=1)
        c = np.linalg.cond(V)
        if best is None or c < best[0]:
            best = (c, V, top)
    _, V, top = best
    dtop = -n * np.sin(n * thetas) if top is np.cos else n * np.cos(n * thetas)
    dV = np.concatenate([-ks * np.sin(np.outer(thetas, ks)), ss * np.cos(np.outer(thetas, ss)),
                         dtop[:, None]], axis=1)
    return dV @ np.linalg.inv(V)


def spectral_divergence(field):
    """Divergence at the nodes of A0 from spectral derivatives of the samples."""
    g = field.grid
    G = field._g  # (nr, nth, nph, 3) = r u
    nr, nth, nph = g.n_radial, g.n_theta, g.n_phi
    kr = 2j * np.pi * np.fft.fftfreq(nr, d=1.0 / nr) / math.log(g.lam)
    if nr % 2 == 0:
        kr[nr // 2] = 0.0
    G_l = np.real(np.fft.ifft(kr[:, None, None, None] * np.fft.fft(G, axis=0), axis=0))
    kp = 1j * np.fft.fftfreq(nph, d=1.0 / nph)
    if nph % 2 == 0:
        kp[nph // 2] = 0.0
    G_p = np.real(np.fft.ifft(kp[None, None, :, None] * np.fft.fft(G, axis=2), axis=2))
    D = _theta_derivative_matrix(g.thetas)
    half = nph // 2
    G_t = np.empty_like(G)
    for k in range(nph):
        ext = np.concatenate([G[:, :, k], G[:, :, (k + half) % nph]], axis=1)
        G_t[:, :, k] = np.einsum("ij,rjc->ric", D, ext)
    th = g.thetas[:, None]
    ph = g.phis[None, :]
    st, ct, sp, cp = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
    rhat = np.stack([st * cp, st * sp, ct * np.ones_like(ph)], -1)
    that = np.stack([ct * cp, ct * sp, -st * np.ones_like(ph)], -1)
    phat = np.stack([-sp * np.ones_like(th), cp * np.ones_like(th), np.zeros((nth, nph))], -1)
    r = g.radial_nodes[:, None, None]
    # u = G / r: d_r u = (G_l - G)/r^2, d_theta u = G_t / r, d_phi u = G_p / r
    div = (np.einsum("tpi,rtpi->rtp", rhat, G_l - G) / r ** 2
           + np.einsum("tpi,rtpi->rtp", that, G_t) / r ** 2
           + np.einsum("tpi,rtpi->rtp", phat, G_p) / (r ** 2 * st[None]))
    return div.reshape(nr, -1)


def fd_divergence(field, points, rel_step=1e-3):
    """Fourth-order central differences of the field's evaluator."""
    P = np.atleast_2d(points)
    h = rel_step * np.linalg.norm(P, axis=-1)
    div = np.zeros(len(P))
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        f = [field.evaluate(P + c * h[:, None] * e)[:, i] for c in (-2, -1, 1, 2)]
        div += (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h)
    return div


def divergence_residual(field):
    """Sup over the nodes of A0 of |div u|.

    Analytic fields are differentiated by finite differences of the profile;
    sampled fields by spectral differentiation on the product grid.
    """
    if field.n_components != 3:
        raise DssError("divergence needs a 3-vector field")
    if not np.any(field.samples):
        return 0.0
    if field.profile is not None:
        div = fd_divergence(field, field.grid.nodes())
    else:
        div = spectral_divergence(field)
    return float(np.max(np.abs(div)))
