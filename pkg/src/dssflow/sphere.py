"""Quadrature rules and frames on the unit sphere."""

from functools import lru_cache

import numpy as np
from scipy.integrate import lebedev_rule

from .errors import InvalidResolutionError


def product_shape(n_angular):
    """Split ``n_angular`` into ``(n_theta, n_phi)`` for the product grid.

    ``n_theta`` is the largest divisor not exceeding ``sqrt(n/2)`` that leaves an
    even ``n_phi`` (an even count makes the grid antipodally symmetric).
    """
    n = int(n_angular)
    best = 0
    for d in range(1, int(np.sqrt(n / 2.0)) + 1):
        if n % d == 0 and (n // d) % 2 == 0:
            best = d
    if best < 2 or n // best < 4:
        raise InvalidResolutionError(
            f"n_angular={n} is too small for a product grid", n_angular=n)
    return best, n // best


def product_grid(n_theta, n_phi):
    """Gauss-Legendre in cos(theta) times uniform phi.

    Returns thetas (ascending), phis, unit vectors (n_theta*n_phi, 3) in
    theta-major order and positive weights summing to 4*pi.
    """
    mu, wmu = np.polynomial.legendre.leggauss(n_theta)
    order = np.argsort(-mu)  # ascending theta
    mu, wmu = mu[order], wmu[order]
    thetas = np.arccos(mu)
    phis = 2.0 * np.pi * np.arange(n_phi) / n_phi
    st = np.sqrt(1.0 - mu**2)
    pts = np.stack([
        np.outer(st, np.cos(phis)),
        np.outer(st, np.sin(phis)),
        np.outer(mu, np.ones(n_phi)),
    ], axis=-1).reshape(-1, 3)
    w = np.outer(wmu, np.full(n_phi, 2.0 * np.pi / n_phi)).ravel()
    return thetas, phis, pts, w


def theta_extension(thetas, pad):
    """Theta nodes continued across both poles for local stencils.

    Returns (theta_ext, source_index, flip) where ``flip = 1`` means the value
    is read at azimuth ``phi + pi``.
    """
    n = len(thetas)
    pad = min(pad, n)
    lo = -thetas[:pad][::-1]
    hi = 2.0 * np.pi - thetas[n - pad:][::-1]
    ext = np.concatenate([lo, thetas, hi])
    idx = np.concatenate([np.arange(pad)[::-1], np.arange(n),
                          np.arange(n - pad, n)[::-1]]).astype(np.int64)
    flip = np.concatenate([np.ones(pad), np.zeros(n), np.ones(pad)]).astype(np.int64)
    return ext, idx, flip


_LEBEDEV_ORDERS = (3, 5, 7, 9, 11, 13, 15, 17, 19, 21, 23, 25, 27, 29, 31, 35,
                   41, 47, 53, 59, 65, 71, 77, 83, 89, 95, 101, 107, 113, 119,
                   125, 131)


@lru_cache(maxsize=None)
def lebedev(order):
    """Lebedev rule of at least the requested polynomial degree."""
    for o in _LEBEDEV_ORDERS:
        if o >= order:
            x, w = lebedev_rule(o)
            return np.ascontiguousarray(x.T), np.ascontiguousarray(w)
    raise InvalidResolutionError(f"no Lebedev rule of degree {order}")


def frame(axis):
    """Orthonormal (e1, e2, e3) with e3 along ``axis``."""
    a = np.asarray(axis, float)
    n = np.linalg.norm(a)
    e3 = a / n if n > 0 else np.array([0.0, 0.0, 1.0])
    helper = np.array([1.0, 0.0, 0.0]) if abs(e3[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = helper - e3 * (helper @ e3)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(e3, e1)
    return e1, e2, e3
