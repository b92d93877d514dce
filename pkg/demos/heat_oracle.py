"""Evolve 1/|x| by the heat semigroup and compare with erf(R/2 sqrt t)/R.

Run with ``python demos/heat_oracle.py``; takes about a minute on one core.
"""

import numpy as np
from scipy.special import erf

from dssflow.dss_core import build_grid, field_from_function
from dssflow.kernels import heat_evolve


def main(n=40, seed=0):
    grid = build_grid(2.0, 16, 96, 3)
    f = field_from_function(grid, lambda y: 1.0 / np.linalg.norm(y, axis=-1))
    rng = np.random.default_rng(seed)
    t = 4.0 ** rng.random(n)
    r = 16.0 ** rng.random(n) * np.sqrt(t)
    x = np.zeros((n, 3))
    x[:, 0] = r
    v = heat_evolve(f, x, t)[:, 0]
    exact = erf(r / (2 * np.sqrt(t))) / r
    print(f"{'|x|':>8} {'t':>6} {'computed':>12} {'exact':>12} {'rel err':>9}")
    for ri, ti, vi, ei in zip(r, t, v, exact):
        print(f"{ri:8.3f} {ti:6.3f} {vi:12.6e} {ei:12.6e} {abs(vi - ei) / ei:9.1e}")


if __name__ == "__main__":
    main()
