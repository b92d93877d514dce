import numpy as np
import pytest
from hypothesis import given, strategies as st

from dssflow.dss_core import make_test_data
from dssflow.errors import InvalidExponentError
from dssflow.mildsolve import evolve_data
from dssflow.norms import weak_lp_quasinorm
from dssflow.splitting import chi, chi_R, split_data, split_heat, split_picard


@pytest.fixture(scope="module")
def data_split(spike6):
    return split_data(spike6, 0.1)


def test_data_split_certificates(spike6, data_split):
    c = data_split.certificates
    assert c["achieved"] < 0.1
    # measured independently of the certificate
    assert weak_lp_quasinorm(data_split.small_part, 3) < 0.1
    assert np.isfinite(c["C_bounded"]) and c["C_bounded"] > 0
    assert data_split.reconstruction_residual(spike6) < 1e-6


def test_data_split_bounded_part_decays(data_split):
    b0 = data_split.bounded_part
    r = b0.grid.radial_nodes[:, None]
    assert np.max(np.linalg.norm(b0.samples, axis=-1) * r) <= data_split.certificates["C_bounded"]


def test_data_split_degenerate(swirl):
    sp = split_data(swirl, 10.0)
    assert sp.certificates["degenerate"]
    assert sp.small_part is swirl and not np.any(sp.bounded_part.samples)


def test_data_split_zero(grid):
    z = make_test_data("point_singular", grid, amplitude=0.0)
    sp = split_data(z, 0.1)
    assert not np.any(sp.small_part.samples) and not np.any(sp.bounded_part.samples)


def test_data_split_mode_checks(swirl):
    with pytest.raises(InvalidExponentError):
        split_data(swirl, 0.1, mode="other")
    with pytest.raises(InvalidExponentError):
        split_data(swirl, 0.1, mode="Besov", p=2)


def test_data_split_monotone(spike6):
    Cs = [split_data(spike6, e).certificates["C_bounded"] for e in (0.2, 0.1, 0.05)]
    assert Cs[0] <= Cs[1] <= Cs[2]


# -- cutoff ----------------------------------------------------------------------------

def test_chi_profile():
    s = np.linspace(0, 3, 301)
    c = chi(s)
    assert np.all(c[s <= 1] == 1.0) and np.all(c[s >= 2] == 0.0)
    assert np.all(np.diff(c) <= 0)


@given(st.floats(0, 5))
def test_chi_range(s):
    assert 0.0 <= chi(s) <= 1.0


# -- heat and Picard splits ------------------------------------------------------------

@pytest.fixture(scope="module")
def heat_pair(spike6, tiny_spec, data_split):
    return split_heat(spike6, 6, 0.1, cell_spec=tiny_spec, data_split=data_split)


def test_heat_split_additive(spike6, tiny_spec, heat_pair):
    full = evolve_data(spike6, tiny_spec)
    s = heat_pair.small_part.samples + heat_pair.bounded_part.samples
    assert np.max(np.abs(s - full.samples)) <= 5e-3 * np.max(np.abs(full.samples))


def test_heat_split_certificate(heat_pair):
    c = heat_pair.certificates
    assert c["small_ok"] and c["C_small"] <= 0.1
    assert np.isfinite(c["C_bounded"])


def test_heat_split_zero(grid, tiny_spec):
    z = make_test_data("point_singular", grid, amplitude=0.0)
    hp = split_heat(z, 6, 0.1, cell_spec=tiny_spec)
    assert not np.any(hp.small_part.samples) and not np.any(hp.bounded_part.samples)


def test_picard_split_k0_is_heat(spike6, tiny_spec, heat_pair):
    pair, diff, hist = split_picard(spike6, 6, 0.1, 0, cell_spec=tiny_spec, heat_split=heat_pair)
    assert diff is None and hist == []
    assert pair.small_part is heat_pair.small_part


def test_picard_split_k1(spike6, tiny_spec, heat_pair):
    pair, diff, hist = split_picard(spike6, 6, 0.1, 1, R_cut=1.0, cell_spec=tiny_spec,
                                    heat_split=heat_pair)
    P0 = heat_pair.small_part.combine(heat_pair.bounded_part)
    from dssflow.kernels import bilinear_B
    from dssflow.picard import _work_envelope
    P0 = P0.replace(envelope=_work_envelope(P0))
    P, T = P0.nodes()
    P1 = P0.samples.reshape(-1, 3) + bilinear_B(P0, P0, P, T)
    recon = (pair.small_part.samples + pair.bounded_part.samples).reshape(-1, 3)
    assert np.max(np.abs(recon - P1)) <= 5e-2 * np.max(np.abs(P1 - P0.samples.reshape(-1, 3)))
    assert hist[0]["small_ok"]
    assert diff.certificates["a_k"] == 1.0 and diff.certificates["b_k"] == 1.0
    assert np.isfinite(diff.certificates["C_small"]) and np.isfinite(diff.certificates["C_bounded"])
