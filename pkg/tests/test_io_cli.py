import json
import math

import numpy as np
import pytest
import yaml

from dssflow import __version__
from dssflow import io as dio
from dssflow.cli import DEFAULTS, main, resolve_config
from dssflow.dss_core import build_grid, make_cell, make_test_data
from dssflow.errors import ConfigError

SMALL = {"grid": {"n_radial": 8, "n_angular": 24, "interp_order": 1}}


def write_cfg(tmp_path, cfg, name="run.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return str(p)


# -- containers ------------------------------------------------------------------------

def test_field_round_trip(tmp_path, spike6):
    dio.save_field(tmp_path / "f.npz", spike6)
    g = dio.load(tmp_path / "f.npz")
    np.testing.assert_array_equal(g.samples, spike6.samples)
    assert g.lam == spike6.lam and g.roughness_tag == spike6.roughness_tag
    x = np.array([[2.3, -0.4, 0.9]])
    np.testing.assert_allclose(g.evaluate(x), spike6.with_samples(spike6.samples,
                                                                  profile=None).evaluate(x))


def test_cell_round_trip(tmp_path):
    g = build_grid(2.0, 8, 24, 1)
    c = make_cell(g, 3, (1.0, 4.0), func=lambda P, T: P / (np.sum(P * P, -1) + T)[:, None])
    dio.save_cell(tmp_path / "c.npz", c)
    d = dio.load(tmp_path / "c.npz")
    np.testing.assert_array_equal(d.samples, c.samples)
    np.testing.assert_array_equal(d.time_nodes, c.time_nodes)
    assert tuple(d.shell) == tuple(c.shell)


def test_container_bytes_deterministic(tmp_path, swirl):
    dio.save_field(tmp_path / "a.npz", swirl)
    dio.save_field(tmp_path / "b.npz", swirl)
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()


def test_plain_json_non_finite():
    s = dio.dumps({"b": math.inf, "a": [np.float64("nan"), np.int64(3), np.bool_(True)]})
    assert json.loads(s) == {"a": ["nan", 3, True], "b": "inf"}
    assert s.index('"a"') < s.index('"b"')


def test_csv_and_plot_data(tmp_path):
    dio.write_csv(tmp_path / "t.csv", ["x", "y"], [(0.1, None), (2, "z")])
    assert (tmp_path / "t.csv").read_text() == "x,y\n0.1,\n2,z\n"
    dio.write_plot_data(tmp_path / "p.dat", [1, 2], [0.5, 0.25], "r s")
    assert (tmp_path / "p.dat").read_text() == "# r s\n1.0 0.5\n2.0 0.25\n"


# -- config --------------------------------------------------------------------------

def test_defaults_resolve():
    cfg = resolve_config({})
    assert cfg["lambda"] == 2.0 and cfg["mildsolve"]["p"] == math.inf
    assert DEFAULTS["mildsolve"]["p"] == "inf"


@pytest.mark.parametrize("raw, field", [
    ({"lambda": 0.5}, "lambda"),
    ({"lambda": "two"}, "lambda"),
    ({"data": {"family": "vortex"}}, "data.family"),
    ({"q": 2}, "q"),
    ({"cell": {"shell": [4.0, 1.0]}}, "cell.shell"),
    ({"epsilon": [0.1, -1]}, "epsilon"),
    ({"bogus": 1}, "bogus"),
])
def test_config_validation(raw, field):
    with pytest.raises(ConfigError) as ei:
        resolve_config(raw)
    assert ei.value.details["field"] == field


# -- runner --------------------------------------------------------------------------

def test_cli_validation_exit(tmp_path):
    out = tmp_path / "out"
    code = main(["gen-data", "--config", write_cfg(tmp_path, {"lambda": 0.5}), "--out", str(out)])
    assert code == 2
    man = json.loads((out / "error.json").read_text())
    assert man["exit_code"] == 2 and man["error"]["field"] == "lambda"
    assert man["version"] == __version__ and man["partial_outputs"] == []


def test_cli_unparsable_config(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("lambda: [1,\n")
    assert main(["gen-data", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_cli_gen_data_deterministic(tmp_path):
    cfg = write_cfg(tmp_path, {**SMALL, "data": {"family": "point_singular", "q": 6}})
    outs = [tmp_path / "a", tmp_path / "b"]
    for o in outs:
        assert main(["gen-data", "--config", cfg, "--out", str(o), "--seed", "5"]) == 0
    names = sorted(p.name for p in outs[0].iterdir())
    assert names == ["data.npz", "profile.dat", "report.json"]
    for n in names:
        assert (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes()
    rep = json.loads((outs[0] / "report.json").read_text())
    assert rep["version"] == __version__ and rep["seed"] == 5
    assert rep["config"]["data"]["q"] == 6.0 and rep["config"]["lambda"] == 2.0
    assert rep["results"]["l3w_dss_bounds"]["pass2"]


def test_cli_evolve_seeded(tmp_path):
    cfg = write_cfg(tmp_path, {**SMALL, "evolve": {"n_points": 4}})
    for o, s in (("a", "1"), ("b", "1"), ("c", "2")):
        assert main(["evolve", "--config", cfg, "--out", str(tmp_path / o), "--seed", s]) == 0
    a, b, c = ((tmp_path / o / "evolve.csv").read_bytes() for o in "abc")
    assert a == b and a != c


def test_cli_pipeline_error_manifest(tmp_path):
    # large data: the solver refuses, the refusal report survives as a partial output
    cfg = write_cfg(tmp_path, {**SMALL, "data": {"amplitude": 100.0}})
    out = tmp_path / "m"
    assert main(["mildsolve", "--config", cfg, "--out", str(out)]) == 4
    man = json.loads((out / "error.json").read_text())
    assert man["error"]["error"] == "PreconditionError"
    assert man["partial_outputs"] == ["report.json"]
    rep = json.loads((out / "report.json").read_text())
    assert rep["status"] == "refused" and rep["results"]["certificate"]["refused"]
