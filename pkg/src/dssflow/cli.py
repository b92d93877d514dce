"""``dss``: config-driven scenario runner.

    dss <command> --config run.yaml [--out DIR] [--threads N] [--seed S]

Commands: gen-data, evolve, picard, split, verify, oracle, mildsolve.  Each
run writes ``report.json`` (the resolved config, toolkit version and
results), CSV tables and two-column plot data into ``--out``.  On failure an
``error.json`` manifest lists the error and the files written so far.

Exit codes: 0 ok, 2 validation, 3 numerical convergence, 4 certificate.
The default thread count comes from the ``DSS_THREADS`` environment variable.
"""

from __future__ import annotations

import argparse
import copy
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import io as dio
from .errors import ConfigError, DssError

log = logging.getLogger("dssflow")

COMMANDS = ("gen-data", "evolve", "picard", "split", "verify", "oracle", "mildsolve")

DEFAULTS = {
    "lambda": 2.0,
    "data": {"family": "swirl", "amplitude": 1.0, "q": None, "gamma": None, "project": False},
    "grid": {"n_radial": 16, "n_angular": 96, "interp_order": 3},
    "cell": {"n_radial": 2, "n_angular": 24, "interp_order": 1, "n_time": 2,
             "shell": [1.0, 16.0]},
    "quadrature": {"level": 0, "rel_tol": 1e-3, "tail_fraction": 0.1},
    "q": None,
    "k_max": 3,
    "zero_tol": 1e-4,
    "R0": 2.0,
    "r_list": None,
    "epsilon": [0.2, 0.1, 0.05],
    "split": {"mode": "L3w", "p": None, "heat": False},
    "evolve": {"n_points": 16},
    "oracle": {"kind": "heat", "n_points": 200, "a": 4.0, "b": 2.0,
               "radii": [4.0, 8.0, 16.0, 32.0, 64.0],
               "pairs": [[1.0, 0.0], [2.0, 0.5], [3.0, 1.0]], "times": [1.0, 4.0]},
    "mildsolve": {"p": "inf", "tol": 1e-6, "max_iter": 20, "drift_fraction": 0.0,
                  "cell": {"n_radial": 2, "n_angular": 24, "interp_order": 1, "n_time": 2,
                           "shell": [1.0, 4.0]}},
}


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _exponent(v, name, allow_none=True):
    if v is None and allow_none:
        return None
    if isinstance(v, str) and v.strip().lower() in ("inf", "infinity", ".inf"):
        return math.inf
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number or 'inf'", field=name, value=v) from None


def _require(cond, name, msg, value):
    if not cond:
        raise ConfigError(f"{name}: {msg}", field=name, value=value)


def _posint(d, key, prefix):
    v = d.get(key)
    _require(isinstance(v, int) and not isinstance(v, bool) and v > 0,
             f"{prefix}.{key}", "must be a positive integer", v)


def resolve_config(raw):
    """Merge ``raw`` over the defaults and validate; raises :class:`ConfigError`."""
    if raw is None:
        raw = {}
    _require(isinstance(raw, dict), "config", "must be a mapping", type(raw).__name__)
    unknown = sorted(set(raw) - set(DEFAULTS))
    _require(not unknown, unknown[0] if unknown else "config", "unknown key", None)
    cfg = _merge(DEFAULTS, raw)
    lam = cfg["lambda"]
    _require(isinstance(lam, (int, float)) and not isinstance(lam, bool) and lam > 1,
             "lambda", "must be a number > 1", lam)
    cfg["lambda"] = float(lam)
    d = cfg["data"]
    _require(d["family"] in ("swirl", "point_singular", "mixed"), "data.family",
             "must be swirl, point_singular or mixed", d["family"])
    _require(isinstance(d["amplitude"], (int, float)), "data.amplitude", "must be a number",
             d["amplitude"])
    dq = _exponent(d["q"], "data.q")
    _require(dq is None or dq > 3, "data.q", "must exceed 3", d["q"])
    d["q"] = dq
    for key in ("n_radial", "n_angular", "interp_order"):
        _posint(cfg["grid"], key, "grid")
    for section in (cfg["cell"], cfg["mildsolve"]["cell"]):
        for key in ("n_radial", "n_angular", "interp_order", "n_time"):
            _posint(section, key, "cell")
        sh = section["shell"]
        _require(isinstance(sh, (list, tuple)) and len(sh) == 2 and 0 < sh[0] < sh[1],
                 "cell.shell", "must be [r_min, r_max] with 0 < r_min < r_max", sh)
        section["shell"] = [float(sh[0]), float(sh[1])]
    qd = cfg["quadrature"]
    _require(isinstance(qd["level"], int) and qd["level"] >= 0, "quadrature.level",
             "must be a non-negative integer", qd["level"])
    _require(qd["rel_tol"] > 0, "quadrature.rel_tol", "must be positive", qd["rel_tol"])
    _require(qd["tail_fraction"] > 0, "quadrature.tail_fraction", "must be positive",
             qd["tail_fraction"])
    q = _exponent(cfg["q"], "q")
    _require(q is None or q > 3, "q", "must exceed 3", cfg["q"])
    cfg["q"] = q
    _require(isinstance(cfg["k_max"], int) and cfg["k_max"] >= 0, "k_max",
             "must be a non-negative integer", cfg["k_max"])
    eps = cfg["epsilon"]
    eps = [eps] if isinstance(eps, (int, float)) else eps
    _require(isinstance(eps, list) and eps and all(isinstance(e, (int, float)) and e > 0
                                                  for e in eps),
             "epsilon", "must be a positive number or a list of them", cfg["epsilon"])
    cfg["epsilon"] = [float(e) for e in eps]
    if cfg["r_list"] is not None:
        r = cfg["r_list"]
        _require(isinstance(r, list) and len(r) >= 2 and all(b > a > 0 for a, b in zip(r, r[1:])),
                 "r_list", "must be an increasing list of positive radii", r)
    sp = cfg["split"]
    _require(sp["mode"] in ("L3w", "Besov"), "split.mode", "must be L3w or Besov", sp["mode"])
    if sp["mode"] == "Besov":
        p = _exponent(sp["p"], "split.p", allow_none=False)
        _require(3 < p < math.inf, "split.p", "Besov mode needs 3 < p < inf", sp["p"])
        sp["p"] = p
    _posint(cfg["evolve"], "n_points", "evolve")
    o = cfg["oracle"]
    _require(o["kind"] in ("heat", "lemma28", "tsai"), "oracle.kind",
             "must be heat, lemma28 or tsai", o["kind"])
    _posint(o, "n_points", "oracle")
    m = cfg["mildsolve"]
    mp = _exponent(m["p"], "mildsolve.p", allow_none=False)
    _require(mp > 3, "mildsolve.p", "must exceed 3", m["p"])
    m["p"] = mp
    _require(m["tol"] > 0, "mildsolve.tol", "must be positive", m["tol"])
    _require(m["drift_fraction"] >= 0, "mildsolve.drift_fraction", "must be >= 0",
             m["drift_fraction"])
    _posint(m, "max_iter", "mildsolve")
    return cfg


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}", field="config", value=str(path)) from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"config does not parse: {e}", field="config", value=str(path)) from None
    return resolve_config(raw)


# ---------------------------------------------------------------------------
# pipeline helpers
# ---------------------------------------------------------------------------

class Run:
    """Output directory with a record of every file written."""

    def __init__(self, out, command, cfg, seed):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.cfg = cfg
        self.seed = seed
        self.written = []
        self.rng = np.random.default_rng(seed)

    def path(self, name):
        self.written.append(name)
        return self.out / name

    def header(self):
        return {"command": self.command, "config": self.cfg, "seed": self.seed,
                "version": __version__}

    def report(self, results, status="ok"):
        dio.write_json(self.path("report.json"), {**self.header(), "status": status,
                                                  "results": results})


def _qcfg(cfg):
    from .kernels import QuadratureConfig
    q = cfg["quadrature"]
    return QuadratureConfig(rel_tol=q["rel_tol"], tail_fraction=q["tail_fraction"],
                            level=q["level"])


def _cell_spec(c):
    from .picard import CellSpec
    return CellSpec(c["n_radial"], c["n_angular"], c["interp_order"], c["n_time"],
                    tuple(c["shell"]))


def _data(cfg, amplitude=None):
    from .dss_core import build_grid, make_test_data
    g, d = cfg["grid"], cfg["data"]
    grid = build_grid(cfg["lambda"], g["n_radial"], g["n_angular"], g["interp_order"])
    amp = d["amplitude"] if amplitude is None else amplitude
    return make_test_data(d["family"], grid, amplitude=amp, q=d["q"], gamma=d["gamma"],
                          project=bool(d["project"]))


def _q(cfg, u0=None):
    if cfg["q"] is not None:
        return cfg["q"]
    if cfg["data"]["q"] is not None:
        return cfg["data"]["q"]
    return math.inf


def _band_points(rng, n, lam, shell):
    """Random (x, t) with t in [1, lam^2) and |x| / sqrt t in the shell."""
    t = lam ** (2.0 * rng.random(n))
    r = shell[0] * (shell[1] / shell[0]) ** rng.random(n) * np.sqrt(t)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    return r[:, None] * v, t


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(run):
    from .dss_core import divergence_residual
    from .norms import l3w_dss_bounds, lq_annulus, weak_lp_quasinorm
    cfg = run.cfg
    u0 = _data(cfg)
    dio.save_field(run.path("data.npz"), u0)
    g = u0.grid
    r = g.radial_nodes
    prof = np.max(np.linalg.norm(u0.samples, axis=-1), axis=1) * r
    dio.write_plot_data(run.path("profile.dat"), r, prof, "r  max_angle |x||u0|")
    res = {"weak_L3": weak_lp_quasinorm(u0, 3), "divergence_residual": divergence_residual(u0),
           "l3w_dss_bounds": l3w_dss_bounds(u0).to_dict(),
           "sup_x_u": float(prof.max(initial=0.0))}
    q = cfg["data"]["q"]
    if q is not None and math.isfinite(q):
        res["Lq_A0"] = lq_annulus(u0, q)
    run.report(res)
    return 0


def cmd_evolve(run):
    from .kernels import heat_evolve
    cfg = run.cfg
    u0 = _data(cfg)
    lam = u0.lam
    P, T = _band_points(run.rng, cfg["evolve"]["n_points"], lam, cfg["cell"]["shell"])
    qc = _qcfg(cfg)
    v = heat_evolve(u0, P, T, qc)
    vs = heat_evolve(u0, lam * P, lam ** 2 * T, qc)
    scale = np.maximum(np.linalg.norm(v, axis=-1), qc.abs_tol)
    closure = np.linalg.norm(v - lam * vs, axis=-1) / scale
    dio.write_csv(run.path("evolve.csv"), ["x", "y", "z", "t", "u1", "u2", "u3", "closure"],
                  [(*p, t, *u, c) for p, t, u, c in zip(P, T, v, closure)])
    ok = bool(closure.max() <= qc.rel_tol)
    run.report({"n_points": len(P), "closure_max": float(closure.max()),
                "closure_ok": ok, "sup_u": float(np.max(np.linalg.norm(v, axis=-1)))},
               "ok" if ok else "certificate-failure")
    return 0 if ok else 4


def _iterates(run, u0):
    from .picard import picard_iterates
    cfg = run.cfg
    return picard_iterates(u0, cfg["k_max"], _cell_spec(cfg["cell"]), _qcfg(cfg),
                           zero_tol=cfg["zero_tol"])


def cmd_picard(run):
    from .picard import envelope_fit, exponent_table, fit_slope, predicted_increment_exponent
    cfg = run.cfg
    u0 = _data(cfg)
    q = _q(cfg)
    seq = _iterates(run, u0)
    table = exponent_table(q, cfg["k_max"], "thm12")
    rows = []
    for k in range(seq.K):
        D = seq.increment(k)
        slope = fit_slope(D, cfg["R0"], 1.0) if np.any(D.samples) else None
        a = table[min(k, len(table) - 1)]["a_k"]
        env = envelope_fit(D, a - 1.0, a, cfg["R0"]) if np.any(D.samples) else None
        rows.append({"k": k, "slope_t1": slope,
                     "predicted_exponent": predicted_increment_exponent(q, k),
                     "C": None if env is None else env.C,
                     "sup": float(np.max(np.abs(D.samples), initial=0.0))})
    dio.write_csv(run.path("increments.csv"), ["k", "slope_t1", "predicted_exponent", "C", "sup"],
                  [(r["k"], r["slope_t1"], r["predicted_exponent"], r["C"], r["sup"])
                   for r in rows])
    dio.save_cell(run.path("iterate_K.npz"), seq.iterates[-1])
    run.report({"q": q, "exponents": table, "increments": rows, "meta": seq.meta})
    return 0


def cmd_verify(run):
    from .picard import verify_decay
    cfg = run.cfg
    u0 = _data(cfg)
    seq = _iterates(run, u0)
    rep = verify_decay(seq, R0=cfg["R0"], r_list=cfg["r_list"], strict=False)
    dio.write_csv(run.path("envelope.csv"), ["section", "k", "alpha", "beta", "C", "slope", "stable"],
                  rep.envelope_rows())
    lo = rep.sections.get("littleo_u")
    if lo is not None:
        dio.write_plot_data(run.path("littleo.dat"), lo["r"], lo["s"], "r  s(r)")
    run.report(rep.to_dict(), "ok" if rep.ok else "certificate-failure")
    return 0 if rep.ok else 4


def cmd_split(run):
    from .splitting import split_data, split_heat
    cfg = run.cfg
    u0 = _data(cfg)
    sp = cfg["split"]
    rows, certs = [], []
    for eps in cfg["epsilon"]:
        pair = split_data(u0, eps, mode=sp["mode"], p=sp["p"])
        c = dict(pair.certificates)
        c["reconstruction_residual"] = pair.reconstruction_residual(u0)
        certs.append(c)
        rows.append((eps, c["achieved"], c["C_bounded"], c["rounds"],
                     c["reconstruction_residual"]))
    dio.write_csv(run.path("split.csv"), ["epsilon", "achieved", "C_bounded", "rounds",
                                          "residual"], rows)
    res = {"splits": certs}
    Cs = [c["C_bounded"] for c in certs]
    order = np.argsort([-e for e in cfg["epsilon"]])
    res["C_bounded_monotone"] = bool(np.all(np.diff(np.asarray(Cs)[order]) >= 0))
    if sp["heat"]:
        q = _q(cfg)
        hs = split_heat(u0, q, cfg["epsilon"][0], _qcfg(cfg), _cell_spec(cfg["cell"]))
        res["heat"] = hs.certificates
    ok = res["C_bounded_monotone"] and all(c["achieved"] < c["epsilon"] for c in certs)
    run.report(res, "ok" if ok else "certificate-failure")
    return 0 if ok else 4


def cmd_oracle(run):
    from .dss_core import build_grid, field_from_function
    from .kernels import heat_evolve, lemma28_oracle, loglog_slope, tsai_model_comparison, \
        tsai_phi_oracle
    from scipy.special import erf
    cfg = run.cfg
    o = cfg["oracle"]
    lam = cfg["lambda"]
    if o["kind"] == "heat":
        g = cfg["grid"]
        grid = build_grid(lam, g["n_radial"], g["n_angular"], g["interp_order"])
        f = field_from_function(grid, lambda y: 1.0 / np.linalg.norm(y, axis=-1))
        P, T = _band_points(run.rng, o["n_points"], lam, cfg["cell"]["shell"])
        v = heat_evolve(f, P, T, _qcfg(cfg))[:, 0]
        R = np.linalg.norm(P, axis=-1)
        exact = erf(R / (2 * np.sqrt(T))) / R
        rel = np.abs(v - exact) / exact
        dio.write_csv(run.path("heat_oracle.csv"), ["r", "t", "value", "exact", "rel_err"],
                      zip(R, T, v, exact, rel))
        ok = bool(rel.max() <= 1e-3)
        run.report({"kind": "heat", "max_rel_err": float(rel.max()), "n_points": len(R),
                    "ok": ok}, "ok" if ok else "certificate-failure")
        return 0 if ok else 4
    if o["kind"] == "lemma28":
        rows, out = [], []
        for a, b in o["pairs"]:
            ratios = []
            for R in o["radii"]:
                for t in o["times"]:
                    lhs, rhs, ratio = lemma28_oracle(np.array([R, 0, 0.0]), t, a, b,
                                                     cfg["quadrature"]["level"])
                    ratios.append(ratio)
                    rows.append((a, b, R, t, lhs, rhs, ratio))
            out.append({"a": a, "b": b, "max_ratio": max(ratios), "min_ratio": min(ratios)})
        dio.write_csv(run.path("lemma28.csv"), ["a", "b", "R", "t", "lhs", "rhs", "ratio"], rows)
        run.report({"kind": "lemma28", "pairs": out})
        return 0
    a, b = o["a"], o["b"]
    R = np.asarray(o["radii"], float)
    phi = np.array([tsai_phi_oracle(np.array([r, 0, 0.0]), a, b, cfg["quadrature"]["level"])
                    for r in R])
    dio.write_plot_data(run.path("phi.dat"), R, phi, f"R  phi(R, {a}, {b})")
    r0, r1 = tsai_model_comparison(R, phi, a, b)
    run.report({"kind": "tsai", "a": a, "b": b, "R": R, "phi": phi,
                "slope": loglog_slope(R, phi), "resid_plain": r0, "resid_log": r1})
    return 0


def cmd_mildsolve(run):
    from .mildsolve import drift_threshold, evolve_data, fixed_point_solve
    from .norms import kato_norm
    cfg = run.cfg
    m = cfg["mildsolve"]
    u0 = _data(cfg)
    spec = _cell_spec(m["cell"])
    qc = _qcfg(cfg)
    E0 = evolve_data(u0, spec, qc)
    drift = None
    extra = {}
    if m["drift_fraction"] > 0:
        shape = E0.replace(far_field=None, far_scale=0.0, envelope=None, label="a")
        th = drift_threshold(shape, E0, m["p"], qc)
        k = kato_norm(shape, math.inf).value
        drift = shape.scaled(m["drift_fraction"] * th / k)
        extra = {"drift_threshold": th, "drift_kato": m["drift_fraction"] * th}
    try:
        u, cert = fixed_point_solve(u0, drift, m["p"], cfg=qc, cell_spec=spec, tol=m["tol"],
                                    max_iter=m["max_iter"])
    except DssError as e:
        if "certificate" in e.details:
            run.report({**extra, "certificate": e.details["certificate"]}, "refused")
        raise
    dio.save_cell(run.path("solution.npz"), u)
    dio.write_plot_data(run.path("residuals.dat"), np.arange(1, len(cert.residuals) + 1),
                        cert.residuals, "iteration  residual")
    ok = cert.converged and cert.bound_check.get("ok", False)
    run.report({**extra, "certificate": cert.to_dict()}, "ok" if ok else "certificate-failure")
    if not cert.converged:
        return 3
    return 0 if ok else 4


HANDLERS = {"gen-data": cmd_gen_data, "evolve": cmd_evolve, "picard": cmd_picard,
            "split": cmd_split, "verify": cmd_verify, "oracle": cmd_oracle,
            "mildsolve": cmd_mildsolve}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _set_threads(n):
    import warnings
    try:
        import numba
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
    except (ImportError, ValueError):  # pragma: no cover
        pass


def build_parser():
    p = argparse.ArgumentParser(prog="dss", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"dss {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="YAML scenario file")
    p.add_argument("--out", default="dss_out", help="output directory")
    p.add_argument("--threads", type=int, default=int(os.environ.get("DSS_THREADS", "1")),
                   help="worker threads (default: $DSS_THREADS or 1)")
    p.add_argument("--seed", type=int, default=0, help="seed for random probe sets")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _manifest(out, header, err, code, written):
    Path(out).mkdir(parents=True, exist_ok=True)
    dio.write_json(Path(out) / "error.json",
                   {**header, "exit_code": code, "error": err, "partial_outputs": written})


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    header = {"command": args.command, "config": None, "seed": args.seed,
              "version": __version__}
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        _manifest(args.out, header, e.to_dict(), e.exit_code, [])
        print(f"dss: {e}", file=sys.stderr)
        return e.exit_code
    _set_threads(args.threads)
    run = Run(args.out, args.command, cfg, args.seed)
    try:
        return HANDLERS[args.command](run)
    except DssError as e:
        _manifest(args.out, run.header(), e.to_dict(), e.exit_code, run.written)
        print(f"dss: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
