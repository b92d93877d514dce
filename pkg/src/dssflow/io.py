"""Versioned containers: JSON reports, npz arrays, CSV tables, plot data.

All writers are deterministic: keys are sorted, floats are written with
``repr`` precision, non-finite floats become the strings ``"inf"``,
``"-inf"`` and ``"nan"``, and no timestamps are recorded.
"""

from __future__ import annotations

import csv
import dataclasses
import io as _io
import json
import math
import zipfile
from pathlib import Path

import numpy as np

from .dss_core import DssField, SpaceTimeCell, build_grid

FORMAT_VERSION = 1


def _version():
    from . import __version__
    return __version__


def to_plain(obj):
    """Recursively convert to JSON-compatible builtins."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        if hasattr(obj, "to_dict"):
            return to_plain(obj.to_dict())
        return to_plain(dataclasses.asdict(obj))
    if hasattr(obj, "to_dict"):
        return to_plain(obj.to_dict())
    if obj is None or isinstance(obj, (str, int)):
        return obj
    if callable(obj):
        return None
    return str(obj)


def dumps(obj):
    return json.dumps(to_plain(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps(obj))


def read_json(path):
    return json.loads(Path(path).read_text())


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell_text(v) for v in row])


def _cell_text(v):
    v = to_plain(v)
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


def write_plot_data(path, x, y, comment=None):
    """Two-column whitespace-separated data readable by gnuplot."""
    with open(path, "w") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        for a, b in zip(x, y):
            fh.write(f"{float(a)!r} {float(b)!r}\n")


# ---------------------------------------------------------------------------
# fields and cells
# ---------------------------------------------------------------------------

def savez_deterministic(path, **arrays):
    """``np.savez`` with fixed entry timestamps, so equal arrays give equal bytes."""
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = _io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def _grid_meta(grid):
    return {"lambda": grid.lam, "n_radial": grid.n_radial, "n_angular": grid.n_angular,
            "interp_order": grid.interp_order}


def save_field(path, field):
    """Store node samples and grid parameters (analytic profiles are dropped)."""
    meta = {"kind": "DssField", "format": FORMAT_VERSION, "version": _version(),
            "grid": _grid_meta(field.grid), "roughness_tag": field.roughness_tag,
            "divergence_free": bool(field.divergence_free),
            "meta": {k: v for k, v in field.meta.items() if not callable(v)}}
    savez_deterministic(path, samples=field.samples, meta=np.array(dumps(meta)))


def save_cell(path, cell):
    meta = {"kind": "SpaceTimeCell", "format": FORMAT_VERSION, "version": _version(),
            "grid": _grid_meta(cell.grid), "shell": list(cell.shell), "label": cell.label,
            "envelope": cell.envelope.to_dict() if cell.envelope is not None else None}
    savez_deterministic(path, samples=cell.samples, time_nodes=cell.time_nodes,
             meta=np.array(dumps(meta)))


def load(path):
    """Load a container written by :func:`save_field` or :func:`save_cell`."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        g = meta["grid"]
        grid = build_grid(g["lambda"], g["n_radial"], g["n_angular"], g["interp_order"])
        if meta["kind"] == "DssField":
            return DssField(grid, z["samples"].copy(), meta["roughness_tag"], None,
                            meta["divergence_free"], meta["meta"])
        return SpaceTimeCell(grid, z["time_nodes"].copy(), tuple(meta["shell"]),
                             z["samples"].copy(), label=meta["label"])
