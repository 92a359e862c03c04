"""CSV + JSON-sidecar serialisation of fields.

The CSV holds one row per node: r, theta, phi, then the stored components.
Values are written with ``repr`` (17 significant digits), so a round trip is
bit-exact. The sidecar ``<file>.json`` carries the grid metadata and the
field kind, frame and metric tag.
"""

import csv
import json
from pathlib import Path

import numpy as np

from .grid import Grid
from .tensors import FIELD_KINDS, SymTensor2, field_kind


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_field(path, f, extra=None):
    path = Path(path)
    grid = f.grid
    comps = np.asarray(f.components)
    header = ["r", "theta", "phi"] + [f"c_{n}" for n in f.names]
    coords = [grid.R.ravel(), grid.TH.ravel(), grid.PH.ravel()]
    cols = coords + [c.ravel() for c in comps]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])
    meta = {
        "grid": grid.metadata(),
        "kind": field_kind(f),
        "frame": f.frame,
        "components": list(f.names),
        "is_metric": bool(getattr(f, "is_metric", False)),
    }
    if extra:
        meta["extra"] = extra
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_field(path):
    path = Path(path)
    meta = json.loads(sidecar_path(path).read_text())
    grid = Grid.from_metadata(meta["grid"])
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in row] for row in body])
    if data.shape[0] != int(np.prod(grid.shape)):
        raise ValueError(f"{path}: expected {np.prod(grid.shape)} rows, found {data.shape[0]}")
    comps = data[:, 3:].T.reshape((len(header) - 3,) + grid.shape)
    cls = FIELD_KINDS[meta["kind"]]
    if cls is SymTensor2:
        return SymTensor2(grid, comps, frame=meta["frame"], is_metric=meta.get("is_metric", False))
    values = comps[0] if meta["kind"] == "scalar" else comps
    return cls(grid, values, frame=meta["frame"])


TRIPLE_FILES = ("g.csv", "u.csv", "psi.csv")


def write_triple(directory, data, kind):
    """Write (g, u, psi) as three CSV files; ``kind`` is "projection" or "conformal"."""
    from .tensors import ScalarField

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    extra = {"triple": kind}
    grid = data.grid
    write_field(directory / "g.csv", SymTensor2.from_full(grid, np.real(data.g), is_metric=True), extra)
    write_field(directory / "u.csv", ScalarField(grid, np.real(data.u)), extra)
    write_field(directory / "psi.csv", ScalarField(grid, np.real(data.psi)), extra)
    return [directory / n for n in TRIPLE_FILES]


def read_triple(directory):
    """Inverse of :func:`write_triple`; returns ProjectionData or ConformalData."""
    from .systems import ConformalData, ProjectionData

    directory = Path(directory)
    g, u, psi = (read_field(directory / n) for n in TRIPLE_FILES)
    kind = json.loads(sidecar_path(directory / "g.csv").read_text()).get("extra", {}).get("triple")
    cls = {"projection": ProjectionData, "conformal": ConformalData}.get(kind)
    if cls is None:
        raise ValueError(f"{directory}: sidecar does not name the triple kind")
    return cls(g.grid, g.full(), u.values, psi.values)


def write_boundary_data(path, grid, bd):
    """Boundary data on the inner sphere: theta, phi, gamma (3), lam, f."""
    path = Path(path)
    th, ph = grid.TH[0], grid.PH[0]
    cols = [th.ravel(), ph.ravel()] + [np.real(c).ravel() for c in bd.gamma] + [
        np.real(bd.lam).ravel(), np.real(bd.f).ravel()]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "phi", "gamma_tt", "gamma_tp", "gamma_pp", "lam", "f"])
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])
    meta = {"grid": grid.metadata(), "kind": "boundary_data"}
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_boundary_data(path):
    from .systems import BoundaryData

    path = Path(path)
    meta = json.loads(sidecar_path(path).read_text())
    grid = Grid.from_metadata(meta["grid"])
    with path.open(newline="") as fh:
        body = list(csv.reader(fh))[1:]
    data = np.array([[float(v) for v in row] for row in body]).T
    shape = grid.shape[1:]
    if data.shape[1] != int(np.prod(shape)):
        raise ValueError(f"{path}: expected {np.prod(shape)} rows, found {data.shape[1]}")
    vals = data[2:].reshape((5,) + shape)
    return grid, BoundaryData(vals[:3], vals[3], vals[4])
