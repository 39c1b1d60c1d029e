"""CSV persistence of nodal fields with a ``meta.json`` grid sidecar.

File layout::

    # kind=annulus r_in=0.05 r_out=0.5 n_r=128 n_theta=256 field=sigma
    i,j,coord1,coord2,value
    ...

Values are written with 17 significant digits, so a write/read cycle is
bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .mesh import Grid, grid_from_spec

META_NAME = "meta.json"


class FieldFormatError(ValueError):
    pass


def _header(grid: Grid, name: str) -> str:
    params = " ".join(f"{k}={v!r}" for k, v in grid.spec().items() if k != "kind")
    return f"# kind={grid.kind} {params} field={name}"


def _parse_header(line: str) -> Tuple[dict, str]:
    if not line.startswith("#"):
        raise FieldFormatError("missing '# kind=...' header line")
    items = dict(tok.split("=", 1) for tok in line[1:].split())
    try:
        name = items.pop("field")
        kind = items.pop("kind")
    except KeyError as exc:
        raise FieldFormatError(f"header lacks {exc.args[0]!r}") from None
    spec = {"kind": kind}
    for k, v in items.items():
        spec[k] = int(v) if k.startswith("n") else float(v)
    return spec, name


def write_meta(directory, grid: Grid) -> Path:
    path = Path(directory) / META_NAME
    path.write_text(json.dumps({"grid": grid.spec()}, indent=2) + "\n")
    return path


def read_meta(directory) -> Grid:
    path = Path(directory) / META_NAME
    return grid_from_spec(json.loads(path.read_text())["grid"])


def write_field(path, f: np.ndarray, grid: Grid, name: Optional[str] = None) -> Path:
    path = Path(path)
    name = name or path.stem
    f = grid.check(f, name)
    if not np.all(np.isfinite(f)):
        raise FieldFormatError(f"field {name!r} contains non-finite values")
    ii, jj = np.meshgrid(np.arange(grid.n1), np.arange(grid.n2), indexing="ij")
    u, v = grid.mesh()
    lines = [_header(grid, name)]
    for i, j, a, b, x in zip(ii.ravel(), jj.ravel(), u.ravel(), v.ravel(), f.ravel()):
        lines.append(f"{i},{j},{a:.17g},{b:.17g},{x:.17g}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_field(path, grid: Optional[Grid] = None) -> Tuple[np.ndarray, Grid, str]:
    """Read a field; the header grid must match ``grid`` and any ``meta.json`` beside the file."""
    path = Path(path)
    with path.open() as fh:
        spec, name = _parse_header(fh.readline().strip())
    header_grid = grid_from_spec(spec)
    meta = path.parent / META_NAME
    if meta.exists() and read_meta(path.parent) != header_grid:
        raise FieldFormatError(f"{path.name}: grid in header differs from {META_NAME}")
    if grid is not None and grid != header_grid:
        raise FieldFormatError(f"{path.name}: grid in header differs from the expected grid")
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if data.shape != (header_grid.size, 5):
        raise FieldFormatError(f"{path.name}: expected {header_grid.size} rows of 5 columns")
    values = data[:, 4]
    if not np.all(np.isfinite(values)):
        raise FieldFormatError(f"{path.name}: non-finite value in field {name!r}")
    f = np.empty(header_grid.shape)
    f[data[:, 0].astype(int), data[:, 1].astype(int)] = values
    return f, header_grid, name
