"""Plain-file persistence: fields, masks, verdicts and curves.

Fields are raw little-endian float64 in row-major node order with a JSON
sidecar carrying the grid and a SHA-256 of the payload. Masks are PGM (P2,
values 0/1) or CSV. Verdicts are JSON, curves CSV. Every writer is
deterministic: sorted keys, fixed float formatting, ``\\n`` line endings.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .errors import ChecksumError, ConfigInvalid
from .fields import ScalarField
from .geometry import ShapeMask
from .grid import GridSpec, make_grid

FIELD_SUFFIX = ".bin"
SIDECAR_SUFFIX = ".json"


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_text(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    return path


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=True) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def write_json(path, obj) -> Path:
    return _write_text(path, dumps_json(obj))


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


# -- fields ---------------------------------------------------------------------


def _field_paths(base) -> tuple[Path, Path]:
    base = Path(base)
    if base.suffix in (FIELD_SUFFIX, SIDECAR_SUFFIX):
        base = base.with_suffix("")
    return base.with_suffix(FIELD_SUFFIX), base.with_suffix(SIDECAR_SUFFIX)


def write_field(base, u: ScalarField, meta: dict | None = None) -> Path:
    """Write ``base.bin`` and ``base.json``; returns the payload path."""
    bin_path, side_path = _field_paths(base)
    payload = np.ascontiguousarray(u.values, dtype="<f8").tobytes(order="C")
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    bin_path.write_bytes(payload)
    sidecar = {
        **u.grid.to_dict(),
        "dtype": "<f8",
        "order": "C",
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    if meta:
        sidecar["meta"] = meta
    write_json(side_path, sidecar)
    return bin_path


def read_field(base) -> ScalarField:
    bin_path, side_path = _field_paths(base)
    if not bin_path.exists() or not side_path.exists():
        raise ConfigInvalid("field", f"missing {bin_path} or its sidecar")
    side = read_json(side_path)
    payload = bin_path.read_bytes()
    digest = hashlib.sha256(payload).hexdigest()
    if digest != side.get("sha256"):
        raise ChecksumError(f"{bin_path}: sha256 {digest} does not match the sidecar")
    grid = make_grid(side["dim"], side["extents"], side["counts"])
    values = np.frombuffer(payload, dtype="<f8")
    if values.size != grid.n_nodes:
        raise ChecksumError(f"{bin_path}: {values.size} values for {grid.n_nodes} nodes")
    return ScalarField(grid, values.reshape(grid.counts).astype(float))


def field_csv(u: ScalarField) -> str:
    grid = u.grid
    x = grid.node_coords().reshape(grid.dim, -1)
    idx = np.indices(grid.counts).reshape(grid.dim, -1)
    axes = "xyz"[: grid.dim]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"i{a}" for a in range(grid.dim)] + list(axes) + ["value"])
    for k, val in enumerate(u.values.ravel()):
        w.writerow([int(i) for i in idx[:, k]] + [_fmt(c) for c in x[:, k]] + [_fmt(val)])
    return buf.getvalue()


def write_field_csv(path, u: ScalarField) -> Path:
    return _write_text(path, field_csv(u))


# -- masks ----------------------------------------------------------------------


def _mask_rows(cells: np.ndarray) -> np.ndarray:
    """Image rows: top row is the largest y, columns run along x."""
    c = np.atleast_2d(cells.astype(np.uint8)) if cells.ndim == 1 else cells.astype(np.uint8)
    return c if cells.ndim == 1 else c.T[::-1]


def mask_pgm(mask: ShapeMask) -> str:
    rows = _mask_rows(mask.cells)
    lines = ["P2", f"# grid {json.dumps(mask.grid.to_dict(), sort_keys=True)}",
             f"{rows.shape[1]} {rows.shape[0]}", "1"]
    lines += [" ".join(str(int(v)) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def write_mask_pgm(path, mask: ShapeMask) -> Path:
    return _write_text(path, mask_pgm(mask))


def read_mask_pgm(path, grid: GridSpec | None = None) -> ShapeMask:
    """Read a P2 mask; the grid comes from the header comment unless given."""
    text = Path(path).read_text(encoding="utf-8")
    tokens, header_grid = [], None
    for line in text.splitlines():
        if line.startswith("#"):
            if line.startswith("# grid "):
                header_grid = json.loads(line[len("# grid "):])
            continue
        tokens += line.split()
    if not tokens or tokens[0] != "P2":
        raise ConfigInvalid("mask", f"{path} is not a P2 PGM file")
    width, height, maxval = (int(t) for t in tokens[1:4])
    data = np.array([int(t) for t in tokens[4:]], dtype=int)
    if data.size != width * height:
        raise ConfigInvalid("mask", f"{path}: expected {width * height} pixels, got {data.size}")
    img = data.reshape(height, width) > 0 if maxval > 0 else np.zeros((height, width), bool)
    if grid is None:
        if header_grid is None:
            raise ConfigInvalid("mask", f"{path} carries no grid header; pass the grid")
        grid = make_grid(header_grid["dim"], header_grid["extents"], header_grid["counts"])
    cells = img[0] if grid.dim == 1 else img[::-1].T
    if cells.shape != grid.cell_shape:
        raise ConfigInvalid("mask", f"{path}: shape {cells.shape} does not fit cells {grid.cell_shape}")
    return ShapeMask(grid, cells)


def mask_csv(mask: ShapeMask) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"i{a}" for a in range(mask.grid.dim)] + ["inside"])
    for idx in np.ndindex(*mask.grid.cell_shape):
        w.writerow(list(idx) + [int(mask.cells[idx])])
    return buf.getvalue()


def write_mask_csv(path, mask: ShapeMask) -> Path:
    return _write_text(path, mask_csv(mask))


# -- verdicts and curves ----------------------------------------------------------


def verdict(name: str, theorem: str, passed: bool, metrics: dict) -> dict:
    return {"name": name, "theorem": theorem, "pass": bool(passed), "metrics": metrics}


def write_verdict(directory, v: dict) -> Path:
    return write_json(Path(directory) / f"{v['name']}.json", v)


def curve_csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def write_curve(path, header: list[str], rows) -> Path:
    return _write_text(path, curve_csv(header, rows))
