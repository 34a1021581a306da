"""Field serialization: CSV and the compact ``BQF1`` binary format.

CSV layout::

    # <comment lines, e.g. config_sha256=...>
    # particle_dim=<d>
    axis0,axis1,...,value
    <one node per line, row-major storage order>

Binary layout (all little-endian)::

    b"BQF1"
    uint64 axis count
    uint64 per-particle dimension d
    per axis: float64 lower, float64 upper, uint64 points
    float64 values[size]            (row-major storage order)
    optional trailer: b"#" + utf-8 comment + b"\\n"
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .grid_field import AxisSpec, GridError, GridSpec, ScalarField

if TYPE_CHECKING:
    from collections.abc import Sequence

MAGIC = b"BQF1"


class FieldFormatError(ValueError):
    """Malformed field file."""


def _comment_lines(comments: Sequence[str]) -> list[str]:
    return [f"# {c}" for c in comments]


def write_csv(field: ScalarField, path: str | Path, comments: Sequence[str] = ()) -> Path:
    grid = field.grid
    path = Path(path)
    mesh = [m.ravel() for m in grid.meshgrid()]
    header = ",".join([f"axis{a}" for a in range(grid.ndim)] + ["value"])
    lines = _comment_lines(list(comments) + [f"particle_dim={grid.d}"])
    lines.append(header)
    cols = mesh + [field.flat]
    for row in zip(*cols):
        lines.append(",".join(repr(float(x)) for x in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_csv(path: str | Path, d: int | None = None) -> tuple[ScalarField, list[str]]:
    """Read a CSV field; returns the field and its comment lines (without ``# ``)."""
    comments: list[str] = []
    rows: list[list[float]] = []
    header = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            comments.append(line[1:].strip())
            continue
        if header is None:
            header = line.split(",")
            if header[-1] != "value" or any(h != f"axis{i}" for i, h in enumerate(header[:-1])):
                raise FieldFormatError(f"{path}:{lineno}: bad header {line!r}")
            continue
        try:
            rows.append([float(x) for x in line.split(",")])
        except ValueError as exc:
            raise FieldFormatError(f"{path}:{lineno}: {exc}") from None
    if header is None or not rows:
        raise FieldFormatError(f"{path}: no data")
    data = np.array(rows)
    ndim = len(header) - 1
    if d is None:
        d = ndim
        for c in comments:
            if c.startswith("particle_dim="):
                d = int(c.split("=", 1)[1])
    axes = []
    for a in range(ndim):
        u = np.unique(data[:, a])
        axes.append(AxisSpec(u[0], u[-1], len(u)))
    try:
        grid = GridSpec(tuple(axes), d=d, M=ndim // d)
    except GridError as exc:
        raise FieldFormatError(f"{path}: {exc}") from None
    if data.shape[0] != grid.size:
        raise FieldFormatError(f"{path}: {data.shape[0]} rows for a {grid.shape} grid")
    return ScalarField(grid, data[:, -1]), [c for c in comments if not c.startswith("particle_dim=")]


def write_binary(field: ScalarField, path: str | Path, comment: str | None = None) -> Path:
    grid = field.grid
    path = Path(path)
    parts = [MAGIC, struct.pack("<QQ", grid.ndim, grid.d)]
    for ax in grid.axes:
        parts.append(struct.pack("<ddQ", ax.lower, ax.upper, ax.points))
    parts.append(np.ascontiguousarray(field.flat, dtype="<f8").tobytes())
    if comment:
        parts.append(b"#" + comment.encode("utf-8") + b"\n")
    path.write_bytes(b"".join(parts))
    return path


def read_binary(path: str | Path) -> tuple[ScalarField, str | None]:
    """Read a ``BQF1`` field; returns the field and the trailer comment if any."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FieldFormatError(f"{path}: bad magic {raw[:4]!r}")
    try:
        ndim, d = struct.unpack_from("<QQ", raw, 4)
        offset = 20
        axes = []
        for _ in range(ndim):
            lo, hi, n = struct.unpack_from("<ddQ", raw, offset)
            axes.append(AxisSpec(lo, hi, n))
            offset += 24
        grid = GridSpec(tuple(axes), d=d, M=ndim // d)
    except (struct.error, GridError, ZeroDivisionError) as exc:
        raise FieldFormatError(f"{path}: corrupt header ({exc})") from None
    nbytes = 8 * grid.size
    if len(raw) < offset + nbytes:
        raise FieldFormatError(f"{path}: truncated values")
    values = np.frombuffer(raw, dtype="<f8", count=grid.size, offset=offset).astype(np.float64)
    trailer = raw[offset + nbytes :]
    comment = None
    if trailer:
        if not trailer.startswith(b"#"):
            raise FieldFormatError(f"{path}: unexpected trailing bytes")
        comment = trailer[1:].decode("utf-8").rstrip("\n")
    return ScalarField(grid, values), comment
