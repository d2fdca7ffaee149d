"""File formats: Gmsh MSH 2.2 ASCII, VTK legacy ASCII, CSV and Matrix Market."""

from __future__ import annotations

import csv
import os
import tempfile
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import (
    DanglingIndexError,
    GmshParseError,
    MissingSectionError,
    UnsupportedElementError,
    UnsupportedVersionError,
)
from .mesh import Mesh, _orient

GMSH_TET = 4
# lower-dimensional Gmsh element types that may accompany a volume mesh
# (points, lines, triangles, quads and their second-order variants)
_GMSH_IGNORED = {1, 2, 3, 8, 9, 10, 15, 16, 21}


def _sections(lines):
    out = {}
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        if line.startswith("$") and not line.startswith("$End"):
            name = line[1:]
            end = "$End" + name
            j = i + 1
            while j < len(lines) and lines[j].strip() != end:
                j += 1
            if j == len(lines):
                raise GmshParseError(f"section ${name} is not terminated")
            out.setdefault(name, lines[i + 1 : j])
            i = j
        i += 1
    return out


def load_gmsh(path) -> Mesh:
    """Read a Gmsh MSH 2.2 ASCII file holding 4-node tetrahedra.

    Node tags may be arbitrary positive integers; they are renumbered in file
    order. Tets are reoriented to positive volume. Surface and line elements
    are skipped, any other element type is rejected.
    """
    text = Path(path).read_text()
    sec = _sections(text.splitlines())

    if "MeshFormat" not in sec or not sec["MeshFormat"]:
        raise MissingSectionError("missing $MeshFormat section")
    fmt = sec["MeshFormat"][0].split()
    if len(fmt) < 2 or not fmt[0].startswith("2."):
        raise UnsupportedVersionError(f"unsupported MSH version {fmt[0] if fmt else '?'}")
    if fmt[1] != "0":
        raise UnsupportedVersionError("binary MSH files are not supported")
    for name in ("Nodes", "Elements"):
        if name not in sec:
            raise MissingSectionError(f"missing ${name} section")

    node_lines = sec["Nodes"]
    n_nodes = int(node_lines[0])
    tag_to_idx = {}
    coords = np.empty((n_nodes, 3))
    for k, line in enumerate(node_lines[1 : 1 + n_nodes]):
        parts = line.split()
        tag_to_idx[int(parts[0])] = k
        coords[k] = [float(v) for v in parts[1:4]]

    elem_lines = sec["Elements"]
    n_elem = int(elem_lines[0])
    tets = []
    for line in elem_lines[1 : 1 + n_elem]:
        parts = [int(v) for v in line.split()]
        etype, ntags = parts[1], parts[2]
        nodes = parts[3 + ntags :]
        if etype in _GMSH_IGNORED:
            continue
        if etype != GMSH_TET:
            raise UnsupportedElementError(
                f"unsupported element type {etype} (element {parts[0]}, {len(nodes)} nodes)"
            )
        try:
            tets.append([tag_to_idx[t] for t in nodes])
        except KeyError as exc:
            raise DanglingIndexError(
                f"element {parts[0]} references unknown node {exc.args[0]}"
            ) from None
    if not tets:
        raise GmshParseError("no tetrahedra in $Elements")
    tets = np.array(tets, dtype=np.int64)
    return Mesh(coords, _orient(coords, tets))


def write_gmsh(mesh: Mesh, path) -> None:
    lines = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(mesh.n_vertices)]
    lines += [
        f"{k + 1} {x!r} {y!r} {z!r}" for k, (x, y, z) in enumerate(mesh.vertices.tolist())
    ]
    lines += ["$EndNodes", "$Elements", str(mesh.n_tets)]
    lines += [
        f"{k + 1} {GMSH_TET} 2 1 1 " + " ".join(str(v + 1) for v in tet)
        for k, tet in enumerate(mesh.tets.tolist())
    ]
    lines.append("$EndElements")
    _atomic_write(path, "\n".join(lines) + "\n")


def write_vtk(path, mesh: Mesh, point_vectors=None, point_scalars=None, title="curlsteklov"):
    """Legacy ASCII unstructured grid (cell type 10) with optional vertex data.

    ``point_vectors`` / ``point_scalars`` map names to arrays of shape (V, 3)
    and (V,) respectively.
    """
    out = [
        "# vtk DataFile Version 3.0",
        title[:255],
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_vertices} double",
    ]
    out += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    out.append(f"CELLS {mesh.n_tets} {5 * mesh.n_tets}")
    out += ["4 " + " ".join(map(str, t)) for t in mesh.tets.tolist()]
    out.append(f"CELL_TYPES {mesh.n_tets}")
    out += ["10"] * mesh.n_tets
    point_vectors = point_vectors or {}
    point_scalars = point_scalars or {}
    if point_vectors or point_scalars:
        out.append(f"POINT_DATA {mesh.n_vertices}")
    for name, arr in point_vectors.items():
        arr = np.asarray(arr, dtype=float).reshape(mesh.n_vertices, 3)
        out.append(f"VECTORS {name} double")
        out += [f"{a!r} {b!r} {c!r}" for a, b, c in arr.tolist()]
    for name, arr in point_scalars.items():
        arr = np.asarray(arr, dtype=float).reshape(mesh.n_vertices)
        out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        out += [repr(v) for v in arr.tolist()]
    _atomic_write(path, "\n".join(out) + "\n")


def write_csv(path, header, rows) -> None:
    """Write rows with floats in round-trip ``repr`` form (byte-stable)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    os.replace(tmp, path)


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def dump_matrix_market(directory, matrices: dict) -> list[Path]:
    """Dump each named matrix as ``<name>.mtx`` for external checking."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, mat in matrices.items():
        p = directory / f"{name}.mtx"
        scipy.io.mmwrite(str(p), sp.coo_matrix(mat), precision=17)
        written.append(p)
    return written


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
