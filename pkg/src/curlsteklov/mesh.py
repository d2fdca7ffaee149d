"""Tetrahedral meshes, boundary skeleton and mesh generators."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import MeshError, MeshQualityError, TopologyError

# Local facets of a positively oriented tet (a, b, c, d); each triple is
# ordered so that its right-hand normal points away from the omitted vertex.
_TET_FACETS = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])

_TET_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])


def signed_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    p = vertices[tets]
    e1, e2, e3 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]
    return np.einsum("ij,ij->i", e1, np.cross(e2, e3)) / 6.0


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming tetrahedral mesh of a bounded region.

    ``tets`` are stored positively oriented; construction fails on any tet
    with non-positive signed volume or out-of-range vertex index.
    """

    vertices: np.ndarray
    tets: np.ndarray

    def __post_init__(self):
        vertices = _frozen(self.vertices, float)
        tets = _frozen(self.tets, np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshError(f"vertices must have shape (V, 3), got {vertices.shape}")
        if tets.ndim != 2 or tets.shape[1] != 4:
            raise MeshError(f"tets must have shape (T, 4), got {tets.shape}")
        if tets.size and (tets.min() < 0 or tets.max() >= len(vertices)):
            raise MeshError("tet vertex index out of range")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "tets", tets)
        vols = signed_volumes(vertices, tets)
        bad = np.flatnonzero(vols <= 0.0)
        if bad.size:
            raise MeshQualityError(
                f"{bad.size} tets with non-positive volume (first: tet {bad[0]}, "
                f"volume {vols[bad[0]]:.3e})"
            )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @cached_property
    def tet_volumes(self) -> np.ndarray:
        return signed_volumes(self.vertices, self.tets)

    @property
    def volume(self) -> float:
        return float(self.tet_volumes.sum())

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return np.array_equal(self.vertices, other.vertices) and np.array_equal(
            self.tets, other.tets
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class BoundarySkeleton:
    """Boundary triangulation of a mesh with outward orientation.

    Attributes
    ----------
    facets : (F, 3) int array
        Vertex indices, right-hand normal pointing out of the region.
    facet_tets : (F,) int array
        Owning tet of each facet.
    areas : (F,) float array
    facet_normals : (F, 3) float array
        Unit outward facet normals.
    vertices : (B,) int array
        Sorted mesh indices of the boundary vertices.
    normals : (B, 3) float array
        Area-weighted average of incident facet normals, normalized. Rows are
        left at zero where the average cancels exactly.
    """

    facets: np.ndarray
    facet_tets: np.ndarray
    areas: np.ndarray
    facet_normals: np.ndarray
    vertices: np.ndarray
    normals: np.ndarray
    n_mesh_vertices: int

    @property
    def n_facets(self) -> int:
        return len(self.facets)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @cached_property
    def local_index(self) -> np.ndarray:
        """Map mesh vertex -> boundary index (-1 for interior vertices)."""
        idx = np.full(self.n_mesh_vertices, -1, dtype=np.int64)
        idx[self.vertices] = np.arange(self.n_vertices)
        return idx

    @cached_property
    def local_facets(self) -> np.ndarray:
        """Facets in boundary-vertex numbering."""
        return self.local_index[self.facets]

    @property
    def area(self) -> float:
        return float(self.areas.sum())


def extract_boundary(mesh: Mesh) -> BoundarySkeleton:
    """Collect the tet facets that occur exactly once."""
    faces = mesh.tets[:, _TET_FACETS].reshape(-1, 3)
    owner = np.repeat(np.arange(mesh.n_tets), 4)
    keys = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if counts.max(initial=0) > 2:
        raise TopologyError(f"non-manifold facet shared by {counts.max()} tets")
    once = counts[inverse] == 1
    facets = faces[once]
    facet_tets = owner[once]

    p = mesh.vertices[facets]
    cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    twice_area = np.linalg.norm(cr, axis=1)
    if np.any(twice_area <= 0.0):
        raise MeshQualityError("degenerate boundary facet")
    facet_normals = cr / twice_area[:, None]

    bverts = np.unique(facets)
    local = np.full(mesh.n_vertices, -1, dtype=np.int64)
    local[bverts] = np.arange(len(bverts))
    acc = np.zeros((len(bverts), 3))
    for k in range(3):
        np.add.at(acc, local[facets[:, k]], cr)
    norm = np.linalg.norm(acc, axis=1)
    scale = np.zeros_like(norm)
    nz = norm > 0.0
    scale[nz] = 1.0 / norm[nz]
    normals = acc * scale[:, None]

    for arr in (facets, facet_tets, bverts):
        arr.setflags(write=False)
    areas = 0.5 * twice_area
    areas.setflags(write=False)
    facet_normals.setflags(write=False)
    normals.setflags(write=False)
    return BoundarySkeleton(
        facets=facets,
        facet_tets=facet_tets,
        areas=areas,
        facet_normals=facet_normals,
        vertices=bverts,
        normals=normals,
        n_mesh_vertices=mesh.n_vertices,
    )


def _orient(vertices, tets):
    vols = signed_volumes(vertices, tets)
    neg = vols < 0
    tets = tets.copy()
    tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()
    return tets


def _kuhn_tets(n: int, centered: bool) -> np.ndarray:
    """Kuhn split of an n^3 grid into 6 n^3 tets.

    With ``centered`` the split is reflected per octant so that every tet's
    shared diagonal runs from the cell corner nearest the grid centre to the
    farthest one; reflected Kuhn meshes stay conforming across the mirror
    planes because the face diagonals on those planes coincide.
    """
    idx = np.arange(n)
    ci, cj, ck = (a.ravel() for a in np.meshgrid(idx, idx, idx, indexing="ij"))
    cells = np.stack([ci, cj, ck], axis=1)
    if centered:
        signs = np.where(2 * cells + 1 < n, -1, 1)
    else:
        signs = np.ones_like(cells)
    start = cells + (signs < 0)

    def flat(ijk):
        return (ijk[:, 0] * (n + 1) + ijk[:, 1]) * (n + 1) + ijk[:, 2]

    tets = []
    for perm in itertools.permutations(range(3)):
        cur = start.copy()
        chain = [flat(cur)]
        for axis in perm:
            cur = cur.copy()
            cur[:, axis] += signs[:, axis]
            chain.append(flat(cur))
        tets.append(np.stack(chain, axis=1))
    # cell-major order: the 6 tets of one cell are contiguous
    return np.stack(tets, axis=1).reshape(-1, 4)


def _grid(n: int, lo: float, hi: float) -> np.ndarray:
    x = np.linspace(lo, hi, n + 1)
    gx, gy, gz = np.meshgrid(x, x, x, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


def generate_cube_mesh(n: int, side: float = 1.0) -> Mesh:
    """Structured mesh of ``[0, side]^3``, each of the n^3 cells split into 6 tets."""
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    if not side > 0:
        raise ValueError(f"side must be positive, got {side!r}")
    n = int(n)
    verts = _grid(n, 0.0, float(side))
    tets = _orient(verts, _kuhn_tets(n, centered=False))
    return Mesh(verts, tets)


def generate_ball_mesh(refinement: int) -> Mesh:
    """Unit-ball mesh from a projected cube.

    The cube ``[-1, 1]^3`` is split into ``2**(refinement + 1)`` cells per
    axis; every vertex is pushed radially so that the cube shell
    ``max|x_i| = r`` lands on the sphere of radius ``r``. Boundary vertices
    therefore sit on the unit sphere and interior layers are graded between
    the origin and the surface.
    """
    if int(refinement) != refinement or refinement < 0:
        raise ValueError(f"refinement must be a non-negative integer, got {refinement!r}")
    n = 2 ** (int(refinement) + 1)
    cube = _grid(n, -1.0, 1.0)
    # snap the grid so boundary detection below is exact
    cube = np.round(cube * (n / 2)) / (n / 2)
    inf = np.abs(cube).max(axis=1)
    two = np.linalg.norm(cube, axis=1)
    scale = np.ones_like(two)
    nz = two > 0
    scale[nz] = inf[nz] / two[nz]
    verts = cube * scale[:, None]
    on_sphere = inf == 1.0
    verts[on_sphere] /= np.linalg.norm(verts[on_sphere], axis=1)[:, None]

    # orient on the undistorted cube so that a tet inverted by the projection
    # is rejected instead of silently flipped
    tets = _orient(cube, _kuhn_tets(n, centered=True))
    vols = signed_volumes(verts, tets)
    tol = 1e-12 * vols.max()
    if np.any(vols <= tol):
        raise MeshQualityError(
            f"projection produced {np.sum(vols <= tol)} degenerate tets"
        )
    return Mesh(verts, tets)


def mesh_stats(mesh: Mesh) -> dict:
    """Volume and shape statistics.

    ``min_quality`` is the normalized ratio ``6*sqrt(2)*V / l_rms**3``
    (1 for a regular tet); ``min_dihedral_deg`` the smallest dihedral angle.
    """
    vols = mesh.tet_volumes
    p = mesh.vertices[mesh.tets]
    edges = p[:, _TET_EDGES[:, 1]] - p[:, _TET_EDGES[:, 0]]
    l_rms = np.sqrt(np.mean(np.sum(edges**2, axis=2), axis=1))
    quality = 6.0 * np.sqrt(2.0) * vols / l_rms**3

    grads = barycentric_gradients(mesh)
    gnorm = np.linalg.norm(grads, axis=2)
    cosines = -np.einsum("tic,tjc->tij", grads, grads) / (
        gnorm[:, :, None] * gnorm[:, None, :]
    )
    iu = np.triu_indices(4, 1)
    dihedral = np.degrees(np.arccos(np.clip(cosines[:, iu[0], iu[1]], -1.0, 1.0)))
    return {
        "n_vertices": mesh.n_vertices,
        "n_tets": mesh.n_tets,
        "volume": mesh.volume,
        "min_tet_volume": float(vols.min()),
        "max_tet_volume": float(vols.max()),
        "min_quality": float(quality.min()),
        "min_dihedral_deg": float(dihedral.min()),
        "max_dihedral_deg": float(dihedral.max()),
    }


def barycentric_gradients(mesh: Mesh) -> np.ndarray:
    """Constant gradients of the 4 barycentric functions per tet, shape (T, 4, 3)."""
    p = mesh.vertices[mesh.tets]
    jac = (p[:, 1:] - p[:, :1]).transpose(0, 2, 1)  # columns are edge vectors
    inv = np.linalg.inv(jac)  # rows: gradients of lambda_1..3
    g = np.empty((mesh.n_tets, 4, 3))
    g[:, 1:] = inv
    g[:, 0] = -inv.sum(axis=1)
    return g
