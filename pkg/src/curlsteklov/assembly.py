"""Bilinear forms over continuous piecewise-linear vector fields.

Degrees of freedom of the ambient space are vertex-major, ``3*v + c`` for
component ``c`` of vertex ``v``. The tangential constraint ``u . nu = 0`` is
imposed strongly through an orthonormal null-space basis ``N``; constrained
coordinates list all interior dofs first (3 per interior vertex) and then the
boundary-tangential dofs (2 per boundary vertex, in the vertex's tangent
frame).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl

from .errors import AssemblyError, GeometryError, MeshMismatchError
from .mesh import BoundarySkeleton, Mesh, barycentric_gradients


@dataclass(frozen=True)
class ProblemParams:
    """Coefficients of the penalized form; ``eta=None`` requests auto-selection."""

    alpha: float
    theta: float = 1.0
    eta: float | None = 0.0

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if self.eta is not None and not self.eta >= 0:
            raise ValueError(f"eta must be non-negative, got {self.eta}")

    def with_eta(self, eta: float) -> "ProblemParams":
        return replace(self, eta=float(eta))


@dataclass(frozen=True, eq=False)
class AssembledForms:
    """The four symmetric matrices of the penalized curl-curl form.

    K : curl-curl, D : div-div, M : volume mass, B : boundary mass on all three
    ambient components of boundary vertices (zero rows elsewhere). All are
    CSR matrices of size ``3V``.
    """

    K: sp.csr_matrix
    D: sp.csr_matrix
    M: sp.csr_matrix
    B: sp.csr_matrix
    n_vertices: int

    @property
    def n_dofs(self) -> int:
        return 3 * self.n_vertices

    def combine(self, alpha, theta, eta=0.0):
        return (self.K - alpha * self.M + theta * self.D + eta * self.B).tocsr()

    def as_dict(self):
        return {"K": self.K, "D": self.D, "M": self.M, "B": self.B}


def _scatter(dofs, local, n):
    """Sum local (E, k, k) blocks into an (n, n) CSR matrix."""
    k = dofs.shape[1]
    rows = np.broadcast_to(dofs[:, :, None], (len(dofs), k, k))
    cols = np.broadcast_to(dofs[:, None, :], (len(dofs), k, k))
    A = sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n))
    A = A.tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def _vector_dofs(conn):
    return (3 * conn[:, :, None] + np.arange(3)).reshape(len(conn), -1)


def scalar_mass_local(vol):
    base = (np.ones((4, 4)) + np.eye(4)) / 20.0
    return vol[:, None, None] * base


def scalar_stiffness(mesh: Mesh) -> sp.csr_matrix:
    g = barycentric_gradients(mesh)
    loc = mesh.tet_volumes[:, None, None] * np.einsum("tic,tjc->tij", g, g)
    return _scatter(mesh.tets, loc, mesh.n_vertices)


def scalar_mass(mesh: Mesh) -> sp.csr_matrix:
    return _scatter(mesh.tets, scalar_mass_local(mesh.tet_volumes), mesh.n_vertices)


def assemble_forms(mesh: Mesh, boundary: BoundarySkeleton) -> AssembledForms:
    """Assemble K, D, M, B with exact quadrature for P1 fields."""
    if boundary.n_mesh_vertices != mesh.n_vertices:
        raise MeshMismatchError("boundary skeleton belongs to a different mesh")
    vol = mesh.tet_volumes
    if np.any(vol <= 0):
        raise AssemblyError("inverted tet")
    g = barycentric_gradients(mesh)
    n = 3 * mesh.n_vertices
    dofs = _vector_dofs(mesh.tets)
    eye3 = np.eye(3)

    gg = np.einsum("tic,tjc->tij", g, g)
    # curl(phi_i e_a) . curl(phi_j e_b) = delta_ab g_i.g_j - g_i[b] g_j[a]
    k_loc = np.einsum("tij,ab->tiajb", gg, eye3) - np.einsum("tib,tja->tiajb", g, g)
    # div(phi_i e_a) div(phi_j e_b) = g_i[a] g_j[b]
    d_loc = np.einsum("tia,tjb->tiajb", g, g)
    m_loc = np.einsum("tij,ab->tiajb", scalar_mass_local(np.ones_like(vol)), eye3)

    w = vol[:, None, None, None, None]
    K = _scatter(dofs, (w * k_loc).reshape(-1, 12, 12), n)
    D = _scatter(dofs, (w * d_loc).reshape(-1, 12, 12), n)
    M = _scatter(dofs, (w * m_loc).reshape(-1, 12, 12), n)

    # exact P1 mass on flat facets: area/12 * (1 + delta_ij)
    tri = (np.ones((3, 3)) + np.eye(3)) / 12.0
    b_loc = boundary.areas[:, None, None, None, None] * np.einsum("ij,ab->iajb", tri, eye3)
    B = _scatter(_vector_dofs(boundary.facets), b_loc.reshape(-1, 9, 9), n)
    return AssembledForms(K=K, D=D, M=M, B=B, n_vertices=mesh.n_vertices)


def tangent_frames(normals: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal tangent pairs, shape (B, 2, 3).

    The coordinate axis on which the normal has its smallest component is
    crossed with the normal to get ``t1``; ``t2 = nu x t1`` so that
    ``(t1, t2, nu)`` is right-handed.
    """
    norms = np.linalg.norm(normals, axis=1)
    bad = np.flatnonzero(norms < 0.5)
    if bad.size:
        raise GeometryError(f"zero vertex normal at boundary vertex {bad[0]}")
    axis = np.argmin(np.abs(normals), axis=1)
    e = np.eye(3)[axis]
    t1 = np.cross(e, normals)
    t1 /= np.linalg.norm(t1, axis=1)[:, None]
    t2 = np.cross(normals, t1)
    return np.stack([t1, t2], axis=1)


@dataclass(frozen=True, eq=False)
class FemSpace:
    """Discrete tangential space: ``u_ambient = N @ u``.

    For spaces produced by deflation, ``restriction`` maps the restricted
    coordinates into the parent constrained coordinates and ``N`` already
    includes it; the last ``n_boundary`` coordinates are still the
    boundary-tangential values in the same frames, so traces are unchanged.
    """

    mesh: Mesh
    boundary: BoundarySkeleton
    N: sp.csr_matrix
    n_interior: int
    n_boundary: int
    frames: np.ndarray
    interior_vertices: np.ndarray
    restriction: np.ndarray | None = None
    parent: "FemSpace | None" = field(default=None, repr=False)

    @property
    def n_dofs(self) -> int:
        return self.n_interior + self.n_boundary

    @property
    def interior(self) -> slice:
        return slice(0, self.n_interior)

    @property
    def bnd(self) -> slice:
        return slice(self.n_interior, self.n_dofs)

    @property
    def normals(self) -> np.ndarray:
        return self.boundary.normals

    def to_ambient(self, coeffs) -> np.ndarray:
        """Vertex vector field, shape (V, 3)."""
        return (self.N @ np.asarray(coeffs, dtype=float)).reshape(-1, 3)

    def from_ambient(self, field_v3) -> np.ndarray:
        """Orthogonal projection of an ambient vertex field onto the space.

        Only meaningful for an undeflated space, where ``N`` is orthonormal.
        """
        return self.N.T @ np.asarray(field_v3, dtype=float).reshape(-1)

    def check_same(self, other: "FemSpace"):
        if other is not self and (
            other.mesh is not self.mesh or other.n_boundary != self.n_boundary
        ):
            raise MeshMismatchError("objects are defined on different spaces")


def build_constraint_basis(mesh: Mesh, boundary: BoundarySkeleton) -> FemSpace:
    frames = tangent_frames(boundary.normals)
    is_bnd = np.zeros(mesh.n_vertices, dtype=bool)
    is_bnd[boundary.vertices] = True
    interior = np.flatnonzero(~is_bnd)
    n_int = 3 * len(interior)
    n_bnd = 2 * boundary.n_vertices

    rows_i = (3 * interior[:, None] + np.arange(3)).ravel()
    cols_i = np.arange(n_int)
    vals_i = np.ones(n_int)

    bv = boundary.vertices
    rows_b = np.broadcast_to(3 * bv[:, None, None] + np.arange(3), (len(bv), 2, 3)).ravel()
    cols_b = np.broadcast_to(
        n_int + 2 * np.arange(len(bv))[:, None, None] + np.arange(2)[None, :, None],
        (len(bv), 2, 3),
    ).ravel()
    vals_b = frames.ravel()

    N = sp.csr_matrix(
        (
            np.concatenate([vals_i, vals_b]),
            (np.concatenate([rows_i, rows_b]), np.concatenate([cols_i, cols_b])),
        ),
        shape=(3 * mesh.n_vertices, n_int + n_bnd),
    )
    N.eliminate_zeros()
    frames.setflags(write=False)
    return FemSpace(
        mesh=mesh,
        boundary=boundary,
        N=N,
        n_interior=n_int,
        n_boundary=n_bnd,
        frames=frames,
        interior_vertices=interior,
    )


def form_matrix(space: FemSpace, forms: AssembledForms, params: ProblemParams):
    """``S_eta = N^T (K - alpha M + theta D + eta B) N``."""
    if params.eta is None:
        raise ValueError("eta has not been selected")
    A = forms.combine(params.alpha, params.theta, params.eta)
    S = (space.N.T @ A @ space.N).tocsr()
    return ((S + S.T) * 0.5).tocsr()


def restrict(space: FemSpace, A) -> sp.csr_matrix:
    """``N^T A N`` for any ambient matrix."""
    S = (space.N.T @ A @ space.N).tocsr()
    return ((S + S.T) * 0.5).tocsr()


def boundary_mass(space: FemSpace, forms: AssembledForms) -> sp.csr_matrix:
    """Tangential boundary mass on the boundary block, ``(N^T B N)_bb``."""
    Bc = restrict(space, forms.B)
    return Bc[space.bnd, space.bnd].tocsr()


def form_product(space, forms, params, u, v) -> float:
    S = form_matrix(space, forms, params)
    return float(np.asarray(u) @ (S @ np.asarray(v)))


@dataclass(eq=False)
class TraceField:
    """Tangent vector field on the boundary vertices.

    ``values[i]`` holds the two coordinates in the tangent frame of boundary
    vertex ``i``; the ambient representation is orthogonal to the vertex
    normal by construction.
    """

    values: np.ndarray
    frames: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1, 2)
        if len(self.values) != len(self.frames):
            raise MeshMismatchError(
                f"{len(self.values)} trace values for {len(self.frames)} boundary vertices"
            )

    @classmethod
    def from_flat(cls, space: FemSpace, flat) -> "TraceField":
        return cls(np.asarray(flat, dtype=float).reshape(-1, 2), space.frames, space.normals)

    @classmethod
    def zeros(cls, space: FemSpace) -> "TraceField":
        return cls(np.zeros((space.boundary.n_vertices, 2)), space.frames, space.normals)

    @classmethod
    def from_ambient(cls, space: FemSpace, vecs) -> "TraceField":
        """Tangential components ``nu x (w x nu)`` of ambient boundary vectors."""
        vecs = np.asarray(vecs, dtype=float).reshape(-1, 3)
        return cls(np.einsum("bkc,bc->bk", space.frames, vecs), space.frames, space.normals)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def ambient(self) -> np.ndarray:
        return np.einsum("bk,bkc->bc", self.values, self.frames)

    def rotate(self) -> "TraceField":
        """``nu x f``; in a right-handed frame (a, b) -> (-b, a)."""
        v = self.values
        return self._new(np.stack([-v[:, 1], v[:, 0]], axis=1))

    def cross_normal(self) -> "TraceField":
        """``f x nu``."""
        v = self.values
        return self._new(np.stack([v[:, 1], -v[:, 0]], axis=1))

    def _new(self, values):
        return TraceField(values, self.frames, self.normals)

    def _check(self, other):
        if other.frames is not self.frames and not np.array_equal(other.frames, self.frames):
            raise MeshMismatchError("trace fields live on different boundaries")

    def __add__(self, other):
        self._check(other)
        return self._new(self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return self._new(self.values - other.values)

    def __neg__(self):
        return self._new(-self.values)

    def __mul__(self, a):
        return self._new(a * self.values)

    __rmul__ = __mul__


def tangential_trace(space: FemSpace, coeffs) -> TraceField:
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (space.n_dofs,):
        raise MeshMismatchError(f"expected {space.n_dofs} coefficients, got {coeffs.shape}")
    return TraceField.from_flat(space, coeffs[space.bnd])


def trace_inner(space, forms, f: TraceField, g: TraceField, Bbb=None) -> float:
    """TL^2(Gamma) inner product."""
    if Bbb is None:
        Bbb = boundary_mass(space, forms)
    return float(f.flat @ (Bbb @ g.flat))


def facet_tangential_gradients(boundary: BoundarySkeleton, mesh: Mesh) -> np.ndarray:
    """Surface gradients of the three hat functions per facet, shape (F, 3, 3)."""
    p = mesh.vertices[boundary.facets]
    n = boundary.facet_normals
    two_a = 2.0 * boundary.areas[:, None]
    opp = [(1, 2), (2, 0), (0, 1)]
    return np.stack(
        [np.cross(n, p[:, b] - p[:, a]) / two_a for a, b in opp], axis=1
    )


def surface_rotated_gradient(space: FemSpace, forms: AssembledForms, psi):
    """Surface-divergence-free data ``f = nu x grad_Gamma psi``.

    The facetwise constant rotated gradient is L^2(Gamma)-projected onto the
    vertex tangent fields. Returns ``(f, weak_div)`` where ``weak_div`` is
    ``max_j |int_Gamma f . grad_Gamma chi_j| / ||f||_{L^2(Gamma)}`` over the
    boundary hat functions ``chi_j`` -- zero before projection, so it measures
    the projection error only.
    """
    bnd, mesh = space.boundary, space.mesh
    psi = np.asarray(psi, dtype=float).reshape(-1)
    if psi.shape != (bnd.n_vertices,):
        raise MeshMismatchError(f"psi needs {bnd.n_vertices} values, got {psi.shape}")
    lf = bnd.local_facets
    grads = facet_tangential_gradients(bnd, mesh)
    g = np.einsum("fk,fkc->fc", psi[lf], grads)
    f_facet = np.cross(bnd.facet_normals, g)

    rhs = np.zeros((bnd.n_vertices, 2))
    w = bnd.areas / 3.0
    for k in range(3):
        t = space.frames[lf[:, k]]
        np.add.at(rhs, lf[:, k], w[:, None] * np.einsum("fjc,fc->fj", t, f_facet))
    Bbb = boundary_mass(space, forms)
    coef = spl.spsolve(Bbb.tocsc(), rhs.ravel())
    f = TraceField.from_flat(space, coef)

    amb = f.ambient()
    mean = amb[lf].mean(axis=1)
    r = np.zeros(bnd.n_vertices)
    for k in range(3):
        np.add.at(r, lf[:, k], bnd.areas * np.einsum("fc,fc->f", mean, grads[:, k]))
    norm = np.sqrt(max(f.flat @ (Bbb @ f.flat), 0.0))
    weak_div = float(np.abs(r).max() / norm) if norm > 0 else 0.0
    return f, weak_div
