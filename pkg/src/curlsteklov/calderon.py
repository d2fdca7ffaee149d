"""Spectral solution operators, trace-space norms and the Calderon operator.

All operators expand boundary data in the orthonormal Steklov trace basis
``u_n^Gamma`` of a :class:`SteklovBasis` and resum with the appropriate
weights. Real eigenfunctions are used throughout, so dual data and ordinary
data share the same coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .assembly import FemSpace, ProblemParams, TraceField, boundary_mass, form_matrix
from .errors import CoercivityError, MeshMismatchError, ZeroInSigmaError
from .linalg import SymmetricFactor
from .spectral import PIVOT_FLOOR, SteklovBasis

ZERO_TOL = 1e-10


@dataclass(eq=False)
class TraceExpansion:
    """Coefficients ``c_n = (f, u_n^Gamma)`` of a trace field."""

    coefficients: np.ndarray
    basis: SteklovBasis

    def __len__(self):
        return len(self.coefficients)


@dataclass(eq=False)
class DualTraceData:
    """A functional ``F`` given by its values ``c_n = <F, u_n^Gamma>``."""

    coefficients: np.ndarray
    basis: SteklovBasis

    @classmethod
    def from_trace(cls, expansion: TraceExpansion) -> "DualTraceData":
        return cls(expansion.coefficients.copy(), expansion.basis)

    def pair(self, f: TraceField) -> float:
        """``<F, f> = sum c_n d_n`` with ``d`` the expansion of ``f``."""
        d = expand_trace(self.basis, f).coefficients
        return float(self.coefficients @ d)


def _coeffs(basis, data):
    c = np.asarray(getattr(data, "coefficients", data), dtype=float)
    if getattr(data, "basis", basis) is not basis:
        raise MeshMismatchError("expansion belongs to a different Steklov basis")
    if c.ndim != 1 or len(c) > basis.size:
        raise MeshMismatchError(f"{len(c)} coefficients for a basis of size {basis.size}")
    return c


def _check_trace(basis, f: TraceField):
    if len(f.values) * 2 != basis.space.n_boundary or not np.array_equal(
        f.frames, basis.space.frames
    ):
        raise MeshMismatchError("trace field and basis live on different meshes")


def expand_trace(basis: SteklovBasis, f: TraceField) -> TraceExpansion:
    _check_trace(basis, f)
    c = basis.traces.T @ (basis.Bbb @ f.flat)
    return TraceExpansion(c, basis)


def reconstruct_trace(expansion: TraceExpansion) -> TraceField:
    b = expansion.basis
    c = expansion.coefficients
    return TraceField.from_flat(b.space, b.traces[:, : len(c)] @ c)


def _guard_zero(basis: SteklovBasis, m: int):
    lam = basis.lambdas[:m]
    scale = max(1.0, float(np.abs(basis.lambdas).max()))
    bad = np.flatnonzero(np.abs(lam) < ZERO_TOL * scale)
    if bad.size:
        n = int(bad[0])
        raise ZeroInSigmaError(
            f"lambda_{n + 1} = {lam[n]:.3e} is zero to tolerance; the Neumann problem "
            "at eta=0 is not uniquely solvable",
            index=n,
        )


def solve_neumann_spectral(basis: SteklovBasis, expansion) -> np.ndarray:
    """Solution of the zero-shift problem ``<u, phi>^0 = -(f, phi)_Gamma``.

    ``u = sum sqrt(mu_n) / lambda_n * c_n * u_n`` in constrained coordinates.
    """
    c = _coeffs(basis, expansion)
    m = len(c)
    _guard_zero(basis, m)
    w = np.sqrt(basis.mu[:m]) / basis.lambdas[:m] * c
    return basis.modes[:, :m] @ w


def calderon_apply(basis: SteklovBasis, expansion) -> TraceField:
    """``C(f) = nu x sum (c_n / lambda_n) u_n^Gamma``."""
    c = _coeffs(basis, expansion)
    m = len(c)
    _guard_zero(basis, m)
    g = basis.traces[:, :m] @ (c / basis.lambdas[:m])
    return TraceField.from_flat(basis.space, g).rotate()


def solve_tangential_dirichlet(basis: SteklovBasis, f: TraceField) -> np.ndarray:
    """Field of the harmonic-type space whose trace is ``f``."""
    c = expand_trace(basis, f).coefficients
    return basis.modes @ (np.sqrt(basis.mu) * c)


def solve_rotated_dirichlet(basis: SteklovBasis, f: TraceField) -> np.ndarray:
    """Field with ``nu x u = f`` on the boundary: expand ``f x nu`` instead."""
    return solve_tangential_dirichlet(basis, f.cross_normal())


def solve_dual(basis: SteklovBasis, F: DualTraceData) -> np.ndarray:
    """Solution of ``<u, phi>^0 = -<F, phi>`` for functional data."""
    return solve_neumann_spectral(basis, _coeffs(basis, F))


def calderon_dual(basis: SteklovBasis, F: DualTraceData) -> TraceField:
    """The Calderon operator extended to functional data."""
    return calderon_apply(basis, _coeffs(basis, F))


def trace_norm(basis: SteklovBasis, expansion, s: float) -> float:
    """``(sum c_n^2 |lambda_n - eta|^(2 s))^(1/2)``; negative ``s`` gives the dual norm."""
    c = _coeffs(basis, expansion)
    w = np.abs(basis.lambdas[: len(c)] - basis.eta) ** (2.0 * s)
    return float(np.sqrt(np.sum(c**2 * w)))


def direct_solve(space: FemSpace, forms, params: ProblemParams, f: TraceField,
                 allow_indefinite=False) -> np.ndarray:
    """Solve ``S_eta u = -B f`` by a sparse symmetric factorization.

    ``S_eta`` must be positive definite unless ``allow_indefinite`` is set,
    in which case only nonsingularity is required (used for ``alpha > 0`` at
    zero shift, where the problem is solvable off the Steklov spectrum).
    """
    if params.eta is None:
        raise ValueError("direct_solve needs an explicit eta")
    S = form_matrix(space, forms, params)
    fac = SymmetricFactor(S.tocsc(), PIVOT_FLOOR)
    if not fac.positive_definite and not (allow_indefinite and fac.nonsingular):
        raise CoercivityError(
            f"factorization failed: S_eta not positive definite (inertia {fac.inertia})"
        )
    rhs = np.zeros(space.n_dofs)
    rhs[space.bnd] = -(boundary_mass(space, forms) @ f.flat)
    u = fac.solve(rhs)
    res = np.linalg.norm(S @ u - rhs) / max(np.linalg.norm(rhs), np.finfo(float).tiny)
    if res > 1e-10 and np.linalg.norm(rhs) > 0:
        # one step of iterative refinement for ill-conditioned pivots
        u = u + fac.solve(rhs - S @ u)
    return u


@dataclass(eq=False)
class NtDOperator:
    """NtD-type boundary operator ``A_eta^Gamma`` in two representations.

    ``diagonal`` holds ``(lambda_n - eta)^-1`` (matrix in the Steklov trace
    basis). ``dense`` is the Gram matrix ``-B_bb T^{-1} B_bb`` in frame
    coordinates, i.e. ``g^T dense f = (g, A f)_Gamma``; symmetric negative
    definite. ``apply`` evaluates ``A f = -T^{-1} B_bb f``.
    """

    diagonal: np.ndarray
    dense: np.ndarray
    _T_factor: tuple
    _Bbb: object
    space: FemSpace

    def apply(self, f: TraceField) -> TraceField:
        x = sla.cho_solve(self._T_factor, self._Bbb @ f.flat)
        return TraceField.from_flat(self.space, -x)


def _schur(S, space):
    ii, bb = space.interior, space.bnd
    T = S[bb, bb].toarray()
    if space.n_interior:
        fac = SymmetricFactor(S[ii, ii].tocsc(), PIVOT_FLOOR)
        S_ib = S[ii, bb].toarray()
        T = T - S_ib.T @ fac.solve(S_ib)
    return 0.5 * (T + T.T)


def ntd_matrix(basis: SteklovBasis) -> NtDOperator:
    if not basis.complete:
        raise MeshMismatchError("NtD matrix needs the full Steklov basis")
    if basis.condensed is not None:
        T = basis.condensed.T
    else:
        T = _schur(basis.S, basis.space)
    Bd = basis.Bbb.toarray()
    fac = sla.cho_factor(T, lower=True)
    dense = -Bd @ sla.cho_solve(fac, Bd)
    dense = 0.5 * (dense + dense.T)
    return NtDOperator(
        diagonal=1.0 / (basis.lambdas - basis.eta),
        dense=dense,
        _T_factor=fac,
        _Bbb=basis.Bbb,
        space=basis.space,
    )
