"""Deflation of low Dirichlet modes.

For ``A_n < alpha < A_{n+1}`` the zero-shift form ``<.,.>^0`` is indefinite
on the full tangential space, but coercive on the complement

    V_n^perp = {v : <v, u_k>^0 = 0 for all Dirichlet modes u_k with A_k < alpha}.

The complement is realized by a null-space basis ``Z`` of the constraint rows
``R = U^T S_0`` in constrained coordinates. ``Z`` keeps the boundary block as
the identity, so the boundary-tangential coordinates, the boundary mass and
all traces are those of the parent space.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .assembly import FemSpace, ProblemParams, form_matrix, restrict
from .errors import (
    AlphaOnDirichletSpectrumError,
    CoercivityError,
    DeflationError,
    GapInconsistencyError,
)
from .spectral import SteklovBasis, dirichlet_spectrum, steklov_spectrum

GAP_RTOL = 1e-8
RANK_RTOL = 1e-10


@dataclass(eq=False)
class DeflationSpace:
    """Dirichlet modes below ``alpha`` and the induced constraint rows."""

    modes: np.ndarray  # (n_dofs, m), zero boundary block
    values: np.ndarray  # A_k < alpha
    rows: np.ndarray  # (m, n_dofs), modes^T S_0
    alpha: float
    theta: float
    next_value: float | None  # first computed A_k above alpha

    @property
    def dim(self) -> int:
        return len(self.values)


def dirichlet_modes_below(space: FemSpace, forms, alpha, theta=1.0, k_max=None) -> DeflationSpace:
    """All discrete Dirichlet pairs with ``A_k < alpha``.

    ``k_max`` caps the number of Dirichlet pairs computed (all when None);
    if every computed value lies below ``alpha`` the splitting cannot be
    certified and a :class:`DeflationError` is raised.
    """
    spec = dirichlet_spectrum(space, forms, theta, k_max)
    vals = spec.values
    near = np.abs(vals - alpha) <= GAP_RTOL * np.maximum(1.0, np.abs(vals))
    if near.any():
        k = int(np.flatnonzero(near)[0])
        raise AlphaOnDirichletSpectrumError(
            f"alpha={alpha!r} is within {GAP_RTOL:g} (relative) of A_{k + 1}={vals[k]!r}"
        )
    below = vals < alpha
    m = int(below.sum())
    if m == len(vals) and m < space.n_interior:
        raise DeflationError(
            f"all {m} computed Dirichlet eigenvalues lie below alpha={alpha}; "
            "increase k_max"
        )
    U = spec.modes[:, :m]
    S0 = form_matrix(space, forms, ProblemParams(alpha, theta, 0.0))
    rows = np.asarray((S0 @ U).T)
    return DeflationSpace(
        modes=U,
        values=vals[:m].copy(),
        rows=rows,
        alpha=float(alpha),
        theta=float(theta),
        next_value=float(vals[m]) if m < len(vals) else None,
    )


def build_deflated_space(space: FemSpace, deflation: DeflationSpace) -> FemSpace:
    """Null-space basis of the constraint rows inside ``space``.

    Coordinates of the returned space are ``[w; x_b]`` with ``w`` in an
    orthonormal basis ``Q`` of the interior null space; the parent field is
    ``Z @ [w; x_b]`` with ``Z = [[Q, -R_i^+ R_b], [0, I]]``.
    """
    ni, nb = space.n_interior, space.n_boundary
    m = deflation.dim
    if m == 0:
        Z = sp.identity(space.n_dofs, format="csr")
        return replace(space, restriction=Z, parent=space)
    R = deflation.rows
    Ri, Rb = R[:, :ni], R[:, ni:]
    U_, s, Vt = sla.svd(Ri)
    if s[-1] <= RANK_RTOL * s[0]:
        raise DeflationError(
            f"constraint rows are rank deficient (singular values {s[-1]:.2e} / {s[0]:.2e})"
        )
    Q = Vt[m:].T  # (ni, ni - m), orthonormal null space of Ri
    # minimum-norm interior correction cancelling the boundary coupling
    C = -(Vt[:m].T @ ((U_.T @ Rb) / s[:, None]))
    Z = np.zeros((ni + nb, ni - m + nb))
    Z[:ni, : ni - m] = Q
    Z[:ni, ni - m :] = C
    Z[ni:, ni - m :] = np.eye(nb)
    Zs = sp.csr_matrix(Z)
    Zs.eliminate_zeros()
    return replace(
        space,
        N=(space.N @ Zs).tocsr(),
        n_interior=ni - m,
        restriction=Zs,
        parent=space,
    )


def lift(space: FemSpace, coeffs) -> np.ndarray:
    """Restricted coordinates to parent constrained coordinates."""
    if space.restriction is None:
        return np.asarray(coeffs, dtype=float)
    return space.restriction @ np.asarray(coeffs, dtype=float)


def deflated_steklov_spectrum(space, forms, params: ProblemParams, deflation, k=None):
    """Steklov pipeline on ``V_n^perp``; returns ``(basis, restricted_space)``."""
    sub = build_deflated_space(space, deflation)
    try:
        basis = steklov_spectrum(sub, forms, params, k)
    except CoercivityError as exc:
        nxt = deflation.next_value
        raise CoercivityError(
            f"{exc}; still not coercive after deflating {deflation.dim} Dirichlet modes "
            f"(alpha={params.alpha}, next Dirichlet value {nxt}): alpha is too close to "
            "the next Dirichlet eigenvalue or the deflation is incomplete"
        ) from None
    return basis, sub


def verify_gap(space, forms, deflation: DeflationSpace, alpha=None, theta=None) -> float:
    """Smallest eigenvalue of ``K + theta D`` against ``M`` on the deflated interior."""
    alpha = deflation.alpha if alpha is None else alpha
    theta = deflation.theta if theta is None else theta
    sub = space if space.restriction is not None else build_deflated_space(space, deflation)
    if sub.n_interior == 0:
        raise DeflationError("no interior dofs left after deflation")
    ii = sub.interior
    A = restrict(sub, forms.K + theta * forms.D)[ii, ii].toarray()
    M = restrict(sub, forms.M)[ii, ii].toarray()
    est = float(sla.eigh(A, M, eigvals_only=True, subset_by_index=[0, 0])[0])
    if est <= alpha:
        raise GapInconsistencyError(
            f"deflated Dirichlet bound {est!r} does not exceed alpha={alpha!r}"
        )
    return est


def split(space: FemSpace, forms, deflation: DeflationSpace, v):
    """``v = P_V v + P_perp v`` with ``<.,.>^0``-orthogonal projections."""
    v = np.asarray(v, dtype=float)
    U = deflation.modes
    if U.shape[1] == 0:
        return np.zeros_like(v), v.copy()
    G = deflation.rows @ U
    pv = U @ np.linalg.solve(G, deflation.rows @ v)
    return pv, v - pv


def is_deflated(basis: SteklovBasis) -> bool:
    return basis.space.restriction is not None
