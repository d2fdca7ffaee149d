"""Steklov spectrum of the penalized curl-curl form and auxiliary spectra.

The discrete Steklov problem is the symmetric pencil

    S_eta u = mu B u,      lambda = eta - mu,

where ``S_eta`` is positive definite for a coercive ``eta`` and ``B`` is the
tangential boundary mass (nonzero on the boundary block only). Eliminating the
interior unknowns gives the boundary pencil ``T x = mu B_bb x`` with both
matrices SPD.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spl

from .assembly import (
    AssembledForms,
    FemSpace,
    ProblemParams,
    TraceField,
    boundary_mass,
    form_matrix,
    restrict,
    scalar_mass,
    scalar_stiffness,
)
from .errors import (
    CoercivityError,
    DomainTooCoarseError,
    EigensolverError,
    RayleighDivisionError,
)
from .linalg import SymmetricFactor
from .mesh import Mesh

log = logging.getLogger(__name__)

PIVOT_FLOOR = 1e-10
MAX_DOUBLINGS = 60
# dense eigensolves below this many unknowns
DENSE_LIMIT = 1500
MULTIPLICITY_RTOL = 1e-7


def _start_vector(n):
    return np.random.default_rng(20240607).standard_normal(n)


# --------------------------------------------------------------------------- eta


def select_eta(space: FemSpace, forms: AssembledForms, params: ProblemParams) -> float:
    """Smallest certified coercive boundary shift.

    Returns 0 for ``alpha <= 0``; otherwise the first
    ``max(1, alpha) * 2**k`` (k = 0..59) for which ``S_eta`` factors with all
    pivots above ``1e-10 * ||S_eta||``.
    """
    if params.alpha <= 0:
        return 0.0
    S0 = form_matrix(space, forms, params.with_eta(0.0))
    ii = space.interior
    if space.n_interior:
        # eta only touches the boundary block: an indefinite interior block
        # cannot be repaired by any shift
        fac = SymmetricFactor(S0[ii, ii], PIVOT_FLOOR)
        if not fac.positive_definite:
            raise CoercivityError(
                f"interior block indefinite for alpha={params.alpha} "
                f"(inertia {fac.inertia}); alpha lies above the first Dirichlet "
                "eigenvalue, deflate the low Dirichlet modes"
            )
    Bc = sp.block_diag(
        [sp.csr_matrix((space.n_interior, space.n_interior)), boundary_mass(space, forms)]
    ).tocsr()
    base = max(1.0, float(params.alpha))
    for k in range(MAX_DOUBLINGS):
        eta = base * 2.0**k
        if SymmetricFactor((S0 + eta * Bc).tocsc(), PIVOT_FLOOR).positive_definite:
            return eta
    raise CoercivityError(
        f"no coercive eta found after {MAX_DOUBLINGS} doublings (alpha={params.alpha})"
    )


def resolve_params(space, forms, params: ProblemParams) -> ProblemParams:
    if params.eta is None:
        return params.with_eta(select_eta(space, forms, params))
    return params


# -------------------------------------------------------------- condensation


@dataclass(eq=False)
class CondensedOperator:
    """Boundary Schur complement ``T = S_bb - S_bi S_ii^{-1} S_ib``."""

    T: np.ndarray
    Bbb: sp.csr_matrix
    S: sp.csr_matrix
    eta: float
    space: FemSpace
    _interior: SymmetricFactor = field(repr=False)
    _S_ib: sp.csr_matrix = field(repr=False)

    def extend(self, xb):
        """Full coordinates with the interior part ``-S_ii^{-1} S_ib x_b``."""
        xb = np.asarray(xb, dtype=float)
        ni = self.space.n_interior
        out = np.empty((ni + xb.shape[0],) + xb.shape[1:])
        out[ni:] = xb
        if ni:
            out[:ni] = -self._interior.solve(self._S_ib @ xb)
        return out


def condense_to_boundary(space, forms, params, eta=None) -> CondensedOperator:
    if eta is None:
        eta = resolve_params(space, forms, params).eta
    S = form_matrix(space, forms, params.with_eta(eta))
    ii, bb = space.interior, space.bnd
    S_bb = S[bb, bb].toarray()
    S_ib = S[ii, bb].tocsr()
    fac = SymmetricFactor(S[ii, ii].tocsc(), PIVOT_FLOOR)
    if not fac.positive_definite:
        raise CoercivityError(
            f"interior block not positive definite (inertia {fac.inertia}, "
            f"alpha={params.alpha})"
        )
    if space.n_interior:
        X = fac.solve(S_ib.toarray())
        T = S_bb - S_ib.T @ X
    else:
        T = S_bb
    T = 0.5 * (T + T.T)
    return CondensedOperator(
        T=T,
        Bbb=boundary_mass(space, forms),
        S=S,
        eta=float(eta),
        space=space,
        _interior=fac,
        _S_ib=S_ib,
    )


# ------------------------------------------------------------------- Steklov


@dataclass(eq=False)
class SteklovBasis:
    """Steklov eigenpairs ordered by ``lambda_1 >= lambda_2 >= ...``.

    ``modes[:, n]`` is ``u_n`` in constrained coordinates normalized to
    ``<u_n, u_n>^eta = 1``; ``traces[:, n]`` is the frame representation of
    ``u_n^Gamma = sqrt(mu_n) pi_T u_n``, orthonormal in TL^2(Gamma).
    """

    params: ProblemParams
    lambdas: np.ndarray
    mu: np.ndarray
    modes: np.ndarray
    traces: np.ndarray
    space: FemSpace
    S: sp.csr_matrix
    Bbb: sp.csr_matrix
    residuals: np.ndarray
    condensed: CondensedOperator | None = None

    @property
    def eta(self) -> float:
        return self.params.eta

    @property
    def size(self) -> int:
        return len(self.lambdas)

    @property
    def complete(self) -> bool:
        return self.size == self.space.n_boundary

    def trace(self, n: int) -> TraceField:
        """``u_n^Gamma`` (0-based index)."""
        return TraceField.from_flat(self.space, self.traces[:, n])

    def gamma(self) -> np.ndarray:
        """Eigenvalues ``(lambda_n - eta)^-1`` of the NtD-type operator."""
        return 1.0 / (self.lambdas - self.eta)

    def multiplicities(self, rtol=MULTIPLICITY_RTOL):
        return group_multiplicities(self.lambdas, rtol)


def steklov_spectrum(space, forms, params, k=None) -> SteklovBasis:
    """Discrete Steklov eigenpairs.

    ``k=None`` returns all ``space.n_boundary`` pairs from a dense solve of
    the condensed pencil; an integer ``k`` uses shift-invert Lanczos on the
    full sparse pencil and returns the ``k`` largest ``lambda``.
    """
    params = resolve_params(space, forms, params)
    nb = space.n_boundary
    if nb == 0:
        raise DomainTooCoarseError("mesh has no boundary-tangential dofs")
    if k is None or k >= nb:
        cond = condense_to_boundary(space, forms, params, params.eta)
        Bbb = cond.Bbb.toarray()
        try:
            sla.cholesky(cond.T, lower=True)
        except np.linalg.LinAlgError:
            raise CoercivityError("condensed operator T is not positive definite") from None
        mu, X = sla.eigh(cond.T, Bbb)
        if mu[0] <= 0:
            raise CoercivityError(f"non-positive boundary eigenvalue mu={mu[0]:.3e}")
        X = X / np.sqrt(mu)  # now x^T T x = 1
        modes = cond.extend(X)
        S, Bsp = cond.S, cond.Bbb
    else:
        cond = None
        S = form_matrix(space, forms, params)
        Bsp = boundary_mass(space, forms)
        fac = SymmetricFactor(S.tocsc(), PIVOT_FLOOR)
        if not fac.positive_definite:
            raise CoercivityError(f"S_eta not positive definite (inertia {fac.inertia})")
        Bc = sp.block_diag([sp.csr_matrix((space.n_interior,) * 2), Bsp]).tocsc()
        op_inv = spl.LinearOperator(S.shape, matvec=fac.solve, dtype=float)
        try:
            mu, V = spl.eigsh(
                S, k=k, M=Bc, sigma=0.0, which="LM", OPinv=op_inv,
                v0=_start_vector(S.shape[0]), tol=1e-13,
            )
        except spl.ArpackNoConvergence as exc:
            raise EigensolverError(f"shift-invert Lanczos did not converge: {exc}") from None
        order = np.argsort(mu)
        mu, V = mu[order], V[:, order]
        norms = np.sqrt(np.einsum("ij,ij->j", V, S @ V))
        modes = V / norms

    mu = np.asarray(mu)
    traces = modes[space.bnd] * np.sqrt(mu)
    R = S @ modes
    Bm = np.zeros_like(modes)
    Bm[space.bnd] = Bsp @ modes[space.bnd]
    resid = np.linalg.norm(R - Bm * mu, axis=0) / np.linalg.norm(R, axis=0)
    worst = float(resid.max())
    if worst > 1e-6:
        raise EigensolverError(f"eigen-residual {worst:.2e} too large", residual=worst)
    return SteklovBasis(
        params=params,
        lambdas=params.eta - mu,
        mu=mu,
        modes=modes,
        traces=traces,
        space=space,
        S=S,
        Bbb=Bsp,
        residuals=resid,
        condensed=cond,
    )


def basis_diagnostics(basis: SteklovBasis) -> dict:
    """Orthonormality, residual and interior-equation checks."""
    U, S, space = basis.modes, basis.S, basis.space
    gram = U.T @ (S @ U)
    tg = basis.traces.T @ (basis.Bbb @ basis.traces)
    R = S @ U
    interior = np.linalg.norm(R[space.interior], axis=0) / np.linalg.norm(R, axis=0)
    eye = np.eye(basis.size)
    return {
        "gram_error": float(np.abs(gram - eye).max()),
        "trace_gram_error": float(np.abs(tg - eye).max()),
        "max_residual": float(basis.residuals.max()),
        "max_interior_residual": float(interior.max()) if interior.size else 0.0,
    }


def group_multiplicities(values, rtol=MULTIPLICITY_RTOL):
    """Cluster sorted values closer than ``rtol`` (relative); ``[(mean, dim)]``."""
    values = np.asarray(values, dtype=float)
    groups = []
    start = 0
    for i in range(1, len(values) + 1):
        if i == len(values) or abs(values[i] - values[i - 1]) > rtol * max(
            abs(values[i - 1]), abs(values[i]), 1e-300
        ):
            groups.append((float(values[start:i].mean()), i - start))
            start = i
    return groups


def rayleigh_quotient(space, forms, params, u) -> float:
    """``(|curl u|^2 - alpha |u|^2 + theta |div u|^2) / |pi_T u|^2_Gamma``."""
    u = np.asarray(u, dtype=float)
    if not np.any(u[space.bnd]):
        raise RayleighDivisionError("trial field has zero boundary trace")
    A = forms.K - params.alpha * forms.M + params.theta * forms.D
    w = space.N @ u
    den = float(w @ (forms.B @ w))
    if den <= 0.0:
        raise RayleighDivisionError("trial field has zero boundary trace")
    return float(w @ (A @ w)) / den


# ------------------------------------------------------------ auxiliary spectra


def _smallest_eigs(A, M, k, shift, dense_limit=DENSE_LIMIT):
    n = A.shape[0]
    k = n if k is None else min(k, n)
    if n <= dense_limit or k >= n - 1:
        w, V = sla.eigh(A.toarray(), M.toarray())
        return w[:k], V[:, :k]
    try:
        w, V = spl.eigsh(A.tocsc(), k=k, M=M.tocsc(), sigma=shift, which="LM",
                         v0=_start_vector(n), tol=1e-12)
    except spl.ArpackNoConvergence as exc:
        raise EigensolverError(f"eigsh did not converge: {exc}") from None
    order = np.argsort(w)
    return w[order], V[:, order]


@dataclass(eq=False)
class DirichletSpectrum:
    values: np.ndarray
    modes: np.ndarray  # constrained coordinates, zero boundary block, M-normalized

    def multiplicities(self, rtol=MULTIPLICITY_RTOL):
        return group_multiplicities(self.values, rtol)


def dirichlet_spectrum(space, forms, theta=1.0, k=None) -> DirichletSpectrum:
    """Eigenpairs of ``(K + theta D) x = A M x`` on the interior dofs."""
    if space.n_interior == 0:
        raise DomainTooCoarseError("no interior degrees of freedom")
    ii = space.interior
    A = restrict(space, forms.K + theta * forms.D)[ii, ii]
    M = restrict(space, forms.M)[ii, ii]
    w, V = _smallest_eigs(A, M, k, shift=0.0)
    modes = np.zeros((space.n_dofs, V.shape[1]))
    modes[ii] = V
    return DirichletSpectrum(values=w, modes=modes)


@dataclass(eq=False)
class NeumannSpectrum:
    values: np.ndarray
    vectors: np.ndarray  # scalar nodal values, mass-normalized


def neumann_laplacian_spectrum(mesh: Mesh, k=None) -> NeumannSpectrum:
    """Scalar P1 Neumann Laplacian eigenpairs (no constraints)."""
    w, V = _smallest_eigs(scalar_stiffness(mesh), scalar_mass(mesh), k, shift=-1.0)
    return NeumannSpectrum(values=w, vectors=V)


@dataclass(eq=False)
class MagneticSpectrum:
    values: np.ndarray
    modes: np.ndarray
    div_norms: np.ndarray
    theta_pen: float
    div_tol: float
    n_candidates: int


def magnetic_spectrum(space, forms, k=None, theta_pen=100.0, div_tol=1e-3):
    """Penalized surrogate of the magnetic curl-curl problem.

    Solves ``(K + theta_pen D) x = lambda M x`` on the tangential space and
    keeps the pairs whose divergence seminorm ``sqrt(x^T D x)`` is at most
    ``div_tol`` times the L^2 norm. ``k`` caps the number of candidate pairs
    (all when None).
    """
    K = restrict(space, forms.K)
    D = restrict(space, forms.D)
    M = restrict(space, forms.M)
    w, V = _smallest_eigs(K + theta_pen * D, M, k, shift=-1.0)
    l2 = np.sqrt(np.einsum("ij,ij->j", V, M @ V))
    div = np.sqrt(np.maximum(np.einsum("ij,ij->j", V, D @ V), 0.0)) / l2
    keep = div <= div_tol
    if not keep.any():
        warnings.warn(
            f"no magnetic eigenpair passed the divergence filter "
            f"(theta_pen={theta_pen}, div_tol={div_tol}, min div {div.min():.2e})",
            RuntimeWarning,
            stacklevel=2,
        )
    return MagneticSpectrum(
        values=w[keep],
        modes=V[:, keep] / l2[keep],
        div_norms=div[keep],
        theta_pen=float(theta_pen),
        div_tol=float(div_tol),
        n_candidates=len(w),
    )


@dataclass(eq=False)
class AuxSpectra:
    dirichlet: DirichletSpectrum
    neumann_laplacian: NeumannSpectrum
    magnetic: MagneticSpectrum


def aux_spectra(space, forms, theta=1.0, k=20, theta_pen=100.0, div_tol=1e-3) -> AuxSpectra:
    return AuxSpectra(
        dirichlet=dirichlet_spectrum(space, forms, theta, k),
        neumann_laplacian=neumann_laplacian_spectrum(space.mesh, k),
        magnetic=magnetic_spectrum(space, forms, None if k is None else 4 * k, theta_pen, div_tol),
    )


def _is_constant(vec, rtol=1e-8):
    vec = np.asarray(vec)
    scale = np.abs(vec).max()
    return scale > 0 and (vec.max() - vec.min()) <= rtol * scale


def zero_in_sigma_check(alpha, theta, aux: AuxSpectra, tol=1e-6) -> dict:
    """Distance from ``alpha`` to ``theta * lambda^N  U  lambda^M``.

    Neumann eigenvalues with a constant eigenfunction are skipped: their
    gradient field vanishes and gives no solution at zero.
    """
    best = {"distance": np.inf, "source": None, "index": None, "value": None}
    neu = aux.neumann_laplacian
    for n, val in enumerate(neu.values):
        if _is_constant(neu.vectors[:, n]):
            continue
        d = abs(alpha - theta * val)
        if d < best["distance"]:
            best = {"distance": d, "source": "neumann", "index": n, "value": float(theta * val)}
    for n, val in enumerate(aux.magnetic.values):
        d = abs(alpha - val)
        if d < best["distance"]:
            best = {"distance": d, "source": "magnetic", "index": n, "value": float(val)}
    best["distance"] = float(best["distance"])
    best["risky"] = bool(best["distance"] < tol)
    best["verdict"] = "risky" if best["risky"] else "safe"
    return best


# -------------------------------------------------------------- resolvent


def resolvent_condition_sweep(space, forms, params, lambdas, condensed=None) -> list[float]:
    """2-norm condition number of the boundary pencil ``T - (eta - lambda) B_bb``.

    The pencil is whitened with the Cholesky factor of ``B_bb`` so the
    estimate reflects the distance of ``lambda`` to the Steklov spectrum and
    not the conditioning of the boundary mass.
    """
    lambdas = list(lambdas)
    if not lambdas:
        return []
    if condensed is None:
        condensed = condense_to_boundary(space, forms, resolve_params(space, forms, params))
    L = sla.cholesky(condensed.Bbb.toarray(), lower=True)
    Tw = sla.solve_triangular(L, sla.solve_triangular(L, condensed.T, lower=True).T, lower=True)
    Tw = 0.5 * (Tw + Tw.T)
    w = sla.eigvalsh(Tw)
    out = []
    for lam in lambdas:
        shifted = np.abs(w - (condensed.eta - lam))
        lo = shifted.min()
        out.append(float(np.inf) if lo == 0 else float(shifted.max() / lo))
    return out
