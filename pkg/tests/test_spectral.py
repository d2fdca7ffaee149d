import warnings

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from oracles import full_pencil_mu, relerr

from curlsteklov.assembly import ProblemParams, boundary_mass, form_matrix
from curlsteklov.errors import CoercivityError, DomainTooCoarseError, RayleighDivisionError
from curlsteklov.spectral import (
    aux_spectra,
    basis_diagnostics,
    condense_to_boundary,
    dirichlet_spectrum,
    group_multiplicities,
    magnetic_spectrum,
    neumann_laplacian_spectrum,
    rayleigh_quotient,
    resolvent_condition_sweep,
    select_eta,
    steklov_spectrum,
    zero_in_sigma_check,
)

from conftest import make_setup

NEG = ProblemParams(-1.0, 1.0, 0.0)


def _dirichlet_groups(s, theta=1.0):
    return dirichlet_spectrum(s.space, s.forms, theta).multiplicities()


# ------------------------------------------------------------------ select_eta


def test_select_eta_nonpositive_alpha(cube2):
    assert select_eta(cube2.space, cube2.forms, ProblemParams(-1.0, 1.0, None)) == 0.0
    assert select_eta(cube2.space, cube2.forms, ProblemParams(0.0, 1.0, None)) == 0.0


def test_select_eta_certifies(cube3):
    A1 = _dirichlet_groups(cube3)[0][0]
    p = ProblemParams(0.5 * A1, 1.0, None)
    eta = select_eta(cube3.space, cube3.forms, p)
    assert eta >= max(1.0, p.alpha)
    S = form_matrix(cube3.space, cube3.forms, p.with_eta(eta))
    assert np.linalg.eigvalsh(S.toarray()).min() > 0


def test_select_eta_fails_between_dirichlet_values(cube3pi):
    g = _dirichlet_groups(cube3pi)
    with pytest.raises(CoercivityError):
        select_eta(cube3pi.space, cube3pi.forms, ProblemParams(0.5 * (g[0][0] + g[1][0]), 1.0, None))


# ---------------------------------------------------------------- condensation


def test_condense_without_interior():
    s = make_setup("cube", 1)
    c = condense_to_boundary(s.space, s.forms, NEG, 0.0)
    S = form_matrix(s.space, s.forms, NEG)
    assert np.array_equal(c.T, S.toarray())


def test_condensed_symmetric(cube2):
    c = condense_to_boundary(cube2.space, cube2.forms, NEG, 0.0)
    assert np.abs(c.T - c.T.T).max() <= 1e-12 * np.abs(c.T).max()
    sla.cholesky(c.T)  # kernel triviality: T positive definite


@pytest.mark.parametrize("kind,level,alpha", [("cube", 2, -1.0), ("cube", 3, 0.0), ("ball", 1, -1.0)])
def test_dense_full_pencil_oracle(kind, level, alpha):
    s = make_setup(kind, level)
    assert s.space.n_dofs <= 500
    p = ProblemParams(alpha, 1.0, None)
    basis = steklov_spectrum(s.space, s.forms, p)
    S = form_matrix(s.space, s.forms, basis.params)
    Bc = sp.block_diag([sp.csr_matrix((s.space.n_interior,) * 2), boundary_mass(s.space, s.forms)])
    mu = full_pencil_mu(S, Bc)
    assert len(mu) == basis.size
    assert relerr(basis.mu, mu) < 1e-9


# ----------------------------------------------------------------- Steklov


def test_all_negative_and_count(cube2, ball1):
    for s in (cube2, ball1):
        b = steklov_spectrum(s.space, s.forms, NEG)
        assert b.size == 2 * s.boundary.n_vertices
        assert np.all(b.lambdas < 0)
        assert np.all(np.diff(b.lambdas) <= 0)
        assert np.allclose(b.mu, b.eta - b.lambdas)


@pytest.mark.parametrize("alpha,theta", [(-1.0, 1.0), (0.0, 0.5), (2.0, 2.0)])
def test_basis_invariants(cube3, alpha, theta):
    b = steklov_spectrum(cube3.space, cube3.forms, ProblemParams(alpha, theta, None))
    d = basis_diagnostics(b)
    assert d["gram_error"] < 1e-8
    assert d["trace_gram_error"] < 1e-8
    assert d["max_residual"] < 1e-8
    assert d["max_interior_residual"] < 1e-10


def test_pairing_identity(cube3, rng):
    b = steklov_spectrum(cube3.space, cube3.forms, ProblemParams(1.0, 1.0, None))
    S, Bbb = b.S, b.Bbb
    phis = rng.standard_normal((50, cube3.space.n_dofs))
    for n in (0, 5, b.size - 1):
        u = b.modes[:, n]
        for phi in phis:
            lhs = u @ (S @ phi)
            rhs = -(b.lambdas[n] - b.eta) * (u[cube3.space.bnd] @ (Bbb @ phi[cube3.space.bnd]))
            assert abs(lhs - rhs) <= 1e-8 * max(abs(lhs), np.linalg.norm(S @ u) * np.linalg.norm(phi))


def test_iterative_matches_dense(ball2):
    full = steklov_spectrum(ball2.space, ball2.forms, NEG)
    part = steklov_spectrum(ball2.space, ball2.forms, NEG, k=10)
    assert relerr(part.lambdas, full.lambdas[:10]) < 1e-9
    assert basis_diagnostics(part)["gram_error"] < 1e-8


def test_min_lambda_decreases_under_refinement():
    lows = [steklov_spectrum(make_setup("cube", n).space, make_setup("cube", n).forms, NEG).lambdas[-1]
            for n in (1, 2, 3)]
    assert lows[0] > lows[1] > lows[2]


def test_spectrum_independent_of_eta(cube2):
    a = steklov_spectrum(cube2.space, cube2.forms, NEG)
    b = steklov_spectrum(cube2.space, cube2.forms, NEG.with_eta(3.0))
    assert relerr(b.lambdas, a.lambdas) < 1e-10


# ---------------------------------------------------------------- Rayleigh


def test_rayleigh_quotient(cube3, rng):
    b = steklov_spectrum(cube3.space, cube3.forms, NEG)
    assert -rayleigh_quotient(cube3.space, cube3.forms, NEG, b.modes[:, 0]) == pytest.approx(
        b.lambdas[0], abs=1e-9)
    for _ in range(50):
        u = rng.standard_normal(cube3.space.n_dofs)
        assert -rayleigh_quotient(cube3.space, cube3.forms, NEG, u) <= b.lambdas[0] + 1e-9
    u = np.zeros(cube3.space.n_dofs)
    u[cube3.space.interior] = 1.0
    with pytest.raises(RayleighDivisionError):
        rayleigh_quotient(cube3.space, cube3.forms, NEG, u)


# ------------------------------------------------------------ aux spectra


def test_dirichlet_triple_on_cube(cube3pi):
    d = dirichlet_spectrum(cube3pi.space, cube3pi.forms)
    assert np.all(d.values > 0) and np.all(np.diff(d.values) >= 0)
    assert d.values[2] - d.values[0] <= 1e-8 * d.values[0]
    assert d.values[3] > d.values[2] * (1 + 1e-3)
    # frozen from an independent scalar P1 assembly (3 copies of the scalar value)
    assert d.values[0] == pytest.approx(4.449504378326938, rel=1e-10)


def test_dirichlet_needs_interior():
    s = make_setup("cube", 1)
    with pytest.raises(DomainTooCoarseError):
        dirichlet_spectrum(s.space, s.forms)


def test_neumann_spectrum(cube3pi):
    ns = neumann_laplacian_spectrum(cube3pi.mesh, 6)
    assert abs(ns.values[0]) < 1e-9
    v = ns.vectors[:, 0]
    assert (v.max() - v.min()) <= 1e-8 * np.abs(v).max()
    assert np.all(ns.values >= -1e-10)
    # separation of variables: the next three values approach 1
    finer = neumann_laplacian_spectrum(make_setup("cube", 4, float(np.pi)).mesh, 4).values
    assert np.all(np.abs(finer[1:4] - 1) < np.abs(ns.values[1:4] - 1))
    assert np.all(np.abs(finer[1:4] - 1) < 0.06)


def test_magnetic_default_filter_is_empty_with_warning(cube3):
    with pytest.warns(RuntimeWarning, match="divergence filter"):
        m = magnetic_spectrum(cube3.space, cube3.forms)
    assert len(m.values) == 0 and m.n_candidates > 0


def test_magnetic_penalty_doubling_stable(cube3pi):
    lo = magnetic_spectrum(cube3pi.space, cube3pi.forms, theta_pen=2000.0)
    hi = magnetic_spectrum(cube3pi.space, cube3pi.forms, theta_pen=4000.0)
    assert len(lo.values) > 0
    assert np.all(lo.div_norms <= lo.div_tol)
    assert np.all(lo.values >= -1e-8)
    for v in lo.values:
        assert np.min(np.abs(hi.values - v)) <= 0.01 * v


def test_sigma_check_negative_alpha(cube3):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        aux = aux_spectra(cube3.space, cube3.forms, 1.0, 10)
    r = zero_in_sigma_check(-1.0, 1.0, aux)
    assert r["verdict"] == "safe" and r["distance"] >= 1.0


def test_sigma_check_on_neumann_value(cube3):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        aux = aux_spectra(cube3.space, cube3.forms, 2.0, 10)
    alpha = 2.0 * aux.neumann_laplacian.values[1]
    r = zero_in_sigma_check(alpha, 2.0, aux)
    assert r["distance"] == 0.0 and r["risky"] and r["source"] == "neumann"


def test_sigma_check_excludes_constants(ball2):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        aux = aux_spectra(ball2.space, ball2.forms, 1.0, 10)
    r = zero_in_sigma_check(0.0, 1.0, aux)
    # lambda^N_1 = 0 has a constant eigenfunction and must not count
    assert r["index"] >= 1
    assert r["distance"] == pytest.approx(aux.neumann_laplacian.values[1])


# --------------------------------------------------------------- resolvent


@pytest.mark.parametrize("kind,level", [("cube", 3), ("ball", 2)])
def test_resolvent_sweep(kind, level):
    s = make_setup(kind, level)
    b = steklov_spectrum(s.space, s.forms, NEG)
    groups = b.multiplicities()
    gap = groups[0][0] - groups[1][0]
    l1 = b.lambdas[0]
    far, near = resolvent_condition_sweep(s.space, s.forms, NEG, [l1 + 10 * gap, l1 + 1e-10], b.condensed)
    assert far < 1e6
    assert near > 1e8
    assert resolvent_condition_sweep(s.space, s.forms, NEG, []) == []


def test_group_multiplicities():
    assert group_multiplicities([3.0, 3.0 + 1e-9, 5.0]) == [(pytest.approx(3.0), 2), (5.0, 1)]
    assert group_multiplicities([]) == []
