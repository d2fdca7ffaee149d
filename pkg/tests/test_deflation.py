import numpy as np
import pytest

from curlsteklov.assembly import ProblemParams, form_matrix
from curlsteklov.deflation import (
    build_deflated_space,
    deflated_steklov_spectrum,
    dirichlet_modes_below,
    lift,
    split,
    verify_gap,
)
from curlsteklov.errors import AlphaOnDirichletSpectrumError, CoercivityError, DeflationError
from curlsteklov.spectral import basis_diagnostics, dirichlet_spectrum, select_eta, steklov_spectrum

from conftest import make_setup


@pytest.fixture(scope="module")
def cube():
    return make_setup("cube", 3, float(np.pi))


@pytest.fixture(scope="module")
def dvals(cube):
    return dirichlet_spectrum(cube.space, cube.forms).values


@pytest.fixture(scope="module")
def mid(dvals):
    groups = [dvals[0], dvals[3]]  # A_1 is triple on the cube
    return 0.5 * (groups[0] + groups[1])


def test_below_first_is_empty(cube, dvals):
    d = dirichlet_modes_below(cube.space, cube.forms, 0.5 * dvals[0])
    assert d.dim == 0


def test_triple_first_eigenvalue(cube, mid):
    d = dirichlet_modes_below(cube.space, cube.forms, mid)
    assert d.dim == 3
    assert np.all(d.values < mid)
    assert np.all(d.modes[cube.space.bnd] == 0)
    assert np.linalg.matrix_rank(d.rows) == 3


def test_alpha_on_spectrum(cube, dvals):
    with pytest.raises(AlphaOnDirichletSpectrumError):
        dirichlet_modes_below(cube.space, cube.forms, dvals[0])


def test_alpha_above_computed_values(cube, dvals):
    with pytest.raises(DeflationError):
        dirichlet_modes_below(cube.space, cube.forms, dvals[5] + 0.1, k_max=4)


def test_empty_deflation_identity(cube):
    d = dirichlet_modes_below(cube.space, cube.forms, -1.0)
    sub = build_deflated_space(cube.space, d)
    assert sub.n_dofs == cube.space.n_dofs
    assert np.array_equal(sub.restriction.toarray(), np.eye(cube.space.n_dofs))
    p = ProblemParams(-1.0, 1.0, 0.0)
    b, _ = deflated_steklov_spectrum(cube.space, cube.forms, p, d)
    ref = steklov_spectrum(cube.space, cube.forms, p)
    assert np.abs(b.lambdas - ref.lambdas).max() <= 1e-10 * np.abs(ref.lambdas).max()


def test_dimension_and_constraints(cube, mid):
    d = dirichlet_modes_below(cube.space, cube.forms, mid)
    sub = build_deflated_space(cube.space, d)
    assert d.dim + sub.n_dofs == cube.space.n_dofs
    Z = sub.restriction.toarray()
    S0 = form_matrix(cube.space, cube.forms, ProblemParams(mid, 1.0, 0.0))
    assert np.abs(d.modes.T @ S0 @ Z).max() <= 1e-10 * max(1.0, abs(S0).max())
    # boundary block of the restriction is the identity: traces unchanged
    nb = cube.space.n_boundary
    assert np.array_equal(Z[cube.space.bnd][:, -nb:], np.eye(nb))
    assert np.linalg.matrix_rank(Z) == Z.shape[1]


def test_deflation_restores_coercivity(cube, mid, dvals):
    p = ProblemParams(mid, 1.0, None)
    with pytest.raises(CoercivityError):
        select_eta(cube.space, cube.forms, p)
    d = dirichlet_modes_below(cube.space, cube.forms, mid)
    b, sub = deflated_steklov_spectrum(cube.space, cube.forms, p, d)
    diag = basis_diagnostics(b)
    assert diag["gram_error"] < 1e-8 and diag["trace_gram_error"] < 1e-8
    assert diag["max_residual"] < 1e-8
    assert b.size == cube.space.n_boundary
    # lifted modes satisfy the constraint in the parent space
    S0 = form_matrix(cube.space, cube.forms, ProblemParams(mid, 1.0, 0.0))
    U = lift(sub, b.modes)
    assert np.abs(d.modes.T @ S0 @ U).max() < 1e-8


def test_verify_gap(cube, mid, dvals):
    d = dirichlet_modes_below(cube.space, cube.forms, mid)
    g = verify_gap(cube.space, cube.forms, d)
    assert g > mid
    assert g == pytest.approx(dvals[3], rel=1e-6)
    empty = dirichlet_modes_below(cube.space, cube.forms, 1.0)
    assert verify_gap(cube.space, cube.forms, empty) == pytest.approx(dvals[0], rel=1e-10)


def test_split_reconstructs(cube, mid, rng):
    d = dirichlet_modes_below(cube.space, cube.forms, mid)
    for _ in range(10):
        v = rng.standard_normal(cube.space.n_dofs)
        pv, pp = split(cube.space, cube.forms, d, v)
        assert np.abs(pv + pp - v).max() <= 1e-10 * np.abs(v).max()
        assert np.abs(d.rows @ pp).max() <= 1e-10 * np.abs(d.rows).max() * np.abs(v).max()


def test_deflated_spectrum_continuous_in_alpha(cube, dvals):
    lo, hi = dvals[0], dvals[3]
    alphas = np.linspace(lo, hi, 9)[1:-1]
    spectra = []
    for a in alphas:
        d = dirichlet_modes_below(cube.space, cube.forms, a)
        b, _ = deflated_steklov_spectrum(cube.space, cube.forms, ProblemParams(a, 1.0, None), d)
        spectra.append(b.lambdas[[0, 5, -1]])
    # V_perp itself moves with alpha, fastest just above A_1, so compare each
    # secant with its neighbours rather than with a global slope
    steps = np.abs(np.diff(np.array(spectra), axis=0))
    for i in range(len(steps)):
        nb = [steps[j] for j in (i - 1, i + 1) if 0 <= j < len(steps)]
        assert np.all(steps[i] <= 10 * np.max(nb, axis=0) + 1e-12)
