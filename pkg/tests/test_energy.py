import numpy as np
import pytest
import scipy.sparse as sp

from energy import (
    EnergyMatrix,
    alpha_g_lb,
    alpha_m,
    build_gstar,
    exact_alpha,
    generalized_eig,
    gstar_norm,
    symmetric_part,
)
from errors import EstimatorError, ModelError

A = sp.csr_matrix(np.array([[4.0, -1.0, 0.0], [-2.0, 5.0, -1.0], [0.0, -1.0, 3.0]]))
M = sp.diags([1.0, 2.0, 1.0], format="csr")
DT = 0.5


def test_gstar_is_symmetric_part():
    energy = build_gstar(M, A, DT)
    expected = M.toarray() + DT * 0.5 * (A.toarray() + A.toarray().T)
    assert np.allclose(energy.matrix.toarray(), expected)
    v = np.array([1.0, -2.0, 0.5])
    assert energy.norm(v) == pytest.approx(np.sqrt(v @ expected @ v))
    assert gstar_norm(energy, v) == pytest.approx(energy.norm(v))


def test_solve_inverts_matrix():
    energy = build_gstar(M, A, DT)
    rhs = np.array([1.0, 0.0, -1.0])
    assert np.allclose(energy.matrix @ energy.solve(rhs), rhs)


def test_non_symmetric_rejected():
    with pytest.raises(ModelError):
        EnergyMatrix.from_matrix(A, DT)


def test_generalized_eig_diagonal():
    lam, vec = generalized_eig(sp.diags([2.0, 3.0, 7.0]), sp.identity(3), "min")
    assert lam == pytest.approx(2.0)
    assert abs(vec[0]) == pytest.approx(1.0)
    lam, _ = generalized_eig(sp.diags([2.0, 3.0, 7.0]), sp.identity(3), "max")
    assert lam == pytest.approx(7.0)


def test_sparse_path_agrees_with_dense():
    n = 30
    main = np.linspace(1.0, 4.0, n)
    S = sp.diags([main, -0.3 * np.ones(n - 1), -0.3 * np.ones(n - 1)], [0, 1, -1], format="csr")
    B = sp.diags(np.linspace(1.0, 2.0, n), format="csr")
    dense, _ = generalized_eig(S, B, "min", dense_limit=100)
    sparse, _ = generalized_eig(S, B, "min", dense_limit=10, definite=True)
    assert sparse == pytest.approx(dense, rel=1e-8)


def test_alpha_bounds():
    energy = build_gstar(M, A, DT)
    alpha = exact_alpha(symmetric_part(A), energy)
    a_mass = alpha_m(M, energy)
    assert alpha > 0
    assert 0 < a_mass < 1
    # G* = M + Δt A_sym implica Δt α + α_M ≤ 1
    assert alpha_g_lb(alpha, a_mass, DT) <= 1.0 + 1e-12


def test_alpha_m_zero_with_face_unknowns():
    M0 = sp.diags([1.0, 0.0, 1.0], format="csr")
    energy = build_gstar(M0, A, DT)
    assert alpha_m(M0, energy) == 0.0


def test_alpha_g_negative_rejected():
    with pytest.raises(EstimatorError):
        alpha_g_lb(-1.0, 0.5, DT)


def test_tiny_case_gstar_is_spd(tiny_disc, tiny_case):
    op = tiny_disc.assemble(tiny_case.ranges.log_midpoint())
    energy = build_gstar(op.M, op.A, tiny_case.dt)
    assert np.all(np.linalg.eigvalsh(energy.matrix.toarray()) > 0)
