import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from msdeim.coeff import generate_permeability
from msdeim.counters import OpCounter
from msdeim.fem import (
    CoefficientStiffness,
    LinearSolveError,
    apply_dirichlet,
    assemble_load,
    assemble_mass,
    assemble_stiffness,
    local_gradients,
    lumped_mass,
    nonlinear_apply,
    read_triplets,
    solve_linear,
    write_triplets,
)
from msdeim.grid import build_grids


@pytest.fixture(scope="module")
def g22():
    mesh, _ = build_grids(2, 2)
    return mesh


def test_constants_in_kernel(g22):
    A = assemble_stiffness(g22, 1.0)
    assert np.abs(A @ np.ones(g22.n_f)).max() <= 1e-13


def test_reference_element():
    pts = np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]])
    grads, area = local_gradients(pts)
    K = area[0] * grads[0] @ grads[0].T
    expect = 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]])
    assert np.allclose(K, expect, atol=1e-15)


def test_kappa_scaling_exact(g22):
    A = assemble_stiffness(g22, 1.0)
    B = assemble_stiffness(g22, 1e4)
    assert np.array_equal((A * 1e4).toarray(), B.toarray())


def test_symmetric_psd():
    mesh, _ = build_grids(3, 3)
    field = generate_permeability("case1", 4.0, mesh)
    A = assemble_stiffness(mesh, field.kappa)
    assert abs(A - A.T).max() == 0.0
    ev = np.linalg.eigvalsh(A.toarray())
    assert ev.min() > -1e-9 * ev.max()


def test_rejects_nonpositive_kappa(g22):
    kappa = np.ones(g22.n_elements)
    kappa[5] = 0.0
    with pytest.raises(ValueError, match="element 5"):
        assemble_stiffness(g22, kappa)


def test_mass_and_load_sums(g22):
    assert abs(assemble_mass(g22).sum() - 1.0) <= 1e-12
    assert abs(assemble_load(g22, 1.0).sum() - 1.0) <= 1e-12
    assert np.allclose(lumped_mass(g22), np.asarray(assemble_mass(g22).sum(axis=1)).ravel())


def test_load_sine_source():
    mesh, _ = build_grids(10, 10)
    h = lambda x, y: 1 + np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)  # noqa: E731
    coarse_sum = assemble_load(mesh, h).sum()
    fine, _ = build_grids(20, 10)
    assert abs(coarse_sum - 1.0) <= 1e-3
    assert abs(assemble_load(fine, h).sum() - 1.0) <= 1e-3


def test_dirichlet(g22):
    A = assemble_stiffness(g22, 1.0)
    rhs = assemble_load(g22, 1.0)
    Ad, bd = apply_dirichlet(A, rhs, g22.boundary_mask)
    u = np.linalg.solve(Ad.toarray(), bd)
    assert np.all(u[g22.boundary_mask] == 0.0)
    assert np.linalg.eigvalsh(Ad.toarray()).min() > 0
    Ad2, bd2 = apply_dirichlet(Ad, bd, g22.boundary_mask)
    assert np.array_equal(Ad2.toarray(), Ad.toarray()) and np.array_equal(bd2, bd)


def test_solve_identity():
    b = np.arange(1.0, 6.0)
    assert np.allclose(solve_linear(sp.eye(5), b), b)


def _poisson_center(nc, ns, method):
    mesh, _ = build_grids(nc, ns)
    A, b = apply_dirichlet(assemble_stiffness(mesh, 1.0), assemble_load(mesh, 1.0), mesh.boundary_mask)
    u = solve_linear(A, b, method=method)
    N = mesh.n_side
    return u[mesh.node_index(N // 2, N // 2)]


def test_poisson_center_value():
    ref = _poisson_center(20, 10, "direct")
    assert abs(_poisson_center(10, 10, "cg") - ref) <= 0.01 * ref
    assert abs(ref - 0.0736713) < 1e-3  # series value of the continuous problem


def test_high_contrast_cg():
    mesh, _ = build_grids(4, 4)
    field = generate_permeability("case1", 6.0, mesh)
    A, b = apply_dirichlet(assemble_stiffness(mesh, field.kappa), assemble_load(mesh, 1.0), mesh.boundary_mask)
    u = solve_linear(A, b, tol=1e-10)
    d = A.diagonal()
    assert np.linalg.norm((b - A @ u) / np.sqrt(d)) <= 1e-10 * np.linalg.norm(b / np.sqrt(d))
    ref = solve_linear(A, b, method="direct")
    assert np.allclose(u, ref, rtol=1e-6, atol=1e-12 * np.abs(ref).max())


def test_cg_failure_reports_history():
    mesh, _ = build_grids(3, 3)
    A, b = apply_dirichlet(assemble_stiffness(mesh, 1.0), assemble_load(mesh, 1.0), mesh.boundary_mask)
    with pytest.raises(LinearSolveError) as exc:
        solve_linear(A, b, tol=1e-14, maxiter=2)
    assert len(exc.value.residuals) == 2


def test_nonlinear_apply(g22, rng):
    A = assemble_stiffness(g22, 1.0)
    U = rng.standard_normal(g22.n_f)
    assert np.allclose(nonlinear_apply(A, U, lambda u: np.ones_like(u)), A @ U)
    assert np.all(nonlinear_apply(A, np.zeros(g22.n_f), lambda u: np.ones_like(u)) == 0)
    c = OpCounter()
    got = nonlinear_apply(A, U, lambda u: np.exp(2 * u), c)
    dense = A.toarray() @ np.diag(np.exp(2 * U)) @ U
    assert np.allclose(got, dense, rtol=1e-12)
    assert c["nonlinear_evals"] == g22.n_f


def test_galerkin_consistency(rng):
    mesh, _ = build_grids(2, 3)
    A = assemble_stiffness(mesh, 1.0)
    Phi = sp.random(mesh.n_f, 4, density=0.3, random_state=3, format="csc")
    coarse = (Phi.T @ A @ Phi).toarray()
    # assemble the coarse form element by element
    grads, areas = local_gradients(mesh.nodes[mesh.triangles])
    P = Phi.toarray()
    direct = np.zeros((4, 4))
    for t, tri in enumerate(mesh.triangles):
        G = P[tri].T @ grads[t]  # (4, 2) gradients of the coarse functions
        direct += areas[t] * G @ G.T
    assert np.allclose(coarse, direct, atol=1e-12)


class TestCoefficientStiffness:
    def test_unit_coefficient_is_stiffness(self, g22):
        op = CoefficientStiffness(g22, 3.0)
        assert np.allclose(op(np.ones(g22.n_f)).toarray(), assemble_stiffness(g22, 3.0).toarray())

    def test_apply_matches_matrix(self, g22, rng):
        op = CoefficientStiffness(g22, 1.0)
        c, u = rng.standard_normal((2, g22.n_f))
        assert np.allclose(op.apply(c, u), op(c) @ u)

    def test_linear_in_c(self, g22, rng):
        op = CoefficientStiffness(g22, 1.0)
        a, b = rng.standard_normal((2, g22.n_f))
        assert np.allclose((op(a) + 2 * op(b)).toarray(), op(a + 2 * b).toarray())

    def test_jacobian_fd(self, g22, rng):
        op = CoefficientStiffness(g22, 1.0)
        mu = 3.0
        u = rng.uniform(-0.3, 0.3, g22.n_f)
        F = lambda v: op.apply(np.exp(mu * v), v)  # noqa: E731
        J = op.jacobian(np.exp(mu * u), mu * np.exp(mu * u), u).toarray()
        h = 1e-6
        Jfd = np.column_stack([(F(u + h * e) - F(u - h * e)) / (2 * h) for e in np.eye(g22.n_f)])
        assert np.abs(J - Jfd).max() <= 1e-6 * np.abs(J).max()

    def test_shape_check(self, g22):
        with pytest.raises(ValueError):
            CoefficientStiffness(g22, 1.0)(np.ones(3))


def test_triplets_roundtrip(tmp_path, rng):
    M = sp.random(7, 5, density=0.4, random_state=1, format="csr")
    M.data = rng.standard_normal(M.nnz) * 1e-7
    write_triplets(tmp_path / "m.txt", M)
    header = (tmp_path / "m.txt").read_text().splitlines()[0]
    assert header == f"7 5 {M.nnz}"
    back = read_triplets(tmp_path / "m.txt")
    assert np.array_equal(back.toarray(), M.toarray())
    write_triplets(tmp_path / "z.txt", sp.csr_matrix((3, 2)))
    assert read_triplets(tmp_path / "z.txt").shape == (3, 2)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=25, max_size=25))
def test_energy_nonnegative(vals):
    mesh, _ = build_grids(2, 2)
    A = assemble_stiffness(mesh, 1.0)
    v = np.array(vals)
    assert v @ (A @ v) >= -1e-12 * max(1.0, v @ v)
