"""Assembly and transfer checked against hand-integrated values."""

import numpy as np
import pytest

from convdiff import fem
from convdiff.fem import (FeSpace, DofVector, assemble_B, assemble_N,
                          load_vector, mass_matrix, stiffness_matrix,
                          l2_project, interpolate, prolongation_matrix,
                          transfer, evaluate, evaluate_grad,
                          element_laplacians, energy_norm, l2_norm,
                          dump_dofvector, load_dofvector, zero_dirichlet)
from convdiff.mesh import TriMesh, generate_structured, uniform_refine


def reference_triangle():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return TriMesh(v, np.array([[0, 1, 2]]), np.array([True, True, True]))


def unit_square(n):
    return generate_structured((0.0, 0.0, 1.0, 1.0), n)


def test_local_stiffness_reference_triangle():
    # grad lambda = (-1,-1), (1,0), (0,1); area 1/2
    sp = FeSpace(reference_triangle(), 1)
    K = stiffness_matrix(sp).toarray()
    expect = np.array([[1.0, -0.5, -0.5],
                       [-0.5, 0.5, 0.0],
                       [-0.5, 0.0, 0.5]])
    assert np.allclose(K, expect, atol=1e-14)


def test_local_mass_reference_triangle():
    sp = FeSpace(reference_triangle(), 1)
    M = mass_matrix(sp).toarray()
    expect = np.array([[2.0, 1.0, 1.0],
                       [1.0, 2.0, 1.0],
                       [1.0, 1.0, 2.0]]) / 24.0
    assert np.allclose(M, expect, atol=1e-15)


@pytest.mark.parametrize("degree", [1, 2])
def test_mass_total_is_area(degree):
    sp = FeSpace(unit_square(3), degree)
    assert np.isclose(mass_matrix(sp).sum(), 1.0, atol=1e-13)


def test_load_vector_constant():
    mesh = unit_square(2)
    sp = FeSpace(mesh, 1)
    ell = load_vector(sp, 1.0)
    assert np.isclose(ell.sum(), 1.0, atol=1e-14)
    # each entry is one third of the incident area
    areas = mesh.areas()
    expect = np.zeros(sp.n_dofs)
    for e in range(mesh.n_triangles):
        expect[mesh.triangles[e]] += areas[e] / 3.0
    assert np.allclose(ell, expect, atol=1e-15)


def test_l2_projection_center_value():
    # n=2 grid: one interior vertex with mass 1/8 and load 1/4, so the
    # constrained projection of the constant 1 is 2 at the centre
    mesh = unit_square(2)
    sp = FeSpace(mesh, 1)
    u = l2_project(1.0, sp)
    center = np.where((mesh.vertices[:, 0] == 0.5)
                      & (mesh.vertices[:, 1] == 0.5))[0][0]
    assert np.isclose(u.values[center], 2.0, atol=1e-13)
    assert np.all(u.values[sp.dirichlet] == 0.0)


def test_convection_skew_symmetric_on_free_dofs():
    # divergence-free field, zero boundary values: (a.grad u, u) = 0
    sp = FeSpace(unit_square(4), 1)
    B = assemble_B(sp, 0.0, (lambda x, y: y, lambda x, y: -x), None,
                   dirichlet=False)
    rng = np.random.default_rng(7)
    v = zero_dirichlet(rng.standard_normal(sp.n_dofs), sp)
    assert abs(v @ (B @ v)) < 1e-13 * (v @ v)


def test_p2_reproduces_quadratics():
    sp = FeSpace(unit_square(2), 2)
    q = lambda x, y: x ** 2 + y ** 2 - x * y
    u = interpolate(sp, q)
    ref = np.array([[0.2, 0.3], [0.5, 0.25], [1 / 3, 1 / 3]])
    elems = np.arange(sp.mesh.n_triangles)
    vals = evaluate(u, elems, ref)
    geo = sp.geometry()
    pts = np.einsum("eij,qj->eqi", geo["B"], ref) \
        + sp.mesh.vertices[sp.mesh.triangles[:, 0]][:, None, :]
    assert np.allclose(vals, q(pts[:, :, 0], pts[:, :, 1]), atol=1e-13)
    # |q|_H1^2 over the unit square: int 5x^2 + 5y^2 - 8xy = 4/3
    K = stiffness_matrix(sp)
    assert np.isclose(u.values @ (K @ u.values), 4.0 / 3.0, atol=1e-13)


def test_evaluate_grad_p2():
    sp = FeSpace(unit_square(2), 2)
    u = interpolate(sp, lambda x, y: x ** 2)
    ref = np.array([[0.25, 0.25], [0.1, 0.6]])
    elems = np.array([0, 3, 5])
    g = evaluate_grad(u, elems, ref)
    geo = sp.geometry()
    pts = np.einsum("eij,qj->eqi", geo["B"][elems], ref) \
        + sp.mesh.vertices[sp.mesh.triangles[elems, 0]][:, None, :]
    assert np.allclose(g[:, :, 0], 2.0 * pts[:, :, 0], atol=1e-13)
    assert np.allclose(g[:, :, 1], 0.0, atol=1e-13)


def test_element_laplacians():
    sp2 = FeSpace(unit_square(2), 2)
    u = interpolate(sp2, lambda x, y: x ** 2 + y ** 2)
    assert np.allclose(element_laplacians(u), 4.0, atol=1e-12)
    sp1 = FeSpace(unit_square(2), 1)
    w = interpolate(sp1, lambda x, y: x + y)
    assert np.all(element_laplacians(w) == 0.0)


@pytest.mark.parametrize("degree", [1, 2])
def test_prolongation_preserves_norms(degree):
    coarse_mesh = unit_square(2)
    fine_mesh = uniform_refine(coarse_mesh, 1)
    Vc = FeSpace(coarse_mesh, degree)
    Vf = FeSpace(fine_mesh, degree)
    rng = np.random.default_rng(3)
    u = rng.standard_normal(Vc.n_dofs)
    P = prolongation_matrix(Vc, Vf)
    uf = P @ u
    assert np.isclose(uf @ (mass_matrix(Vf) @ uf),
                      u @ (mass_matrix(Vc) @ u), atol=1e-13)
    assert np.isclose(uf @ (stiffness_matrix(Vf) @ uf),
                      u @ (stiffness_matrix(Vc) @ u), atol=1e-12)


def test_transfer_projection_recovers_coarse_function():
    coarse_mesh = unit_square(2)
    fine_mesh = uniform_refine(coarse_mesh, 2)
    Vc = FeSpace(coarse_mesh, 1)
    Vf = FeSpace(fine_mesh, 1)
    rng = np.random.default_rng(11)
    u = DofVector(Vc, zero_dirichlet(rng.standard_normal(Vc.n_dofs), Vc))
    uf = DofVector(Vf, prolongation_matrix(Vc, Vf) @ u.values)
    back = transfer(uf, Vc)
    assert np.allclose(back.values, u.values, atol=1e-12)


def test_assemble_N_constant_state():
    sp = FeSpace(unit_square(2), 1)
    phi = lambda s: 1.0 + np.abs(s)
    c = -3.0
    u = DofVector(sp, np.full(sp.n_dofs, c))
    g = lambda x, y: x + 2 * y
    N = assemble_N(sp, 2.0, phi, g, u)
    assert np.allclose(N, 2.0 * (1.0 + abs(c)) * load_vector(sp, g),
                       atol=1e-14)


def test_energy_norm_matches_quadratic_form():
    sp = FeSpace(unit_square(3), 1)
    rng = np.random.default_rng(5)
    u = DofVector(sp, rng.standard_normal(sp.n_dofs))
    K, M = stiffness_matrix(sp), mass_matrix(sp)
    v = u.values
    expect = np.sqrt(0.01 * (v @ (K @ v)) + 0.75 * (v @ (M @ v)))
    assert np.isclose(energy_norm(u, 0.01, 0.75), expect, atol=1e-14)
    assert np.isclose(l2_norm(u), np.sqrt(v @ (M @ v)), atol=1e-14)


def test_dofvector_io_roundtrip(tmp_path):
    sp = FeSpace(unit_square(2), 2)
    rng = np.random.default_rng(9)
    u = DofVector(sp, rng.standard_normal(sp.n_dofs))
    path = tmp_path / "state.dat"
    dump_dofvector(u, path)
    v = load_dofvector(path, sp)
    assert np.array_equal(u.values, v.values)
    other = FeSpace(unit_square(3), 2)
    with pytest.raises(ValueError):
        load_dofvector(path, other)


def test_dirichlet_elimination_structure():
    sp = FeSpace(unit_square(2), 1)
    A = assemble_B(sp, 1.0, None, None, dirichlet=True).toarray()
    idx = np.where(sp.dirichlet)[0]
    for i in idx:
        row = A[i].copy()
        col = A[:, i].copy()
        row[i] -= 1.0
        col[i] -= 1.0
        assert np.all(row == 0.0) and np.all(col == 0.0)


def test_p2_dof_count():
    mesh = unit_square(2)
    sp = FeSpace(mesh, 2)
    edges, _, _ = mesh.edge_table()
    assert sp.n_dofs == mesh.n_vertices + len(edges)
    assert sp.dof_map.shape == (mesh.n_triangles, 6)
