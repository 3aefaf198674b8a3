import numpy as np
import pytest

from rdafem import dual_system as ds
from rdafem import galerkin as g
from rdafem.mesh import (MeshError, uniform_refine, unit_square_2tri,
                         unit_square_crisscross)
from rdafem.quadrature import gauss_edge, map_to_triangle, simplex_rule

SMALL_KAPPAS = (1.0, 1e2, 1e4)


def _edge_int(mesh, face, evaluator, degree=8):
    a, b = mesh.vertices[mesh.faces[face]]
    return gauss_edge(a, b, degree,
                      lambda x, y: evaluator(np.column_stack([x, y])))


def _hat_functional(mesh, vertex):
    cell = np.zeros((mesh.n_elements, 3))
    cell[mesh.elements == vertex] = 1.0
    return g.PiecewiseFunctional(mesh, cell, np.zeros(mesh.n_faces))


def test_psi_closed_form():
    # the dual weights solve to (900 lam_z - 360 lam_y - 360 lam_w)/|T|
    m = uniform_refine(unit_square_2tri(), 1)
    for e in range(m.n_elements):
        duals = ds.element_dual_basis(m, e)
        for z in range(3):
            expect = np.full(3, -360.0)
            expect[z] = 900.0
            assert np.allclose(duals[z].psi * m.areas[e], expect, rtol=1e-11)


def test_element_duality_pattern():
    m = unit_square_crisscross()
    for e in range(m.n_elements):
        duals = ds.element_dual_basis(m, e)
        hats = np.eye(3)
        for z in range(3):
            for y in range(3):
                hat = g.PiecewiseFunctional(m, np.zeros((m.n_elements, 3)),
                                            np.zeros(m.n_faces))
                hat.cell_density[e] = hats[y]
                val = ds.pair(hat, duals[z])
                assert abs(val - (1.0 if y == z else 0.0)) < 1e-13


def test_unit_density_pairs_to_one():
    # <1, phi*_{z;T}> = 1: the constant is the sum of the three hats
    m = uniform_refine(unit_square_2tri(), 2)
    one = g.ScalarField(lambda x, y: np.ones_like(x))
    for e in (0, 5):
        for dual in ds.element_dual_basis(m, e):
            assert abs(ds.pair(one, dual) - 1.0) < 1e-12


def test_face_bubble_integrals():
    m = unit_square_crisscross()
    face = np.nonzero(m.interior_face)[0][1]
    for kappa in (1.0, 1e3):
        fd = ds.face_bubble(m, face, kappa)
        assert np.isclose(fd.int_bubble, m.face_len[face] / 6.0, rtol=1e-14)
        got = _edge_int(m, face, fd.bubble_value)
        assert np.isclose(got, m.face_len[face] / 6.0, rtol=1e-12)
        # area integral over each squeezed support is theta |T| / 12
        for sq in fd.sides:
            pts, w = map_to_triangle(simplex_rule(6), sq.coords)
            assert np.isclose(w @ fd.bubble_value(pts),
                              sq.theta * m.areas[sq.element] / 12.0, rtol=1e-10)


def test_face_bubble_trace_theta_independent():
    m = unit_square_crisscross()
    face = np.nonzero(m.interior_face)[0][0]
    a, b = m.vertices[m.faces[face]]
    t = np.linspace(0.05, 0.95, 9)[:, None]
    pts = a + t * (b - a)
    ref = ds.face_bubble(m, face, 1.0).bubble_value(pts)
    for kappa in (10.0, 1e4):
        assert np.allclose(ds.face_bubble(m, face, kappa).bubble_value(pts),
                           ref, atol=1e-12)
    # and it is the product of the face parameters
    assert np.allclose(ref, (t * (1 - t)).ravel(), atol=1e-12)


def test_boundary_face_has_no_dual():
    m = unit_square_crisscross()
    boundary = np.nonzero(~m.interior_face)[0][0]
    with pytest.raises(MeshError):
        ds.face_bubble(m, boundary, 1.0)
    with pytest.raises(MeshError):
        ds.get_dual_system(m, 1.0).face_dual(boundary)


@pytest.mark.parametrize("kappa", SMALL_KAPPAS)
def test_biorthogonality_all_pairs(kappa):
    m = uniform_refine(unit_square_2tri(), 2)
    system = ds.get_dual_system(m, kappa)
    interior = np.nonzero(m.interior_face)[0]
    worst = 0.0
    for face in interior:
        fd = system.face_dual(face)
        # (b) face Diracs against phi*_F: identity pattern
        worst = max(worst, abs(_edge_int(m, face, fd) - 1.0))
        for other in interior:
            if other != face and np.intersect1d(
                    m.face_elems[other], m.face_elems[face]).size:
                worst = max(worst, abs(_edge_int(m, other, fd)))
        # (c) hats against phi*_F vanish
        for y in np.unique(m.elements[m.face_elems[face]]):
            worst = max(worst, abs(ds.pair(_hat_functional(m, y), fd)))
        # (a)-cross: face Diracs against element duals vanish
        for e in m.face_elems[face]:
            for dual in system.element_duals(e):
                worst = max(worst, abs(_edge_int(m, face, dual)))
    assert worst < 1e-12


@pytest.mark.parametrize("kappa", SMALL_KAPPAS)
def test_invariance_on_random_functionals(kappa):
    m = uniform_refine(unit_square_2tri(), 3)
    rng = np.random.default_rng(17)
    for _ in range(5):
        cell = rng.standard_normal((m.n_elements, 3))
        face = np.where(m.interior_face, rng.standard_normal(m.n_faces), 0.0)
        f = g.PiecewiseFunctional(m, cell, face)
        back = ds.project_pi(m, kappa, f)
        scale = max(1.0, f.coeff_scale())
        assert (back - f).coeff_scale() / scale < 1e-12


@pytest.mark.parametrize("kappa", SMALL_KAPPAS)
def test_invariance_on_operator_images(kappa):
    m = uniform_refine(unit_square_2tri(), 3)
    rng = np.random.default_rng(23)
    for _ in range(5):
        vals = np.where(m.boundary_vertex, 0.0, rng.standard_normal(m.n_vertices))
        f = g.apply_operator(m, kappa, g.DiscreteFunction(m, vals))
        back = ds.project_pi(m, kappa, f)
        scale = max(1.0, f.coeff_scale())
        assert (back - f).coeff_scale() / scale < 1e-12


def test_projection_of_constant():
    m = uniform_refine(unit_square_2tri(), 2)
    one = g.ScalarField(lambda x, y: np.ones_like(x))
    out = ds.project_pi(m, 1e3, one)
    assert np.allclose(out.cell_density, 1.0, atol=1e-13)
    assert np.allclose(out.face_density, 0.0, atol=1e-13)


def test_projection_linearity():
    m = unit_square_crisscross()
    rng = np.random.default_rng(31)
    a = g.PiecewiseFunctional(m, rng.standard_normal((4, 3)),
                              np.where(m.interior_face, rng.standard_normal(8), 0.0))
    b = g.PiecewiseFunctional(m, rng.standard_normal((4, 3)),
                              np.where(m.interior_face, rng.standard_normal(8), 0.0))
    lhs = ds.project_pi(m, 10.0, 2.0 * a - b)
    rhs = 2.0 * ds.project_pi(m, 10.0, a) - ds.project_pi(m, 10.0, b)
    assert (lhs - rhs).coeff_scale() < 1e-13


def test_theta_factor():
    assert ds.theta_factor(0.5, 1.0) == 1.0
    assert np.isclose(ds.theta_factor(0.5, 10.0), 0.2)
    assert ds.theta_factor(1e-3, 1.0) == 1.0


def test_dual_system_cached_per_mesh():
    m = unit_square_crisscross()
    assert ds.get_dual_system(m, 2.0) is ds.get_dual_system(m, 2.0)
    assert ds.get_dual_system(m, 2.0) is not ds.get_dual_system(m, 3.0)


def test_system_matches_scalar_constructors():
    m = uniform_refine(unit_square_2tri(), 1)
    for kappa in (1.0, 300.0):
        system = ds.get_dual_system(m, kappa)
        face = int(np.nonzero(m.interior_face)[0][0])
        fd_sys = system.face_dual(face)
        fd_op = ds.phi_star_face(m, face, kappa)
        assert np.allclose(np.sort(fd_sys.gammas.ravel()),
                           np.sort(fd_op.gammas.ravel()), atol=1e-14)
        pts = m.vertices[m.faces[face]].mean(axis=0)[None] + 1e-3
        assert np.allclose(fd_sys(pts), fd_op(pts), atol=1e-12)


def test_pair_elements_matches_pair():
    m = unit_square_crisscross()
    problem = g.make_problem(m, 7.0, "sinsin")
    system = ds.get_dual_system(m, 7.0)
    bulk = system.pair_elements(problem.rhs)
    for e in (0, 2):
        duals = system.element_duals(e)
        for z in range(3):
            assert np.isclose(bulk[e, z], ds.pair(problem.rhs, duals[z]),
                              rtol=1e-12)


def test_pair_faces_matches_pair():
    m = uniform_refine(unit_square_2tri(), 1)
    problem = g.make_problem(m, 5.0, "sinsin")
    system = ds.get_dual_system(m, 5.0)
    bulk = system.pair_faces(problem.rhs, system.pair_elements(problem.rhs))
    for pos, face in enumerate(system.iface):
        direct = ds.pair(problem.rhs, system.face_dual(face))
        assert np.isclose(bulk[pos], direct, rtol=1e-11, atol=1e-13)


def test_element_dual_energy_norm_frozen():
    m = uniform_refine(unit_square_2tri(), 2)
    got = ds.element_dual_energy_norm(m, 1.0, 3, 1)
    assert np.isclose(got, 251.95918036743282, rtol=1e-12)


def test_face_dual_energy_norm_frozen():
    m = uniform_refine(unit_square_2tri(), 2)
    face = int(np.nonzero(m.interior_face)[0][2])
    assert np.isclose(ds.face_dual_energy_norm(m, 1.0, face),
                      11.174204989298216, rtol=1e-10)
    assert np.isclose(ds.face_dual_energy_norm(m, 30.0, face),
                      22.9269157725878, rtol=1e-10)


def test_element_dual_energy_scaling():
    # norm grows linearly in kappa once the reaction term dominates
    m = uniform_refine(unit_square_2tri(), 2)
    n1 = ds.element_dual_energy_norm(m, 1e3, 0, 0)
    n2 = ds.element_dual_energy_norm(m, 1e4, 0, 0)
    assert np.isclose(n2 / n1, 10.0, rtol=1e-2)


def test_face_dual_energy_robust_in_kappa():
    # thanks to the squeeze the norm grows like sqrt(kappa), not kappa
    m = uniform_refine(unit_square_2tri(), 2)
    face = int(np.nonzero(m.interior_face)[0][0])
    n1 = ds.face_dual_energy_norm(m, 1e3, face)
    n2 = ds.face_dual_energy_norm(m, 1e5, face)
    assert n2 / n1 < 12.0
    assert np.isclose(n2 / n1, 10.0, rtol=0.15)
