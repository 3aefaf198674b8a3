"""Seeded property suite behind the `verify` command.

Every check measures a constant (an identity residual, a ratio, a stability
factor) and compares it against a fixed bound.  The outcome is a plain dict
ready for JSON serialization; randomized parts draw from one seeded
generator so reruns reproduce bit-identical reports.
"""

import numpy as np

from . import galerkin
from .dual_system import (element_dual_energy_norm, face_dual_energy_norm,
                          get_dual_system, pair, phi_star_face, project_pi)
from .estimator import PatchSpace, localize_check
from .galerkin import DiscreteFunction, PiecewiseFunctional, apply_operator
from .quadrature import DEFAULT_DEGREE, gauss_edge

IDENTITY_TOL = 1e-11
INVARIANCE_TOL = 1e-9
STABILITY_BOUND = 100.0
LOCALIZE_WINDOW = (0.2, 20.0)


def _check(name, measured, bound, lower=None):
    ok = measured <= bound if lower is None else lower <= measured <= bound
    entry = {"name": name, "measured": float(measured), "bound": float(bound),
             "pass": bool(ok)}
    if lower is not None:
        entry["lower"] = float(lower)
    return entry


def _sample(rng, n, k):
    if n <= k:
        return np.arange(n)
    return rng.choice(n, size=k, replace=False)


def _hat_functional(mesh, vertex):
    """The global hat at a vertex written as elementwise P1 densities."""
    cell = np.zeros((mesh.n_elements, 3))
    cell[mesh.elements == vertex] = 1.0
    return PiecewiseFunctional(mesh, cell, np.zeros(mesh.n_faces))


def element_duality_residual(mesh):
    """max |<lam_y, phi*_z>_T - delta_yz| over all elements."""
    system = get_dual_system(mesh, 1.0)
    off = 1.0 / 630.0
    gram = ((1.0 / 420.0 - off) * np.eye(3) + off)[None] * mesh.areas[:, None, None]
    res = np.einsum("eyx,exz->eyz", gram, system.psi) - np.eye(3)[None]
    return float(np.abs(res).max())


def _edge_pair(a, b, evaluator, quad_degree):
    """Integral over segment [a, b] of a points-array evaluator."""
    return gauss_edge(a, b, quad_degree,
                      lambda x, y: evaluator(np.column_stack([x, y])))


def face_duality_residuals(mesh, kappa, faces, quad_degree=DEFAULT_DEGREE):
    """(diagonal, cross) residuals of the face Dirac pairings."""
    diag = 0.0
    cross = 0.0
    interior = np.nonzero(mesh.interior_face)[0]
    for face in faces:
        fd = phi_star_face(mesh, face, kappa)
        a, b = mesh.vertices[mesh.faces[face]]
        diag = max(diag, abs(_edge_pair(a, b, fd, quad_degree) - 1.0))
        for other in interior:
            if other == face:
                continue
            if not np.intersect1d(mesh.face_elems[other],
                                  mesh.face_elems[face]).size:
                continue
            c, d = mesh.vertices[mesh.faces[other]]
            cross = max(cross, abs(_edge_pair(c, d, fd, quad_degree)))
        for side in fd.sides:
            for dual in get_dual_system(mesh, kappa).element_duals(side.element):
                cross = max(cross, abs(_edge_pair(a, b, dual, quad_degree)))
    return diag, cross


def hat_face_residual(mesh, kappa, faces, quad_degree=DEFAULT_DEGREE):
    """max |<hat_y, phi*_F>| over the hats touching each sampled face."""
    worst = 0.0
    for face in faces:
        fd = phi_star_face(mesh, face, kappa)
        verts = np.unique(mesh.elements[mesh.face_elems[face]])
        for y in verts:
            val = pair(_hat_functional(mesh, y), fd, quad_degree)
            worst = max(worst, abs(val))
    return worst


def invariance_residuals(mesh, kappa, rng, n_random=20, quad_degree=DEFAULT_DEGREE):
    """(random functional, operator image) invariance defects, scale relative."""
    worst_rand = 0.0
    for _ in range(n_random):
        cell = rng.standard_normal((mesh.n_elements, 3))
        face = np.where(mesh.interior_face, rng.standard_normal(mesh.n_faces), 0.0)
        g = PiecewiseFunctional(mesh, cell, face)
        back = project_pi(mesh, kappa, g, quad_degree)
        scale = max(1.0, g.coeff_scale())
        worst_rand = max(worst_rand, (back - g).coeff_scale() / scale)
    worst_op = 0.0
    for _ in range(n_random):
        vals = np.where(mesh.boundary_vertex, 0.0,
                        rng.standard_normal(mesh.n_vertices))
        g = apply_operator(mesh, kappa, DiscreteFunction(mesh, vals))
        back = project_pi(mesh, kappa, g, quad_degree)
        scale = max(1.0, g.coeff_scale())
        worst_op = max(worst_op, (back - g).coeff_scale() / scale)
    return worst_rand, worst_op


def constant_projection_residual(mesh, kappa, quad_degree=DEFAULT_DEGREE):
    """Pi reproduces the constant-one density exactly."""
    one = PiecewiseFunctional(mesh, np.ones((mesh.n_elements, 3)),
                              np.zeros(mesh.n_faces))
    return (project_pi(mesh, kappa, one, quad_degree) - one).coeff_scale()


def stability_samples(mesh, kappa, rng, vertices, depth=2,
                      quad_degree=DEFAULT_DEGREE):
    """max dual_norm(Pi g)/dual_norm(g) over random cubic fields on stars.

    Piecewise functionals are fixed points of the interpolation, so the
    samples must come from outside that class for the ratio to say anything.
    """
    from .galerkin import ScalarField

    worst = 0.0
    for z in vertices:
        star = mesh.star(z)
        cx, cy = mesh.vertices[z]
        h = mesh.h_elem[star.elements].max()
        coeff = rng.standard_normal((4, 4))

        def field(x, y, coeff=coeff, cx=cx, cy=cy, h=h):
            xs, ys = (x - cx) / h, (y - cy) / h
            out = np.zeros_like(np.asarray(xs, dtype=float))
            for i in range(4):
                for j in range(4 - i):
                    out = out + coeff[i, j] * xs**i * ys**j
            return out

        g = ScalarField(field, name="stability-sample")
        pig = project_pi(mesh, kappa, g, quad_degree)
        space = PatchSpace(mesh, star.elements, depth)
        gsrc = galerkin.SourceFunctional(mesh, field=g)
        pigsrc = galerkin.SourceFunctional(mesh, piecewise=pig)
        denom = space.dual_norm(gsrc, kappa, quad_degree)
        if denom == 0.0:
            continue
        worst = max(worst, space.dual_norm(pigsrc, kappa, quad_degree) / denom)
    return worst


def scaling_constants(mesh, kappa, elements, faces, quad_degree=DEFAULT_DEGREE):
    """Normalized energy norms of the dual functions on sampled entities."""
    c_elem = 0.0
    for e in elements:
        unit = max(1.0 / mesh.h_elem[e], kappa) / np.sqrt(mesh.areas[e])
        for z in range(3):
            c_elem = max(c_elem, element_dual_energy_norm(
                mesh, kappa, e, z, quad_degree) / unit)
    c_face = 0.0
    for face in faces:
        adj = mesh.face_elems[face]
        theta = min(min(1.0, 1.0 / (mesh.h_elem[e] * kappa)) for e in adj)
        unit = max(1.0 / mesh.h_face[face], kappa) / np.sqrt(
            theta * mesh.face_len[face])
        c_face = max(c_face, face_dual_energy_norm(
            mesh, kappa, face, quad_degree) / unit)
    return c_elem, c_face


def run_verify(mesh, kappa, preset="sinsin", seed=0, depth=2,
               quad_degree=DEFAULT_DEGREE, n_random=20, max_sample=24,
               mesh_label=""):
    """Full property suite; returns a JSON-ready report dict."""
    rng = np.random.default_rng(seed)
    interior = np.nonzero(mesh.interior_face)[0]
    faces = interior[_sample(rng, len(interior), max_sample)]
    elements = _sample(rng, mesh.n_elements, max_sample)
    checks = [_check("element_duality", element_duality_residual(mesh),
                     IDENTITY_TOL)]
    if len(faces):
        diag, cross = face_duality_residuals(mesh, kappa, faces, quad_degree)
        checks.append(_check("face_duality_diagonal", diag, IDENTITY_TOL))
        checks.append(_check("face_duality_cross", cross, IDENTITY_TOL))
        checks.append(_check("hat_face_orthogonality",
                             hat_face_residual(mesh, kappa, faces, quad_degree),
                             IDENTITY_TOL))
    rand_res, op_res = invariance_residuals(mesh, kappa, rng, n_random,
                                            quad_degree)
    checks.append(_check("invariance_random", rand_res, INVARIANCE_TOL))
    checks.append(_check("invariance_operator", op_res, INVARIANCE_TOL))
    checks.append(_check("constant_projection",
                         constant_projection_residual(mesh, kappa, quad_degree),
                         IDENTITY_TOL))

    problem = galerkin.make_problem(mesh, kappa, preset)
    U = galerkin.solve(problem, quad_degree=quad_degree)
    report = localize_check(problem, U, depth=depth, quad_degree=quad_degree)
    checks.append(_check("localization_ratio", report.ratio,
                         LOCALIZE_WINDOW[1], lower=LOCALIZE_WINDOW[0]))
    checks.append(_check("galerkin_orthogonality", report.max_orthogonality,
                         INVARIANCE_TOL))

    free = np.nonzero(~mesh.boundary_vertex)[0]
    stars = free[_sample(rng, len(free), max(4, max_sample // 4))]
    checks.append(_check("stability_sampled",
                         stability_samples(mesh, kappa, rng, stars, depth,
                                           quad_degree), STABILITY_BOUND))
    c_elem, c_face = scaling_constants(mesh, kappa, elements, faces, quad_degree)
    checks.append(_check("scaling_element_dual", c_elem, STABILITY_BOUND))
    if len(faces):
        checks.append(_check("scaling_face_dual", c_face, STABILITY_BOUND))

    return {
        "mesh": mesh_label,
        "n_vertices": mesh.n_vertices,
        "n_elements": mesh.n_elements,
        "kappa": kappa,
        "preset": preset,
        "seed": seed,
        "depth": depth,
        "quad_degree": quad_degree,
        "checks": checks,
        "pass": all(c["pass"] for c in checks),
    }
