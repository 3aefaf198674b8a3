"""P1 Galerkin discretization of -div(grad u) + kappa^2 u = f with u = 0 on
the boundary.

Besides assembly and the preconditioned CG solve, this module owns the two
functional representations everything downstream is built on:

* `PiecewiseFunctional` -- a distribution made of a P1 volume density per
  element plus a constant line source per interior face.  The operator image
  of a discrete function is exactly of this form (volume part kappa^2 V,
  line part the normal-derivative jumps), and so are projected loads.
* `SourceFunctional` -- an optional analytic field plus an optional
  PiecewiseFunctional, enough to express residuals f - L(U) and oscillation
  terms f - Pf without committing to quadrature at construction time.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import quadrature
from .quadrature import DEFAULT_DEGREE


class SolverError(Exception):
    """Raised when the linear solver fails to reach the requested tolerance."""


class ScalarField:
    """Analytic scalar function, vectorized over point arrays.

    `value(x, y)` returns an array; `grad(x, y)`, when available, returns the
    pair (d/dx, d/dy) of arrays.
    """

    def __init__(self, value, grad=None, name=""):
        self.value = value
        self.grad = grad
        self.name = name


class DiscreteFunction:
    """P1 function given by vertex values (boundary entries zero for members
    of the homogeneous space)."""

    def __init__(self, mesh, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.n_vertices,):
            raise ValueError("values must have one entry per vertex")
        self.mesh = mesh
        self.values = values

    def element_values(self):
        """(ne, 3) vertex values per element."""
        return self.values[self.mesh.elements]

    def element_gradients(self):
        """(ne, 2) constant gradient per element."""
        return np.einsum("ei,eix->ex", self.element_values(), all_bary_grads(self.mesh))


def all_bary_grads(mesh):
    """Gradients of all barycentric coordinates, (ne, 3, 2)."""
    p = mesh.vertices[mesh.elements]
    edges = p[:, [2, 0, 1]] - p[:, [1, 2, 0]]  # edge opposite local vertex i
    g = np.stack([-edges[..., 1], edges[..., 0]], axis=-1)
    return g / (2.0 * mesh.areas)[:, None, None]


# -- functionals --------------------------------------------------------------


class PiecewiseFunctional:
    """P1 volume density per element plus constant line sources on interior
    faces.

    `cell_density` is (ne, 3): barycentric coefficients of the density on each
    element.  `face_density` is (nf,): the strength of the line source on each
    face; boundary entries must be zero (test functions vanish there).
    """

    def __init__(self, mesh, cell_density, face_density):
        cell_density = np.asarray(cell_density, dtype=float)
        face_density = np.asarray(face_density, dtype=float)
        if cell_density.shape != (mesh.n_elements, 3):
            raise ValueError("cell_density must be (ne, 3)")
        if face_density.shape != (mesh.n_faces,):
            raise ValueError("face_density must be (nf,)")
        if face_density[~mesh.interior_face].any():
            raise ValueError("line sources on boundary faces are not representable")
        self.mesh = mesh
        self.cell_density = cell_density
        self.face_density = face_density

    @classmethod
    def zero(cls, mesh):
        return cls(mesh, np.zeros((mesh.n_elements, 3)), np.zeros(mesh.n_faces))

    def __add__(self, other):
        self._check(other)
        return PiecewiseFunctional(self.mesh, self.cell_density + other.cell_density,
                                   self.face_density + other.face_density)

    def __sub__(self, other):
        self._check(other)
        return PiecewiseFunctional(self.mesh, self.cell_density - other.cell_density,
                                   self.face_density - other.face_density)

    def __neg__(self):
        return PiecewiseFunctional(self.mesh, -self.cell_density, -self.face_density)

    def __mul__(self, scalar):
        return PiecewiseFunctional(self.mesh, scalar * self.cell_density,
                                   scalar * self.face_density)

    __rmul__ = __mul__

    def _check(self, other):
        if other.mesh is not self.mesh:
            raise ValueError("functionals live on different meshes")

    def coeff_scale(self):
        """Largest coefficient magnitude (for scale-relative comparisons)."""
        s = float(np.abs(self.cell_density).max(initial=0.0))
        return max(s, float(np.abs(self.face_density).max(initial=0.0)))

    def pair_hats(self):
        """Pairings with every nodal hat function, (nv,)."""
        mesh = self.mesh
        out = np.zeros(mesh.n_vertices)
        a = self.cell_density
        contrib = (mesh.areas[:, None] / 12.0) * (a + a.sum(axis=1, keepdims=True))
        np.add.at(out, mesh.elements, contrib)
        idx = np.nonzero(self.face_density)[0]
        if idx.size:
            half = 0.5 * self.face_density[idx] * self.mesh.face_len[idx]
            np.add.at(out, mesh.faces[idx, 0], half)
            np.add.at(out, mesh.faces[idx, 1], half)
        return out


class SourceFunctional:
    """field_weight * <field, v> + <piecewise, v>, either part optional."""

    def __init__(self, mesh, field=None, piecewise=None, field_weight=1.0):
        if piecewise is not None and piecewise.mesh is not mesh:
            raise ValueError("piecewise part lives on a different mesh")
        self.mesh = mesh
        self.field = field
        self.piecewise = piecewise
        self.field_weight = float(field_weight)

    def pair_hats(self, quad_degree=DEFAULT_DEGREE):
        out = np.zeros(self.mesh.n_vertices)
        if self.field is not None:
            out += self.field_weight * field_load(self.mesh, self.field, quad_degree)
        if self.piecewise is not None:
            out += self.piecewise.pair_hats()
        return out


def residual_source(problem, U):
    """The residual f - L(U) as a SourceFunctional."""
    lu = apply_operator(problem.mesh, problem.kappa, U)
    if isinstance(problem.rhs, PiecewiseFunctional):
        return SourceFunctional(problem.mesh, piecewise=problem.rhs - lu)
    return SourceFunctional(problem.mesh, field=problem.rhs, piecewise=-1.0 * lu)


# -- problems and presets ------------------------------------------------------


class Problem:
    """Mesh, reaction coefficient and data of one boundary value problem."""

    def __init__(self, mesh, kappa, rhs, exact=None, name=""):
        if kappa <= 0:
            raise ValueError("kappa must be positive")
        self.mesh = mesh
        self.kappa = float(kappa)
        self.rhs = rhs
        self.exact = exact
        self.name = name

    def on_mesh(self, mesh):
        """Same problem posed on another mesh (for refinement loops)."""
        if isinstance(self.rhs, PiecewiseFunctional):
            raise TypeError("a mesh-bound right-hand side cannot move to a new mesh")
        return Problem(mesh, self.kappa, self.rhs, self.exact, self.name)


def _sinsin(kappa):
    pi = np.pi
    u = ScalarField(
        lambda x, y: np.sin(pi * x) * np.sin(pi * y),
        lambda x, y: (pi * np.cos(pi * x) * np.sin(pi * y),
                      pi * np.sin(pi * x) * np.cos(pi * y)),
        name="sinsin",
    )
    c = 2.0 * pi**2 + kappa**2
    f = ScalarField(lambda x, y: c * np.sin(pi * x) * np.sin(pi * y), name="sinsin-rhs")
    return f, u


def _const1(kappa):
    f = ScalarField(lambda x, y: np.ones_like(np.asarray(x, dtype=float)), name="one")
    return f, None


def _layer1d(kappa):
    # u = (1 - cosh(kappa(x-1/2))/cosh(kappa/2)) sin(pi y), written with
    # decaying exponentials so kappa = 1e4 does not overflow
    pi = np.pi
    k = float(kappa)

    def ratio(x):
        x = np.asarray(x, dtype=float)
        return (np.exp(-k * (1.0 - x)) + np.exp(-k * x)) / (1.0 + np.exp(-k))

    def dratio(x):
        x = np.asarray(x, dtype=float)
        return k * (np.exp(-k * (1.0 - x)) - np.exp(-k * x)) / (1.0 + np.exp(-k))

    u = ScalarField(
        lambda x, y: (1.0 - ratio(x)) * np.sin(pi * y),
        lambda x, y: (-dratio(x) * np.sin(pi * y),
                      pi * (1.0 - ratio(x)) * np.cos(pi * y)),
        name="layer1d",
    )
    f = ScalarField(lambda x, y: (k**2 + pi**2 * (1.0 - ratio(x))) * np.sin(pi * y),
                    name="layer1d-rhs")
    return f, u


PRESETS = {"sinsin": _sinsin, "const1": _const1, "layer1d": _layer1d}


def make_problem(mesh, kappa, preset):
    """Build a Problem from a named right-hand-side preset."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset '{preset}' (have: {', '.join(sorted(PRESETS))})")
    rhs, exact = PRESETS[preset](kappa)
    return Problem(mesh, kappa, rhs, exact, name=preset)


# -- assembly and solve --------------------------------------------------------


class GalerkinSystem:
    """Assembled stiffness-plus-scaled-mass operator.

    `matrix_full` couples all vertices; `matrix` is its restriction to the
    free (interior) vertices, which is symmetric positive definite.
    """

    def __init__(self, mesh, kappa, matrix_full, free):
        self.mesh = mesh
        self.kappa = kappa
        self.matrix_full = matrix_full
        self.free = free
        self.matrix = matrix_full[free][:, free].tocsr()


def assemble(mesh, kappa):
    """Stiffness + kappa^2 * mass in sparse CSR form."""
    g = all_bary_grads(mesh)
    stiff = np.einsum("eix,ejx->eij", g, g) * mesh.areas[:, None, None]
    mass = (np.ones((3, 3)) + np.eye(3))[None, :, :] * (mesh.areas / 12.0)[:, None, None]
    local = stiff + kappa**2 * mass
    rows = np.repeat(mesh.elements, 3, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, 3)).ravel()
    nv = mesh.n_vertices
    matrix = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()
    return GalerkinSystem(mesh, kappa, matrix, mesh.free_vertices())


def field_load(mesh, field, quad_degree=DEFAULT_DEGREE):
    """<f, hat_z> for every vertex z, by elementwise Gauss quadrature."""
    rule = quadrature.simplex_rule(quad_degree)
    pts = np.einsum("qi,eix->eqx", rule.points, mesh.vertices[mesh.elements])
    fvals = np.asarray(field.value(pts[..., 0], pts[..., 1]), dtype=float)
    contrib = 2.0 * mesh.areas[:, None] * np.einsum(
        "q,eq,qi->ei", rule.weights, fvals, rule.points)
    out = np.zeros(mesh.n_vertices)
    np.add.at(out, mesh.elements, contrib)
    return out


def load_vector(problem, quad_degree=DEFAULT_DEGREE):
    """Right-hand side pairings <f, hat_z>, all vertices."""
    if isinstance(problem.rhs, PiecewiseFunctional):
        return problem.rhs.pair_hats()
    return field_load(problem.mesh, problem.rhs, quad_degree)


def solve(problem, tol=1e-10, quad_degree=DEFAULT_DEGREE, system=None):
    """Galerkin solution by Jacobi-preconditioned conjugate gradients.

    Raises SolverError if CG does not converge within 10 * dof iterations or
    the final residual misses the tolerance.
    """
    if system is None:
        system = assemble(problem.mesh, problem.kappa)
    b_full = load_vector(problem, quad_degree)
    b = b_full[system.free]
    values = np.zeros(problem.mesh.n_vertices)
    n = len(b)
    if n == 0:
        return DiscreteFunction(problem.mesh, values)
    diag = system.matrix.diagonal()
    precond = spla.LinearOperator((n, n), matvec=lambda r: r / diag)
    x, info = spla.cg(system.matrix, b, rtol=tol, atol=0.0,
                      maxiter=max(10 * n, 50), M=precond)
    if info != 0:
        raise SolverError(f"CG failed to converge (info={info}, n={n})")
    resid = np.linalg.norm(system.matrix @ x - b)
    bnorm = np.linalg.norm(b)
    if bnorm > 0 and resid > 100.0 * tol * bnorm:
        raise SolverError(f"CG residual {resid:.3e} exceeds tolerance against {bnorm:.3e}")
    values[system.free] = x
    return DiscreteFunction(problem.mesh, values)


# -- operator application ------------------------------------------------------


def grad_jumps(mesh, U):
    """Normal-derivative jumps of a DiscreteFunction across interior faces.

    Sign convention: (grad U|_lo - grad U|_hi) . n_F with n_F oriented from
    the lower adjacent element index to the higher.  Returns (nf,) with zeros
    on boundary faces.
    """
    grads = U.element_gradients()
    out = np.zeros(mesh.n_faces)
    idx = np.nonzero(mesh.interior_face)[0]
    lo, hi = mesh.face_elems[idx, 0], mesh.face_elems[idx, 1]
    out[idx] = np.einsum("fx,fx->f", grads[lo] - grads[hi], mesh.normals[idx])
    return out


def apply_operator(mesh, kappa, U):
    """Image of a discrete function under the operator, as volume + face parts.

    Integration by parts against any test function in the zero-trace space
    gives <L(U), v> = sum_T int_T kappa^2 U v + sum_F jump_F int_F v, so the
    representation has cell density kappa^2 * U and face density grad_jumps.
    """
    cell = kappa**2 * U.values[mesh.elements]
    return PiecewiseFunctional(mesh, cell, grad_jumps(mesh, U))


# -- norms ----------------------------------------------------------------------


def _p1_mass_sq(areas, vals):
    # int_T (sum v_i lam_i)^2 = |T|/12 * (sum v_i^2 + (sum v_i)^2)
    return areas / 12.0 * ((vals**2).sum(axis=1) + vals.sum(axis=1) ** 2)


def energy_norm_sq_elements(mesh, kappa, v, quad_degree=DEFAULT_DEGREE):
    """Squared energy norm per element: |grad v|^2 + kappa^2 |v|^2.

    Exact for DiscreteFunction; Gauss quadrature for a ScalarField (which must
    provide a gradient).
    """
    if isinstance(v, DiscreteFunction):
        grads = v.element_gradients()
        e2 = mesh.areas * np.einsum("ex,ex->e", grads, grads)
        return e2 + kappa**2 * _p1_mass_sq(mesh.areas, v.element_values())
    if v.grad is None:
        raise ValueError("energy norm of a field requires its gradient")
    rule = quadrature.simplex_rule(quad_degree)
    pts = np.einsum("qi,eix->eqx", rule.points, mesh.vertices[mesh.elements])
    gx, gy = v.grad(pts[..., 0], pts[..., 1])
    vals = v.value(pts[..., 0], pts[..., 1])
    dens = gx**2 + gy**2 + kappa**2 * vals**2
    return 2.0 * mesh.areas * (dens @ rule.weights)

def energy_norm(mesh, kappa, v, region=None, quad_degree=DEFAULT_DEGREE):
    """Energy norm over the whole mesh or over the elements in `region`."""
    e2 = energy_norm_sq_elements(mesh, kappa, v, quad_degree)
    if region is not None:
        e2 = e2[np.asarray(region, dtype=np.int64)]
    return float(np.sqrt(e2.sum()))


def energy_error_sq_elements(problem, U, quad_degree=DEFAULT_DEGREE):
    """Squared energy norm of u - U per element, u the exact solution."""
    if problem.exact is None or problem.exact.grad is None:
        raise ValueError("problem has no exact solution to compare against")
    mesh = problem.mesh
    rule = quadrature.simplex_rule(quad_degree)
    pts = np.einsum("qi,eix->eqx", rule.points, mesh.vertices[mesh.elements])
    x, y = pts[..., 0], pts[..., 1]
    gx, gy = problem.exact.grad(x, y)
    uvals = problem.exact.value(x, y)
    Ugrads = U.element_gradients()
    Uvals = np.einsum("ei,qi->eq", U.element_values(), rule.points)
    dens = ((gx - Ugrads[:, None, 0]) ** 2 + (gy - Ugrads[:, None, 1]) ** 2
            + problem.kappa**2 * (uvals - Uvals) ** 2)
    return 2.0 * mesh.areas * (dens @ rule.weights)


def energy_error(problem, U, region=None, quad_degree=DEFAULT_DEGREE):
    e2 = energy_error_sq_elements(problem, U, quad_degree)
    if region is not None:
        e2 = e2[np.asarray(region, dtype=np.int64)]
    return float(np.sqrt(e2.sum()))


def prolongate(U, fine_mesh):
    """Carry a DiscreteFunction to a mesh produced by one bisect call."""
    parents = fine_mesh.new_vertex_parents
    if fine_mesh.n_parent_vertices != U.mesh.n_vertices:
        raise ValueError("fine mesh was not refined from the mesh of U")
    values = np.empty(fine_mesh.n_vertices)
    values[:U.mesh.n_vertices] = U.values
    values[U.mesh.n_vertices:] = 0.5 * (values[parents[:, 0]] + values[parents[:, 1]])
    return DiscreteFunction(fine_mesh, values)
