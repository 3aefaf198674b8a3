"""Error indicators, oscillation and dual-norm verification surrogates.

The residual of a discrete solution U against data f splits, after
interpolating f, into a P1 volume part per element and a constant jump part
per interior face:

    r|_T = (interpolated cell density) - kappa^2 U|_T
    j|_F = (interpolated face density) - grad-jump of U across F.

The shipped per-vertex indicator weighs these with the reaction-aware factors
min(h, 1/kappa):

    E(z) = (sum_{T in star} min(h_T,1/kappa)^2 ||r||_T^2)^(1/2)
         + (sum_{F in skeleton} min(h_F,1/kappa) ||j||_F^2)^(1/2).

Dual norms of functionals on vertex stars (and on the whole domain) are
approximated from below by Riesz representatives in P1 spaces on uniformly
red-refined patches with zero boundary values; refining the patch can only
grow the value, so `depth` tunes the accuracy of the surrogate.  These
surrogates price the oscillation f - Pi f and back the verification of the
localization and error-residual identities.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import quadrature
from .galerkin import (PiecewiseFunctional, SourceFunctional,
                       energy_error_sq_elements, grad_jumps, load_vector,
                       residual_source)
from .quadrature import DEFAULT_DEGREE


def weight_elements(mesh, kappa):
    """min(h_T, 1/kappa) per element."""
    return np.minimum(mesh.h_elem, 1.0 / kappa)


def weight_faces(mesh, kappa):
    """min(h_F, 1/kappa) per face, h_F the largest adjacent element diameter."""
    return np.minimum(mesh.h_face, 1.0 / kappa)


def _p1_mass_sq(areas, coeffs):
    return areas / 12.0 * ((coeffs**2).sum(axis=1) + coeffs.sum(axis=1) ** 2)


class ResidualData:
    """Volume and jump residual coefficients of one discrete solution."""

    def __init__(self, mesh, kappa, cell, face):
        self.mesh = mesh
        self.kappa = kappa
        self.cell = cell  # (ne, 3) barycentric coefficients of r per element
        self.face = face  # (nf,) constant j per interior face, 0 on boundary

    def cell_norms_sq(self):
        """||r||_T^2 per element (exact for the P1 representation)."""
        return _p1_mass_sq(self.mesh.areas, self.cell)

    def face_norms_sq(self):
        """||j||_F^2 = j^2 |F| per face."""
        return self.face**2 * self.mesh.face_len


def residuals(problem, U, interpolated):
    """Residual coefficients from the interpolated data and the solution.

    `interpolated` is the volume+face interpolation of the right-hand side.
    Both parts vanish identically when f itself is the operator image of U.
    """
    mesh = problem.mesh
    cell = interpolated.cell_density - problem.kappa**2 * U.values[mesh.elements]
    face = interpolated.face_density - grad_jumps(mesh, U)
    face = np.where(mesh.interior_face, face, 0.0)
    return ResidualData(mesh, problem.kappa, cell, face)


def vertex_indicators(rd):
    """E(z) for every vertex, (nv,)."""
    mesh = rd.mesh
    wT2 = weight_elements(mesh, rd.kappa) ** 2
    wF = weight_faces(mesh, rd.kappa)
    elem_part = np.zeros(mesh.n_vertices)
    np.add.at(elem_part, mesh.elements,
              np.broadcast_to((wT2 * rd.cell_norms_sq())[:, None], mesh.elements.shape))
    face_part = np.zeros(mesh.n_vertices)
    contrib = wF * rd.face_norms_sq()
    np.add.at(face_part, mesh.faces,
              np.broadcast_to(contrib[:, None], mesh.faces.shape))
    return np.sqrt(elem_part) + np.sqrt(face_part)


def vertex_indicator(rd, z):
    """E(z) for a single vertex (star sums over elements and skeleton)."""
    mesh = rd.mesh
    star = mesh.star(z)
    wT2 = weight_elements(mesh, rd.kappa)[star.elements] ** 2
    wF = weight_faces(mesh, rd.kappa)[star.skeleton]
    elem = float((wT2 * rd.cell_norms_sq()[star.elements]).sum())
    face = float((wF * rd.face_norms_sq()[star.skeleton]).sum())
    return np.sqrt(elem) + np.sqrt(face)


def classic_indicators(problem, U, quad_degree=DEFAULT_DEGREE):
    """Squared classical residual indicator per element.

    min(h_T,1/kappa)^2 ||f_T - kappa^2 U||_T^2
    + 1/2 sum_{F subset dT interior} min(h_F,1/kappa) ||grad-jump||_F^2,
    with f_T the elementwise mean of the volume part of f.
    """
    mesh = problem.mesh
    kappa = problem.kappa
    if isinstance(problem.rhs, PiecewiseFunctional):
        f_mean = problem.rhs.cell_density.mean(axis=1)
    else:
        rule = quadrature.simplex_rule(quad_degree)
        pts = np.einsum("qi,eix->eqx", rule.points, mesh.vertices[mesh.elements])
        fv = np.asarray(problem.rhs.value(pts[..., 0], pts[..., 1]), dtype=float)
        f_mean = 2.0 * (fv @ rule.weights)  # divided by |T| against the |T| Jacobian
    coeffs = f_mean[:, None] - kappa**2 * U.values[mesh.elements]
    vol = weight_elements(mesh, kappa) ** 2 * _p1_mass_sq(mesh.areas, coeffs)
    jumps_sq = grad_jumps(mesh, U) ** 2 * mesh.face_len * weight_faces(mesh, kappa)
    jump_part = 0.5 * jumps_sq[mesh.elem_faces] * mesh.interior_face[mesh.elem_faces]
    return vol + jump_part.sum(axis=1)


def classic_indicator(problem, U, element, quad_degree=DEFAULT_DEGREE):
    """Squared classical indicator of a single element."""
    return float(classic_indicators(problem, U, quad_degree)[element])


# -- P1 spaces on red-refined patches -------------------------------------------


class _Template:
    """Uniform red refinement of the reference triangle, in barycentrics."""

    def __init__(self, depth):
        verts = [np.eye(3)[i] for i in range(3)]
        tris = [(0, 1, 2)]
        for _ in range(depth):
            cache = {}

            def midpoint(a, b):
                key = (a, b) if a < b else (b, a)
                if key not in cache:
                    verts.append(0.5 * (verts[a] + verts[b]))
                    cache[key] = len(verts) - 1
                return cache[key]

            nxt = []
            for a, b, c in tris:
                ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
                nxt += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
            tris = nxt
        self.bary = np.array(verts)
        self.tris = np.array(tris, dtype=np.int64)
        # classify: barycentric entries stay exact dyadic rationals
        self.corner_of = np.full(len(verts), -1, dtype=np.int64)
        self.face_of = np.full(len(verts), -1, dtype=np.int64)
        self.face_param = np.zeros(len(verts))
        for v, lam in enumerate(self.bary):
            zero = np.nonzero(lam == 0.0)[0]
            if len(zero) == 2:
                self.corner_of[v] = int(np.nonzero(lam == 1.0)[0][0])
            elif len(zero) == 1:
                i = int(zero[0])
                self.face_of[v] = i
                self.face_param[v] = lam[(i + 2) % 3]  # toward local endpoint i+2
        edges = np.sort(self.tris[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2), axis=1)
        edges = np.unique(edges, axis=0)
        self.face_edges = []
        for i in range(3):
            on = (self.bary[edges[:, 0], i] == 0.0) & (self.bary[edges[:, 1], i] == 0.0)
            self.face_edges.append(edges[on])


_template_cache = {}


def _template(depth):
    if depth not in _template_cache:
        _template_cache[depth] = _Template(depth)
    return _template_cache[depth]


class PatchSpace:
    """P1 space with zero boundary values on a red-refined element patch.

    Sub-vertices shared between parent elements are identified topologically
    (by parent vertex, or by face id and the exact dyadic parameter along the
    face), never by coordinate lookup.
    """

    def __init__(self, mesh, elements, depth):
        self.mesh = mesh
        self.parents = np.asarray(elements, dtype=np.int64)
        self.depth = int(depth)
        tpl = _template(self.depth)
        self.tpl = tpl
        npar = len(self.parents)
        ntv = len(tpl.bary)

        index = {}
        coords = []
        vert_map = np.empty((npar, ntv), dtype=np.int64)
        for p, e in enumerate(self.parents):
            tri = mesh.elements[e]
            efaces = mesh.elem_faces[e]
            phys = tpl.bary @ mesh.vertices[tri]
            for tv in range(ntv):
                i = tpl.corner_of[tv]
                if i >= 0:
                    key = ("v", int(tri[i]))
                else:
                    i = tpl.face_of[tv]
                    if i >= 0:
                        a, b = int(tri[(i + 1) % 3]), int(tri[(i + 2) % 3])
                        t = float(tpl.face_param[tv])  # parameter toward b
                        if a > b:
                            t = 1.0 - t
                        key = ("f", int(efaces[i]), t)
                    else:
                        key = ("e", p, tv)
                g = index.get(key)
                if g is None:
                    g = len(coords)
                    index[key] = g
                    coords.append(phys[tv])
                vert_map[p, tv] = g
        self.coords = np.array(coords)
        self.vert_map = vert_map
        self.tris = vert_map[:, tpl.tris].reshape(-1, 3)
        self.tri_parent = np.repeat(self.parents, len(tpl.tris))

        p = self.coords[self.tris]
        self.areas = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                            - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
        edges = p[:, [2, 0, 1]] - p[:, [1, 2, 0]]
        g = np.stack([-edges[..., 1], edges[..., 0]], axis=-1)
        self.grads = g / (2.0 * self.areas)[:, None, None]

        pairs = np.sort(self.tris[:, [[1, 2], [2, 0], [0, 1]]].reshape(-1, 2), axis=1)
        uniq, counts = np.unique(pairs, axis=0, return_counts=True)
        boundary = np.zeros(len(self.coords), dtype=bool)
        boundary[uniq[counts == 1].ravel()] = True
        self.free = np.nonzero(~boundary)[0]

    def operator(self, kappa):
        """Stiffness + kappa^2 mass over all patch vertices (CSR)."""
        local = (np.einsum("eix,ejx->eij", self.grads, self.grads)
                 * self.areas[:, None, None])
        local += kappa**2 * (np.ones((3, 3)) + np.eye(3))[None] * (
            self.areas / 12.0)[:, None, None]
        rows = np.repeat(self.tris, 3, axis=1).ravel()
        cols = np.tile(self.tris, (1, 3)).ravel()
        n = len(self.coords)
        return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    def load(self, g, quad_degree=DEFAULT_DEGREE):
        """<g, hat> for every patch vertex; g is a SourceFunctional."""
        out = np.zeros(len(self.coords))
        if g.field is not None:
            rule = quadrature.simplex_rule(quad_degree)
            pts = np.einsum("qi,eix->eqx", rule.points, self.coords[self.tris])
            fv = np.asarray(g.field.value(pts[..., 0], pts[..., 1]), dtype=float)
            contrib = 2.0 * self.areas[:, None] * np.einsum(
                "q,eq,qi->ei", rule.weights, fv, rule.points)
            np.add.at(out, self.tris, g.field_weight * contrib)
        if g.piecewise is not None:
            self._load_piecewise(g.piecewise, out)
        return out

    def _load_piecewise(self, g, out):
        tpl = self.tpl
        # volume densities: value of the parent P1 density at each sub-vertex
        dens_at = np.einsum("pz,vz->pv", g.cell_density[self.parents], tpl.bary)
        vals = dens_at[:, tpl.tris].reshape(-1, 3)  # per sub-tri vertex
        contrib = (self.areas[:, None] / 12.0) * (vals + vals.sum(axis=1, keepdims=True))
        np.add.at(out, self.tris, contrib)
        # face line sources: every mesh face of the patch is visited once
        seen = {}
        for p, e in enumerate(self.parents):
            for i, face in enumerate(self.mesh.elem_faces[e]):
                if g.face_density[face] != 0.0 and int(face) not in seen:
                    seen[int(face)] = (p, i)
        for face, (p, i) in seen.items():
            c = g.face_density[face]
            sub_len = self.mesh.face_len[face] / 2**self.depth
            ids = self.vert_map[p, tpl.face_edges[i]]
            np.add.at(out, ids.ravel(), 0.5 * c * sub_len)

    def dual_norm(self, g, kappa, quad_degree=DEFAULT_DEGREE):
        """Energy norm of the Riesz representative of g in the patch space."""
        free = self.free
        if len(free) == 0:
            return 0.0
        A = self.operator(kappa)[free][:, free].tocsc()
        b = self.load(g, quad_degree)[free]
        if len(free) <= 220:
            w = np.linalg.solve(A.toarray(), b)
        else:
            w = spla.spsolve(A, b)
        return float(np.sqrt(max(w @ (A @ w), 0.0)))


def _as_source(mesh, g):
    if isinstance(g, SourceFunctional):
        return g
    if isinstance(g, PiecewiseFunctional):
        return SourceFunctional(mesh, piecewise=g)
    return SourceFunctional(mesh, field=g)


def discrete_dual_norm(mesh, star, g, kappa, depth=2, quad_degree=DEFAULT_DEGREE):
    """Lower bound of the dual norm of g on a vertex star.

    Monotone nondecreasing in `depth` (the red-refined P1 spaces are nested).
    """
    space = PatchSpace(mesh, star.elements, depth)
    return space.dual_norm(_as_source(mesh, g), kappa, quad_degree)


def global_dual_norm(mesh, g, kappa, depth=2, quad_degree=DEFAULT_DEGREE):
    """Same surrogate on the whole domain with zero trace on its boundary."""
    space = PatchSpace(mesh, np.arange(mesh.n_elements), depth)
    return space.dual_norm(_as_source(mesh, g), kappa, quad_degree)


# -- oscillation -----------------------------------------------------------------


def oscillation_source(problem, interpolated):
    """f - (interpolation of f) as a pairable functional."""
    if isinstance(problem.rhs, PiecewiseFunctional):
        return SourceFunctional(problem.mesh, piecewise=problem.rhs - interpolated)
    return SourceFunctional(problem.mesh, field=problem.rhs,
                            piecewise=-1.0 * interpolated)


def oscillation_surrogate(problem, interpolated, z, depth=2,
                          quad_degree=DEFAULT_DEGREE):
    """Dual norm surrogate of f - Pi f on the star of vertex z."""
    g = oscillation_source(problem, interpolated)
    return discrete_dual_norm(problem.mesh, problem.mesh.star(z), g,
                              problem.kappa, depth, quad_degree)


def all_oscillations(problem, interpolated, depth=2, quad_degree=DEFAULT_DEGREE):
    """Oscillation surrogate for every vertex star, (nv,)."""
    g = oscillation_source(problem, interpolated)
    mesh = problem.mesh
    out = np.empty(mesh.n_vertices)
    for z in range(mesh.n_vertices):
        out[z] = discrete_dual_norm(mesh, mesh.star(z), g, problem.kappa,
                                    depth, quad_degree)
    return out


# -- localization of the residual norm -------------------------------------------


class LocalizeReport:
    def __init__(self, global_norm, local_norms, max_orthogonality):
        self.global_norm = global_norm
        self.local_norms = local_norms
        self.max_orthogonality = max_orthogonality

    @property
    def local_sum(self):
        return float(np.sqrt((self.local_norms**2).sum()))

    @property
    def ratio(self):
        return self.local_sum / self.global_norm


def localize_check(problem, U, depth=2, quad_degree=DEFAULT_DEGREE, ortho_tol=1e-6):
    """Compare the residual dual norm against the sum over vertex stars.

    The localization argument needs the residual to annihilate the discrete
    space; the check refuses to run (ValueError) when Galerkin orthogonality
    is violated beyond `ortho_tol` relative to the load size.
    """
    mesh = problem.mesh
    g = residual_source(problem, U)
    pair_all = g.pair_hats(quad_degree)
    scale = max(1.0, float(np.abs(load_vector(problem, quad_degree)).max()))
    viol = float(np.abs(pair_all[mesh.free_vertices()]).max(initial=0.0))
    if viol > ortho_tol * scale:
        raise ValueError(
            f"residual is not orthogonal to the discrete space "
            f"(violation {viol:.3e} vs scale {scale:.3e})")
    local = np.empty(mesh.n_vertices)
    for z in range(mesh.n_vertices):
        local[z] = discrete_dual_norm(mesh, mesh.star(z), g, problem.kappa,
                                      depth, quad_degree)
    glob = global_dual_norm(mesh, g, problem.kappa, depth, quad_degree)
    return LocalizeReport(glob, local, viol)


# -- assembled per-vertex report ---------------------------------------------------


def star_true_error_sq(problem, U, quad_degree=DEFAULT_DEGREE):
    """Squared energy error on every vertex star, (nv,)."""
    e2 = energy_error_sq_elements(problem, U, quad_degree)
    out = np.zeros(problem.mesh.n_vertices)
    np.add.at(out, problem.mesh.elements,
              np.broadcast_to(e2[:, None], problem.mesh.elements.shape))
    return out


class IndicatorReport:
    """Per-vertex indicators plus global aggregates for one solve."""

    def __init__(self, problem, U, E, osc, classic_sq, true_error=None):
        self.problem = problem
        self.U = U
        self.E = E
        self.osc = osc
        self.classic_sq = classic_sq
        self.true_error = true_error

    @property
    def estimator(self):
        return float(np.sqrt((self.E**2).sum()))

    @property
    def oscillation(self):
        if self.osc is None:
            return None
        return float(np.sqrt((self.osc**2).sum()))

    @property
    def total(self):
        t2 = (self.E**2).sum()
        if self.osc is not None:
            t2 = t2 + (self.osc**2).sum()
        return float(np.sqrt(t2))

    @property
    def classic(self):
        return float(np.sqrt(self.classic_sq.sum()))

    @property
    def effectivity(self):
        if self.true_error is None or self.true_error == 0.0:
            return None
        return self.total / self.true_error


def build_report(problem, U, interpolated=None, with_oscillation=True,
                 depth=2, quad_degree=DEFAULT_DEGREE):
    """Compute residuals, indicators and (optionally) oscillation in one go."""
    from .dual_system import project_pi

    if interpolated is None:
        interpolated = project_pi(problem.mesh, problem.kappa, problem.rhs,
                                  quad_degree)
    rd = residuals(problem, U, interpolated)
    E = vertex_indicators(rd)
    osc = (all_oscillations(problem, interpolated, depth, quad_degree)
           if with_oscillation else None)
    classic_sq = classic_indicators(problem, U, quad_degree)
    true_error = None
    if problem.exact is not None and problem.exact.grad is not None:
        e2 = energy_error_sq_elements(problem, U, quad_degree)
        true_error = float(np.sqrt(e2.sum()))
    return IndicatorReport(problem, U, E, osc, classic_sq, true_error)
