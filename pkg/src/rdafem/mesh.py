"""Conforming triangulations with newest-vertex bisection.

A mesh is immutable after construction; refinement returns a new mesh.  The
element array stores each triangle counter-clockwise with the convention that
its refinement edge is the edge (v0, v1).  On initial construction the
refinement edge is the longest edge (deterministic tie-break by local edge
order); bisection children inherit their refinement edges from the standard
newest-vertex rule, so no separate marker array is carried around.

Interior faces carry a unit normal oriented from the lower adjacent element
index to the higher one; boundary faces point out of the domain.  Geometry
helpers (barycentric coordinates, hat-function gradients, squeezed triangles)
live here as well, since every other module needs them.
"""

import numpy as np


class MeshError(Exception):
    """Raised for format errors, non-conforming input, or inverted elements."""


class Star:
    """The patch of elements around a vertex.

    Attributes
    ----------
    center : int
        Vertex index.
    elements : (k,) int array
        Elements containing the vertex.
    skeleton : (m,) int array
        Faces containing the vertex (interior and boundary).
    on_boundary : bool
        Whether the center vertex lies on the domain boundary.
    """

    def __init__(self, center, elements, skeleton, on_boundary):
        self.center = int(center)
        self.elements = np.asarray(elements, dtype=np.int64)
        self.skeleton = np.asarray(skeleton, dtype=np.int64)
        self.on_boundary = bool(on_boundary)


class SqueezedTriangle:
    """A triangle compressed toward one of its faces.

    The face F is kept pointwise; the opposite vertex slides along the edge
    toward the first face endpoint of the orientation-preserving frame, ending
    at (1-theta)*v0 + theta*apex.  `coords` lists (v0, v1, apex') counter-
    clockwise, and `parent_bary` gives the barycentric coordinates of these
    three points with respect to the parent element, so integrals of parent
    quantities over the squeezed triangle reduce to a 3x3 product.
    """

    def __init__(self, element, face, theta, coords, parent_bary):
        self.element = int(element)
        self.face = int(face)
        self.theta = float(theta)
        self.coords = coords
        self.parent_bary = parent_bary

    @property
    def area(self):
        c = self.coords
        return 0.5 * abs(
            (c[1, 0] - c[0, 0]) * (c[2, 1] - c[0, 1])
            - (c[2, 0] - c[0, 0]) * (c[1, 1] - c[0, 1])
        )


def _signed_areas(vertices, elements):
    p = vertices[elements]
    return 0.5 * (
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    )


class Mesh:
    """Conforming triangulation of a polygonal domain.

    Parameters
    ----------
    vertices : (nv, 2) float array
    elements : (ne, 3) int array
        Counter-clockwise vertex triples.
    ref_edge_policy : {"longest", "asis"}
        "longest" rotates each triple so the longest edge sits at (v0, v1);
        "asis" trusts the given order (used by bisect, whose children already
        encode their refinement edges).
    """

    def __init__(self, vertices, elements, ref_edge_policy="longest"):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        elements = np.ascontiguousarray(elements, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must be an (nv, 2) array")
        if elements.ndim != 2 or elements.shape[1] != 3:
            raise MeshError("elements must be an (ne, 3) array")
        if elements.size and (elements.min() < 0 or elements.max() >= len(vertices)):
            raise MeshError("element vertex index out of range")

        areas = _signed_areas(vertices, elements)
        bad = np.nonzero(areas <= 0.0)[0]
        if bad.size:
            raise MeshError(f"element {bad[0]} has non-positive area (not counter-clockwise)")

        if ref_edge_policy == "longest":
            elements = self._rotate_longest(vertices, elements)
        elif ref_edge_policy != "asis":
            raise ValueError("ref_edge_policy must be 'longest' or 'asis'")

        self.vertices = vertices
        self.elements = elements
        self.areas = _signed_areas(vertices, elements)
        self._build_topology()
        self._build_geometry()
        for arr in (self.vertices, self.elements, self.faces, self.face_elems,
                    self.elem_faces, self.normals, self.areas):
            arr.setflags(write=False)

    @staticmethod
    def _rotate_longest(vertices, elements):
        p = vertices[elements]
        d = np.stack([
            np.linalg.norm(p[:, 1] - p[:, 0], axis=1),  # edge (0,1)
            np.linalg.norm(p[:, 2] - p[:, 1], axis=1),  # edge (1,2)
            np.linalg.norm(p[:, 0] - p[:, 2], axis=1),  # edge (2,0)
        ], axis=1)
        k = np.argmax(d, axis=1)
        rotated = elements.copy()
        rotated[k == 1] = elements[k == 1][:, [1, 2, 0]]
        rotated[k == 2] = elements[k == 2][:, [2, 0, 1]]
        return rotated

    def _build_topology(self):
        elements = self.elements
        ne = len(elements)
        # local face i is opposite local vertex i
        pairs = elements[:, [[1, 2], [2, 0], [0, 1]]].reshape(-1, 2)
        pairs_sorted = np.sort(pairs, axis=1)
        faces, inverse = np.unique(pairs_sorted, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        self.faces = faces
        self.elem_faces = inverse.reshape(ne, 3)

        counts = np.bincount(inverse, minlength=len(faces))
        if counts.max(initial=0) > 2:
            f = int(np.argmax(counts))
            raise MeshError(
                f"face {tuple(faces[f])} shared by {counts[f]} elements (non-conforming)"
            )
        order = np.argsort(inverse, kind="stable")
        owner = order // 3
        face_elems = np.full((len(faces), 2), -1, dtype=np.int64)
        starts = np.zeros(len(faces) + 1, dtype=np.int64)
        np.cumsum(counts, out=starts[1:])
        for f in range(len(faces)):
            adj = np.sort(owner[starts[f]:starts[f + 1]])
            face_elems[f, :len(adj)] = adj
        self.face_elems = face_elems
        self.interior_face = counts == 2

        self.boundary_vertex = np.zeros(len(self.vertices), dtype=bool)
        bfaces = faces[~self.interior_face]
        if bfaces.size:
            self.boundary_vertex[bfaces.ravel()] = True

        # vertex -> incident elements, CSR-style
        flat = elements.ravel()
        vorder = np.argsort(flat, kind="stable")
        vcounts = np.bincount(flat, minlength=len(self.vertices))
        vstarts = np.zeros(len(self.vertices) + 1, dtype=np.int64)
        np.cumsum(vcounts, out=vstarts[1:])
        self._vertex_elem_data = vorder // 3
        self._vertex_elem_starts = vstarts

        # vertex -> incident faces
        fflat = faces.ravel()
        forder = np.argsort(fflat, kind="stable")
        fcounts = np.bincount(fflat, minlength=len(self.vertices))
        fstarts = np.zeros(len(self.vertices) + 1, dtype=np.int64)
        np.cumsum(fcounts, out=fstarts[1:])
        self._vertex_face_data = forder // 2
        self._vertex_face_starts = fstarts

    def _build_geometry(self):
        p = self.vertices[self.elements]
        edge_len = np.stack([
            np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
            np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
            np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
        ], axis=1)
        self.h_elem = edge_len.max(axis=1)
        # inscribed-ball diameter: 4|T| / perimeter
        self.rho_elem = 4.0 * self.areas / edge_len.sum(axis=1)

        fp = self.vertices[self.faces]
        tang = fp[:, 1] - fp[:, 0]
        self.face_len = np.linalg.norm(tang, axis=1)
        h_face = self.h_elem[self.face_elems[:, 0]]
        other = self.face_elems[:, 1]
        mask = other >= 0
        h_face[mask] = np.maximum(h_face[mask], self.h_elem[other[mask]])
        self.h_face = h_face

        normals = np.column_stack([tang[:, 1], -tang[:, 0]])
        normals /= self.face_len[:, None]
        mid = 0.5 * (fp[:, 0] + fp[:, 1])
        centroid = self.vertices[self.elements[self.face_elems[:, 0]]].mean(axis=1)
        flip = np.einsum("ij,ij->i", normals, mid - centroid) < 0.0
        normals[flip] *= -1.0
        self.normals = normals

    # -- basic queries ----------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def shape_metric(self):
        """Largest ratio of element diameter to inscribed-ball diameter."""
        return float((self.h_elem / self.rho_elem).max())

    def free_vertices(self):
        """Indices of vertices not on the domain boundary."""
        return np.nonzero(~self.boundary_vertex)[0]

    def vertex_elements(self, z):
        s, e = self._vertex_elem_starts[z], self._vertex_elem_starts[z + 1]
        return np.sort(self._vertex_elem_data[s:e])

    def vertex_faces(self, z):
        s, e = self._vertex_face_starts[z], self._vertex_face_starts[z + 1]
        return np.sort(self._vertex_face_data[s:e])

    def element_coords(self, e):
        return self.vertices[self.elements[e]]

    def bary_grads(self, e):
        """Gradients of the three barycentric coordinates of element e, (3,2)."""
        c = self.element_coords(e)
        g = np.empty((3, 2))
        for i in range(3):
            edge = c[(i + 2) % 3] - c[(i + 1) % 3]
            g[i] = np.array([-edge[1], edge[0]]) / (2.0 * self.areas[e])
        return g

    def barycentric(self, e, points):
        """Barycentric coordinates of (n, 2) points w.r.t. element e."""
        c = self.element_coords(e)
        points = np.atleast_2d(points)
        A = np.column_stack([c[1] - c[0], c[2] - c[0]])
        lam = np.linalg.solve(A, (points - c[0]).T).T
        return np.column_stack([1.0 - lam.sum(axis=1), lam])

    # -- stars -------------------------------------------------------------

    def star(self, z):
        """Patch of elements and skeleton faces around vertex z."""
        z = int(z)
        if not 0 <= z < self.n_vertices:
            raise MeshError(f"vertex {z} out of range")
        return Star(z, self.vertex_elements(z), self.vertex_faces(z),
                    self.boundary_vertex[z])

    # -- verification ------------------------------------------------------

    def audit(self):
        """Exhaustive conformity audit; raises MeshError on any defect."""
        if (_signed_areas(self.vertices, self.elements) <= 0).any():
            raise MeshError("inverted element")
        key = np.sort(self.elements, axis=1)
        if len(np.unique(key, axis=0)) != self.n_elements:
            raise MeshError("duplicate element")
        counts = (self.face_elems >= 0).sum(axis=1)
        if not np.isin(counts, (1, 2)).all():
            raise MeshError("face incidence count outside {1, 2}")
        if (counts == 2).sum() != self.interior_face.sum():
            raise MeshError("interior-face bookkeeping inconsistent")
        used = np.zeros(self.n_vertices, dtype=bool)
        used[self.elements.ravel()] = True
        if not used.all():
            raise MeshError(f"vertex {int(np.nonzero(~used)[0][0])} not used by any element")
        uniq = np.unique(self.vertices, axis=0)
        if len(uniq) != self.n_vertices:
            raise MeshError("duplicate vertex coordinates")

        bfaces = self.faces[~self.interior_face]
        if bfaces.size:
            # hanging vertices sit strictly inside a once-counted face; check
            # this before boundary closure so the diagnosis is the precise one
            a = self.vertices[bfaces[:, 0]]
            b = self.vertices[bfaces[:, 1]]
            ab = b - a
            L2 = np.einsum("ij,ij->i", ab, ab)
            for f in range(len(bfaces)):
                rel = self.vertices - a[f]
                cross = np.abs(rel[:, 0] * ab[f, 1] - rel[:, 1] * ab[f, 0])
                t = rel @ ab[f]
                on = (cross <= 1e-12 * L2[f]) & (t > 1e-12 * L2[f]) & (t < (1 - 1e-12) * L2[f])
                if on.any():
                    raise MeshError(
                        f"vertex {int(np.nonzero(on)[0][0])} hangs on face "
                        f"({int(bfaces[f, 0])}, {int(bfaces[f, 1])})"
                    )
            # each boundary vertex must close up with exactly two boundary faces
            cnt = np.bincount(bfaces.ravel(), minlength=self.n_vertices)
            bad = np.nonzero((cnt != 0) & (cnt != 2))[0]
            if bad.size:
                raise MeshError(f"boundary around vertex {int(bad[0])} does not close")


# -- construction and i/o ---------------------------------------------------


def load_mesh(path):
    """Read a mesh from the plain-text format.

    First line: `nv ne`.  Then nv lines `x y` and ne lines `i j k` with
    0-based counter-clockwise vertex indices.  Blank lines and `#` comments
    are allowed.  Boundary is inferred from face incidence.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = fh.read()
    except OSError as exc:
        raise MeshError(f"cannot read mesh file {path}: {exc}") from exc
    lines = []
    for ln, text in enumerate(raw.splitlines(), start=1):
        text = text.split("#", 1)[0].strip()
        if text:
            lines.append((ln, text))
    if not lines:
        raise MeshError(f"{path}: empty mesh file")
    try:
        nv, ne = (int(tok) for tok in lines[0][1].split())
    except ValueError as exc:
        raise MeshError(f"{path}:{lines[0][0]}: header must be 'nv ne'") from exc
    if len(lines) != 1 + nv + ne:
        raise MeshError(
            f"{path}: expected {1 + nv + ne} content lines for nv={nv} ne={ne}, "
            f"found {len(lines)}"
        )
    vertices = np.empty((nv, 2))
    for i in range(nv):
        ln, text = lines[1 + i]
        toks = text.split()
        if len(toks) != 2:
            raise MeshError(f"{path}:{ln}: vertex line must be 'x y'")
        try:
            vertices[i] = [float(toks[0]), float(toks[1])]
        except ValueError as exc:
            raise MeshError(f"{path}:{ln}: bad vertex coordinates") from exc
    elements = np.empty((ne, 3), dtype=np.int64)
    for i in range(ne):
        ln, text = lines[1 + nv + i]
        toks = text.split()
        if len(toks) != 3:
            raise MeshError(f"{path}:{ln}: element line must be 'i j k'")
        try:
            elements[i] = [int(toks[0]), int(toks[1]), int(toks[2])]
        except ValueError as exc:
            raise MeshError(f"{path}:{ln}: bad element indices") from exc
    if (elements < 0).any() or (elements >= nv).any():
        bad = int(np.nonzero(((elements < 0) | (elements >= nv)).any(axis=1))[0][0])
        raise MeshError(f"{path}: element {bad} references a vertex out of range")
    areas = _signed_areas(vertices, elements)
    if (areas <= 0).any():
        bad = int(np.nonzero(areas <= 0)[0][0])
        raise MeshError(f"{path}: element {bad} is not counter-clockwise")
    mesh = Mesh(vertices, elements, ref_edge_policy="longest")
    mesh.audit()
    return mesh


def save_mesh(mesh, path):
    """Write a mesh in the plain-text format read by load_mesh."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{mesh.n_vertices} {mesh.n_elements}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        for i, j, k in mesh.elements:
            fh.write(f"{i} {j} {k}\n")


def unit_square_2tri():
    """Unit square split along the diagonal into two triangles."""
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    elements = np.array([[0, 1, 2], [0, 2, 3]])
    return Mesh(vertices, elements)


def unit_square_crisscross():
    """Unit square split into four triangles around the center."""
    vertices = np.array([
        [0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5],
    ])
    elements = np.array([[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]])
    return Mesh(vertices, elements)


def l_shape():
    """L-shaped domain (-1,1)^2 minus the closed fourth quadrant."""
    vertices = np.array([
        [-1.0, -1.0], [0.0, -1.0], [0.0, 0.0], [1.0, 0.0],
        [1.0, 1.0], [0.0, 1.0], [-1.0, 1.0], [-1.0, 0.0],
    ])
    elements = np.array([
        [0, 1, 2], [0, 2, 7], [7, 2, 5], [7, 5, 6], [2, 3, 4], [2, 4, 5],
    ])
    return Mesh(vertices, elements)


# -- refinement --------------------------------------------------------------


def bisect(mesh, marked_elements):
    """Newest-vertex bisection of the marked elements with conforming closure.

    Returns a new Mesh.  The new mesh carries `new_vertex_parents`, a (k, 2)
    array of parent vertex indices for every added midpoint (midpoints only
    appear on parent faces, so both parents are original vertices), and
    `n_parent_vertices`.
    """
    marked_elements = np.asarray(marked_elements, dtype=np.int64)
    if marked_elements.size == 0:
        out = Mesh(mesh.vertices, mesh.elements, ref_edge_policy="asis")
        out.new_vertex_parents = np.empty((0, 2), dtype=np.int64)
        out.n_parent_vertices = mesh.n_vertices
        return out
    if marked_elements.min() < 0 or marked_elements.max() >= mesh.n_elements:
        raise MeshError("marked element index out of range")

    ef = mesh.elem_faces
    marked_face = np.zeros(mesh.n_faces, dtype=bool)
    marked_face[ef[marked_elements, 2]] = True
    # closure: an element with any marked edge must have its refinement edge marked
    while True:
        any_marked = marked_face[ef].any(axis=1)
        need = any_marked & ~marked_face[ef[:, 2]]
        if not need.any():
            break
        marked_face[ef[need, 2]] = True

    face_ids = np.nonzero(marked_face)[0]
    midpoint_of = np.full(mesh.n_faces, -1, dtype=np.int64)
    midpoint_of[face_ids] = mesh.n_vertices + np.arange(len(face_ids))
    new_coords = 0.5 * (mesh.vertices[mesh.faces[face_ids, 0]]
                        + mesh.vertices[mesh.faces[face_ids, 1]])
    vertices = np.vstack([mesh.vertices, new_coords])

    children = []
    for e in range(mesh.n_elements):
        v0, v1, v2 = mesh.elements[e]
        m2 = midpoint_of[ef[e, 2]]
        if m2 < 0:
            children.append((v0, v1, v2))
            continue
        m0 = midpoint_of[ef[e, 0]]  # midpoint of (v1, v2)
        m1 = midpoint_of[ef[e, 1]]  # midpoint of (v2, v0)
        # first cut along the refinement edge (v0, v1)
        if m1 < 0:
            children.append((v2, v0, m2))
        else:
            children.append((m2, v2, m1))
            children.append((v0, m2, m1))
        if m0 < 0:
            children.append((v1, v2, m2))
        else:
            children.append((m2, v1, m0))
            children.append((v2, m2, m0))

    out = Mesh(vertices, np.asarray(children, dtype=np.int64), ref_edge_policy="asis")
    out.new_vertex_parents = mesh.faces[face_ids].copy()
    out.n_parent_vertices = mesh.n_vertices
    return out


def uniform_refine(mesh, sweeps=1):
    """Bisect every element, `sweeps` times."""
    for _ in range(int(sweeps)):
        mesh = bisect(mesh, np.arange(mesh.n_elements))
    return mesh


# -- squeezed triangles -------------------------------------------------------


def squeeze_element(mesh, elem, face, theta):
    """Compress element `elem` toward its face `face` by factor theta in (0, 1].

    The face stays fixed pointwise and the opposite vertex moves to
    (1-theta)*v0 + theta*apex, where (v0, v1) are the face endpoints ordered so
    that (v0, v1, apex) is counter-clockwise (the orientation-preserving frame
    of the pair).  The squeezed area is theta times the element area.
    """
    theta = float(theta)
    if not 0.0 < theta <= 1.0:
        raise MeshError(f"theta must be in (0, 1], got {theta}")
    tri = mesh.elements[elem]
    local = np.nonzero(mesh.elem_faces[elem] == face)[0]
    if local.size != 1:
        raise MeshError(f"face {face} does not belong to element {elem}")
    i = int(local[0])  # apex local index; face endpoints follow cyclically
    j, k = (i + 1) % 3, (i + 2) % 3
    coords = mesh.vertices[tri]
    apex_prime = (1.0 - theta) * coords[j] + theta * coords[i]
    squeezed = np.array([coords[j], coords[k], apex_prime])
    parent_bary = np.zeros((3, 3))
    parent_bary[0, j] = 1.0
    parent_bary[1, k] = 1.0
    parent_bary[2, j] = 1.0 - theta
    parent_bary[2, i] = theta
    return SqueezedTriangle(elem, face, theta, squeezed, parent_bary)
