"""Conforming 2D triangulations with longest-edge bisection refinement.

A :class:`Triangulation` is an immutable value: refinement returns a new
object and vertex ids are stable across refinements, so edges can be
identified by their (sorted) vertex pair at any level of the hierarchy.
"""

import itertools

import numpy as np

from .errors import NumericError


def _cross2(a, b):
    """z-component of the cross product of stacked 2D vectors."""
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]

_mesh_counter = itertools.count()

# Relative tolerance used to detect ties between edge lengths.  Ties are
# resolved by the smallest (v0, v1) vertex pair so that refinement is
# deterministic under vertex renumbering of symmetric meshes.
_TIE_RTOL = 1e-12


class Triangulation:
    """Conforming triangulation of a polygonal domain.

    Parameters
    ----------
    vertices : (nv, 2) float array
        Vertex coordinates.
    elements : (ne, 3) int array
        Vertex triples; reoriented counterclockwise on construction.

    Attributes
    ----------
    edges : (nE, 2) int array
        Unique edges as sorted vertex pairs, lexicographically ordered.
    elem_edges : (ne, 3) int array
        Edge id of the local edge opposite each local vertex.
    edge_elems : (nE, 2) int array
        Incident element ids per edge (-1 when only one).
    interior_edges : int array
        Ids of edges shared by exactly two elements.
    """

    def __init__(self, vertices, elements):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        elements = np.ascontiguousarray(elements, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise ValueError("vertices must be an (nv, 2) array")
        if elements.ndim != 2 or elements.shape[1] != 3:
            raise ValueError("elements must be an (ne, 3) array")
        nv = len(vertices)
        if elements.size and (elements.min() < 0 or elements.max() >= nv):
            raise ValueError("element vertex id out of range")

        # Orient counterclockwise; reject degenerate elements.
        p0, p1, p2 = (vertices[elements[:, k]] for k in range(3))
        cross = _cross2(p1 - p0, p2 - p0)
        if np.any(cross == 0.0):
            raise ValueError("collinear element vertices")
        flip = cross < 0.0
        if flip.any():
            elements = elements.copy()
            elements[flip] = elements[flip][:, [0, 2, 1]]

        self.vertices = vertices
        self.elements = elements
        self.n_vertices = nv
        self.n_elements = len(elements)
        self.mesh_id = next(_mesh_counter)

        self._build_edges()
        self._build_geometry()
        for arr in (self.vertices, self.elements, self.edges,
                    self.elem_edges, self.edge_elems):
            arr.flags.writeable = False

    def _build_edges(self):
        tri = self.elements
        ne = self.n_elements
        # Local edge k is opposite local vertex k.
        raw = np.vstack([tri[:, [1, 2]], tri[:, [2, 0]], tri[:, [0, 1]]])
        raw.sort(axis=1)
        edges, inverse = np.unique(raw, axis=0, return_inverse=True)
        inverse = inverse.reshape(3, ne).T
        counts = np.bincount(inverse.ravel(), minlength=len(edges))
        if counts.max(initial=0) > 2:
            raise ValueError("non-manifold edge (more than two incident elements)")

        edge_elems = np.full((len(edges), 2), -1, dtype=np.int64)
        slot = np.zeros(len(edges), dtype=np.int64)
        flat = inverse.T.ravel()  # entries grouped by local edge, element-major
        elem_of = np.tile(np.arange(ne), 3)
        order = np.argsort(flat, kind="stable")
        for eid, el in zip(flat[order], elem_of[order]):
            edge_elems[eid, slot[eid]] = el
            slot[eid] += 1

        self.edges = edges
        self.elem_edges = inverse
        self.edge_elems = edge_elems
        self.n_edges = len(edges)
        self.boundary_edge_mask = counts == 1
        self.interior_edge_mask = counts == 2
        self.interior_edges = np.nonzero(self.interior_edge_mask)[0]

        boundary_vertex = np.zeros(self.n_vertices, dtype=bool)
        boundary_vertex[edges[self.boundary_edge_mask].ravel()] = True
        self.boundary_vertex_mask = boundary_vertex
        self.interior_vertices = np.nonzero(~boundary_vertex)[0]
        dof = np.full(self.n_vertices, -1, dtype=np.int64)
        dof[self.interior_vertices] = np.arange(len(self.interior_vertices))
        self.vertex_dof = dof
        self.n_dofs = len(self.interior_vertices)

    def _build_geometry(self):
        V, tri = self.vertices, self.elements
        d = V[self.edges[:, 1]] - V[self.edges[:, 0]]
        self.edge_lengths = np.hypot(d[:, 0], d[:, 1])
        p0, p1, p2 = (V[tri[:, k]] for k in range(3))
        self.areas = 0.5 * _cross2(p1 - p0, p2 - p0)

        # Longest local edge per element; ties go to the smallest vertex pair.
        L2 = (self.edge_lengths ** 2)[self.elem_edges]
        lmax = L2.max(axis=1, keepdims=True)
        candidate = L2 >= lmax * (1.0 - _TIE_RTOL)
        pair_key = (self.edges[self.elem_edges, 0].astype(np.int64) * self.n_vertices
                    + self.edges[self.elem_edges, 1])
        pair_key = np.where(candidate, pair_key, np.iinfo(np.int64).max)
        self.longest_local = np.argmin(pair_key, axis=1)
        self.longest_edge = self.elem_edges[np.arange(self.n_elements),
                                            self.longest_local]

    def edge_pairs(self, edge_ids=None):
        """Edges as (v0, v1) tuples, the refinement-stable identity."""
        ids = np.arange(self.n_edges) if edge_ids is None else np.asarray(edge_ids)
        return [tuple(p) for p in self.edges[ids]]

    def min_angle(self):
        """Smallest interior angle over all elements, in radians."""
        V, tri = self.vertices, self.elements
        angles = []
        for k in range(3):
            a = V[tri[:, (k + 1) % 3]] - V[tri[:, k]]
            b = V[tri[:, (k + 2) % 3]] - V[tri[:, k]]
            na = np.linalg.norm(a, axis=1)
            nb = np.linalg.norm(b, axis=1)
            cosang = np.clip((a * b).sum(axis=1) / (na * nb), -1.0, 1.0)
            angles.append(np.arccos(cosang))
        return float(np.min(angles))

    def __repr__(self):
        return (f"Triangulation({self.n_vertices} vertices, "
                f"{self.n_elements} elements, {self.n_dofs} interior)")


class DetailStructure:
    """Edge-midpoint structure of the uniform refinement of a mesh.

    Records the bijection between interior edges of the coarse mesh and the
    new interior vertices of the uniform refinement, plus the overlap
    constant: the largest number of midpoint hat functions whose support
    meets a single coarse element.
    """

    def __init__(self, coarse, fine, edge_midpoint):
        self.coarse = coarse
        self.fine = fine
        self.edge_midpoint = edge_midpoint  # per coarse edge id, fine vertex id
        self.interior_edges = coarse.interior_edges
        self.midpoints = edge_midpoint[coarse.interior_edges]

        interior_fine = ~fine.boundary_vertex_mask
        if not interior_fine[self.midpoints].all():
            raise NumericError("midpoint of an interior edge fell on the boundary")
        # New interior fine vertices must be exactly the interior-edge midpoints.
        new_interior = np.setdiff1d(fine.interior_vertices, coarse.interior_vertices)
        if not np.array_equal(np.sort(self.midpoints), new_interior):
            raise NumericError("detail structure is not a bijection")

        per_elem = coarse.interior_edge_mask[coarse.elem_edges].sum(axis=1)
        self.overlap = int(per_elem.max(initial=0))
        if not 1 <= self.overlap <= 3:
            raise NumericError(f"detail overlap constant {self.overlap} out of range")


def _closure(tri, marked_edges):
    """Mark the longest edge of every element touching a marked edge, to a fixpoint."""
    to_bisect = np.zeros(tri.n_edges, dtype=bool)
    marked = np.asarray(marked_edges, dtype=np.int64).ravel()
    if marked.size and (marked.min() < 0 or marked.max() >= tri.n_edges):
        raise ValueError("edge id out of range")
    to_bisect[marked] = True
    while True:
        hit = to_bisect[tri.elem_edges].any(axis=1)
        need = hit & ~to_bisect[tri.longest_edge]
        if not need.any():
            return to_bisect
        to_bisect[tri.longest_edge[need]] = True


def refine(tri, marked_edges):
    """Coarsest conforming refinement of ``tri`` bisecting all marked edges.

    Returns ``(fine, refined)`` where ``refined`` holds the ids (in ``tri``)
    of all interior edges that were bisected, a superset of the marked ones.
    """
    to_bisect = _closure(tri, marked_edges)
    bis = np.nonzero(to_bisect)[0]
    refined = bis[tri.interior_edge_mask[bis]]
    if not bis.size:
        return tri, refined

    midpoint = np.full(tri.n_edges, -1, dtype=np.int64)
    midpoint[bis] = tri.n_vertices + np.arange(len(bis))
    mid_coords = 0.5 * (tri.vertices[tri.edges[bis, 0]]
                        + tri.vertices[tri.edges[bis, 1]])
    new_vertices = np.vstack([tri.vertices, mid_coords])

    # Rotate each element so its longest edge is the local-2 edge (v0, v1).
    l = tri.longest_local
    idx = np.arange(tri.n_elements)
    a = tri.elements[idx, (l + 1) % 3]
    b = tri.elements[idx, (l + 2) % 3]
    c = tri.elements[idx, l]
    e_ab = tri.elem_edges[idx, l]
    e_bc = tri.elem_edges[idx, (l + 1) % 3]
    e_ca = tri.elem_edges[idx, (l + 2) % 3]
    m = midpoint[e_ab]
    m_bc = midpoint[e_bc]
    m_ca = midpoint[e_ca]

    split_ab = to_bisect[e_ab]
    code = np.where(split_ab,
                    1 + to_bisect[e_bc] + 2 * to_bisect[e_ca], 0)

    chunks = []
    keep = code == 0
    if keep.any():
        chunks.append(tri.elements[keep])
    sel = code == 1  # longest only
    if sel.any():
        chunks.append(np.column_stack([a[sel], m[sel], c[sel]]))
        chunks.append(np.column_stack([m[sel], b[sel], c[sel]]))
    sel = code == 2  # longest + bc
    if sel.any():
        chunks.append(np.column_stack([a[sel], m[sel], c[sel]]))
        chunks.append(np.column_stack([m[sel], b[sel], m_bc[sel]]))
        chunks.append(np.column_stack([m[sel], m_bc[sel], c[sel]]))
    sel = code == 3  # longest + ca
    if sel.any():
        chunks.append(np.column_stack([a[sel], m[sel], m_ca[sel]]))
        chunks.append(np.column_stack([m[sel], c[sel], m_ca[sel]]))
        chunks.append(np.column_stack([m[sel], b[sel], c[sel]]))
    sel = code == 4  # all three
    if sel.any():
        chunks.append(np.column_stack([a[sel], m[sel], m_ca[sel]]))
        chunks.append(np.column_stack([m[sel], c[sel], m_ca[sel]]))
        chunks.append(np.column_stack([m[sel], b[sel], m_bc[sel]]))
        chunks.append(np.column_stack([m[sel], m_bc[sel], c[sel]]))

    fine = Triangulation(new_vertices, np.vstack(chunks))
    return fine, refined


def virtual_refined_set(tri, marked_edges):
    """Interior edges that refine(tri, marked) would bisect, without refining."""
    to_bisect = _closure(tri, marked_edges)
    bis = np.nonzero(to_bisect)[0]
    return bis[tri.interior_edge_mask[bis]]


def uniform_refine(tri):
    """Split every element into four children; return the detail structure."""
    to_bisect = np.ones(tri.n_edges, dtype=bool)
    fine, _ = refine(tri, np.arange(tri.n_edges))
    midpoint = tri.n_vertices + np.arange(tri.n_edges)
    del to_bisect
    if fine.n_elements != 4 * tri.n_elements:
        raise NumericError("uniform refinement did not produce 4 children")
    return fine, DetailStructure(tri, fine, midpoint)


def locate(tri, points, tol=1e-12):
    """Element id containing each point (barycentric test, brute force)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    V, T = tri.vertices, tri.elements
    out = np.full(len(pts), -1, dtype=np.int64)
    for i, p in enumerate(pts):
        d0 = p - V[T[:, 0]]
        e1 = V[T[:, 1]] - V[T[:, 0]]
        e2 = V[T[:, 2]] - V[T[:, 0]]
        det = _cross2(e1, e2)
        l1 = _cross2(d0, e2) / det
        l2 = _cross2(e1, d0) / det
        inside = (l1 >= -tol) & (l2 >= -tol) & (l1 + l2 <= 1 + tol)
        hits = np.nonzero(inside)[0]
        if hits.size:
            out[i] = hits[0]
    return out


def eval_p1(tri, nodal_values, points):
    """Evaluate a piecewise-linear function given by vertex values."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    elems = locate(tri, pts)
    if (elems < 0).any():
        raise ValueError("point outside the triangulation")
    V, T = tri.vertices, tri.elements
    vals = np.empty(len(pts))
    for i, (p, el) in enumerate(zip(pts, elems)):
        v = T[el]
        e1 = V[v[1]] - V[v[0]]
        e2 = V[v[2]] - V[v[0]]
        det = _cross2(e1, e2)
        d0 = p - V[v[0]]
        l1 = _cross2(d0, e2) / det
        l2 = _cross2(e1, d0) / det
        lam = np.array([1.0 - l1 - l2, l1, l2])
        vals[i] = lam @ nodal_values[v]
    return vals if vals.size > 1 else float(vals[0])


def is_conforming(tri, tol=1e-12):
    """Geometric conformity check: no vertex lies strictly inside an edge."""
    V = tri.vertices
    for eid, (v0, v1) in enumerate(tri.edges):
        p0, p1 = V[v0], V[v1]
        d = p1 - p0
        L2 = d @ d
        rel = V - p0
        t = (rel @ d) / L2
        off = np.abs(_cross2(rel, d)) / np.sqrt(L2)
        on_open_segment = (off < tol) & (t > tol) & (t < 1 - tol)
        on_open_segment[[v0, v1]] = False
        if on_open_segment.any():
            return False
    return True


def load_mesh_text(text):
    """Parse the plain-text mesh format.

    First non-comment line: ``nv ne``; then nv lines ``x y boundary_flag``
    and ne lines ``v0 v1 v2``.  The boundary flags are validated against the
    edge-derived boundary.
    """
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    nv, ne = (int(tok) for tok in lines[0].split())
    if len(lines) != 1 + nv + ne:
        raise ValueError("mesh text has wrong number of lines")
    verts = np.array([[float(t) for t in ln.split()] for ln in lines[1:1 + nv]])
    if verts.shape[1] != 3:
        raise ValueError("vertex lines must read 'x y boundary_flag'")
    elems = np.array([[int(t) for t in ln.split()]
                      for ln in lines[1 + nv:1 + nv + ne]])
    tri = Triangulation(verts[:, :2], elems)
    flags = verts[:, 2].astype(bool)
    if not np.array_equal(flags, tri.boundary_vertex_mask):
        raise ValueError("boundary flags disagree with edge-derived boundary")
    return tri


def dump_mesh_text(tri):
    """Serialize a triangulation to the plain-text mesh format."""
    out = [f"{tri.n_vertices} {tri.n_elements}"]
    for (x, y), b in zip(tri.vertices, tri.boundary_vertex_mask):
        out.append(f"{float(x)!r} {float(y)!r} {int(b)}")
    for v0, v1, v2 in tri.elements:
        out.append(f"{v0} {v1} {v2}")
    return "\n".join(out) + "\n"


def load_asset(name):
    """Load one of the embedded initial meshes by name."""
    from importlib import resources

    ref = resources.files("sgadapt") / "assets" / f"{name}.txt"
    return load_mesh_text(ref.read_text())
