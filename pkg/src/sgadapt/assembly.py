"""P1 finite element assembly and the two-level (detail) couplings.

All smooth-field integrals use a fixed 7-point order-5 triangle rule;
integrals of constant vectors against P1 gradients over characteristic
regions are computed exactly from the elementwise-constant gradients.
Homogeneous Dirichlet conditions are imposed by restricting every matrix
and vector to interior vertices.
"""

import numpy as np
import scipy.sparse as sp

from .errors import NumericError
from .mesh import uniform_refine

# 7-point degree-5 rule on the reference triangle, barycentric coordinates.
_A1 = 0.059715871789769820
_B1 = 0.470142064105115090
_A2 = 0.797426985353087320
_B2 = 0.101286507323456340
_W1 = (155.0 + np.sqrt(15.0)) / 1200.0
_W2 = (155.0 - np.sqrt(15.0)) / 1200.0
QUAD_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
QUAD_W = np.array([9.0 / 40.0, _W1, _W1, _W1, _W2, _W2, _W2])


def _as_field(field):
    if callable(field):
        return field
    value = float(field)
    return lambda x: np.full(len(x), value)


def _quad_points(tri):
    """Physical quadrature points, shape (ne, 7, 2)."""
    corners = tri.vertices[tri.elements]  # (ne, 3, 2)
    return np.einsum("qk,nkd->nqd", QUAD_BARY, corners)


def element_gradients(tri):
    """Constant P1 basis gradients per element, shape (ne, 3, 2)."""
    V, T = tri.vertices, tri.elements
    p0, p1, p2 = (V[T[:, k]] for k in range(3))
    inv_2a = 1.0 / (2.0 * tri.areas)
    g = np.empty((tri.n_elements, 3, 2))
    g[:, 0] = np.column_stack([p1[:, 1] - p2[:, 1], p2[:, 0] - p1[:, 0]])
    g[:, 1] = np.column_stack([p2[:, 1] - p0[:, 1], p0[:, 0] - p2[:, 0]])
    g[:, 2] = np.column_stack([p0[:, 1] - p1[:, 1], p1[:, 0] - p0[:, 0]])
    return g * inv_2a[:, None, None]


def field_element_integrals(tri, field):
    """Integral of the field over every element (7-point rule)."""
    f = _as_field(field)
    pts = _quad_points(tri)
    vals = f(pts.reshape(-1, 2)).reshape(tri.n_elements, len(QUAD_W))
    if not np.all(np.isfinite(vals)):
        raise NumericError("field evaluated to a non-finite value")
    return tri.areas * (vals @ QUAD_W)


def stiffness(tri, field, full=False):
    """Sparse stiffness matrix of the field over interior vertices.

    Entries are the integrals of ``field * grad(phi_i) . grad(phi_j)``.
    With ``full=True`` the matrix is over all vertices instead.
    """
    grads = element_gradients(tri)
    w = field_element_integrals(tri, field)
    local = np.einsum("n,nid,njd->nij", w, grads, grads)
    T = tri.elements
    rows = np.repeat(T, 3, axis=1).ravel()
    cols = np.tile(T, (1, 3)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)),
                        shape=(tri.n_vertices, tri.n_vertices)).tocsr()
    if full:
        return mat
    keep = tri.interior_vertices
    return mat[keep][:, keep].tocsr()


class CharacteristicRegion:
    """Convex polygonal region required to be a union of mesh elements."""

    def __init__(self, corners):
        self.corners = np.asarray(corners, dtype=float)
        if len(self.corners) < 3:
            raise ValueError("region needs at least three corners")
        x, y = self.corners[:, 0], self.corners[:, 1]
        self.area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def contains(self, points, tol=1e-12):
        pts = np.atleast_2d(points)
        inside = np.ones(len(pts), dtype=bool)
        n = len(self.corners)
        for k in range(n):
            p, q = self.corners[k], self.corners[(k + 1) % n]
            d = q - p
            cross = d[0] * (pts[:, 1] - p[1]) - d[1] * (pts[:, 0] - p[0])
            inside &= cross >= -tol
        return inside

    def element_mask(self, tri):
        """Mask of elements inside the region; errors if not an exact union."""
        centroids = tri.vertices[tri.elements].mean(axis=1)
        mask = self.contains(centroids)
        covered = tri.areas[mask].sum()
        if abs(covered - self.area) > 1e-10 * max(self.area, 1.0):
            raise ValueError("region is not a union of mesh elements "
                             f"(covers {covered:.3e} of {self.area:.3e})")
        return mask


class FunctionalSpec:
    """Right-hand side / goal functional data.

    ``F(v) = integral(scalar * v) - integral(vector . grad v)`` where the
    vector part is a sum of constant vectors on characteristic regions.
    """

    def __init__(self, scalar=None, regions=()):
        self.scalar = scalar
        self.regions = [(region, np.asarray(vec, dtype=float))
                        for region, vec in regions]

    def scaled(self, s):
        scalar = self.scalar
        if scalar is not None:
            base = _as_field(scalar)
            scalar = lambda x, _b=base: s * _b(x)
        return FunctionalSpec(scalar, [(r, s * v) for r, v in self.regions])


def load(tri, spec, full=False):
    """Load vector of a functional over interior vertices."""
    vec = np.zeros(tri.n_vertices)
    T = tri.elements
    if spec.scalar is not None:
        f = _as_field(spec.scalar)
        pts = _quad_points(tri)
        vals = f(pts.reshape(-1, 2)).reshape(tri.n_elements, len(QUAD_W))
        if not np.all(np.isfinite(vals)):
            raise NumericError("scalar load evaluated to a non-finite value")
        # sum_q w_q f(x_q) lambda_k(x_q) per element and local vertex
        contrib = np.einsum("nq,q,qk->nk", vals, QUAD_W, QUAD_BARY) * tri.areas[:, None]
        np.add.at(vec, T.ravel(), contrib.ravel())
    if spec.regions:
        grads = element_gradients(tri)
        for region, const_vec in spec.regions:
            mask = region.element_mask(tri)
            gdotc = grads[mask] @ const_vec  # (nsel, 3)
            contrib = -tri.areas[mask, None] * gdotc
            np.add.at(vec, T[mask].ravel(), contrib.ravel())
    if full:
        return vec
    return vec[tri.interior_vertices]


class TwoLevelSystem:
    """Single-quadrature assembly of one mesh and its uniform refinement.

    Coarse matrices are the restriction ``P^T A_hat P`` of the fine-mesh
    assembly, where P is the P1 prolongation; detail couplings are rows of
    ``A_hat P`` at the interior-edge midpoints.  Sharing one quadrature
    across levels keeps the two-level residual identities exact.
    """

    def __init__(self, tri, expansion):
        self.tri = tri
        self.expansion = expansion
        self.fine, self.detail = uniform_refine(tri)

        fine_dof = self.fine.vertex_dof
        self.ix = fine_dof[tri.interior_vertices]          # coarse vertices
        self.iy = fine_dof[self.detail.midpoints]          # edge midpoints
        if (self.ix < 0).any() or (self.iy < 0).any():
            raise NumericError("two-level dof mapping is inconsistent")

        n_fine = self.fine.n_dofs
        n = tri.n_dofs
        rows = [self.ix]
        cols = [np.arange(n)]
        vals = [np.ones(n)]
        for end in (0, 1):
            vids = tri.edges[self.detail.interior_edges, end]
            dofs = tri.vertex_dof[vids]
            keep = dofs >= 0
            rows.append(self.iy[keep])
            cols.append(dofs[keep])
            vals.append(np.full(keep.sum(), 0.5))
        self.prolong = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_fine, n)).tocsr()

        self._fine_mats = {}
        self._coarse = {}
        self._detail = {}
        self.detail_diag = None

    def fine_matrix(self, m):
        """Stiffness of expansion coefficient m on the uniform refinement."""
        if m not in self._fine_mats:
            field = self.expansion.coefficient(m)
            self._fine_mats[m] = stiffness(self.fine, field)
        return self._fine_mats[m]

    def coarse_matrix(self, m):
        if m not in self._coarse:
            A = self.fine_matrix(m)
            self._coarse[m] = (self.prolong.T @ (A @ self.prolong)).tocsr()
        return self._coarse[m]

    def detail_coupling(self, m):
        """Rows of the fine stiffness at edge midpoints against coarse hats.

        Returns the (n_interior_edges, n_dofs) coupling matrix; for m = 0
        also fills ``detail_diag`` with the detail-hat stiffness diagonal.
        """
        if m not in self._detail:
            A = self.fine_matrix(m)
            self._detail[m] = (A @ self.prolong)[self.iy, :].tocsr()
            if m == 0:
                diag = np.asarray(A[self.iy, self.iy]).ravel()
                if np.any(diag <= 0):
                    raise NumericError("non-positive detail-hat diagonal")
                self.detail_diag = diag
        return self._detail[m]

    def fine_load(self, spec):
        return load(self.fine, spec)

    def coarse_load(self, spec):
        return self.prolong.T @ self.fine_load(spec)

    def detail_load(self, spec):
        return self.fine_load(spec)[self.iy]


class CoefficientExpansion:
    """Affine coefficient a0(x) + sum_m y_m a_m(x) with its bounds.

    ``fields[m]`` evaluates the m-th spatial coefficient (index 0 is the
    mean field); ``sup_norms[m]`` are the exact or sampled sup-norms of the
    fluctuation coefficients used for the uniform-ellipticity constants.
    """

    def __init__(self, fields, a0_min, a0_max, sup_norms, tau=None):
        self.fields = list(fields)
        self.n_terms = len(self.fields) - 1
        self.a0_min = float(a0_min)
        self.a0_max = float(a0_max)
        self.sup_norms = np.asarray(sup_norms, dtype=float)
        if self.a0_min <= 0 or self.a0_max < self.a0_min:
            raise ValueError("mean field bounds must satisfy 0 < min <= max")
        self.tau = float(tau) if tau is not None else \
            float(self.sup_norms.sum() / self.a0_min)
        if not self.tau < 1.0:
            raise ValueError(f"expansion ratio tau={self.tau} must be below 1")
        self.lam = self.a0_min / (self.a0_max * (1.0 + self.tau))
        self.Lam = self.a0_max / (self.a0_min * (1.0 - self.tau))

    def coefficient(self, m):
        if not 0 <= m <= self.n_terms:
            raise ValueError(f"coefficient index {m} beyond truncation "
                             f"{self.n_terms}")
        return self.fields[m]

    def __call__(self, x, y):
        """Evaluate a(x, y) for a finite parameter vector y."""
        x = np.atleast_2d(x)
        out = _as_field(self.fields[0])(x).astype(float)
        for m, ym in enumerate(y, start=1):
            if ym and m <= self.n_terms:
                out += ym * _as_field(self.fields[m])(x)
        return out
