"""Two-level a posteriori energy-error estimation.

The estimate combines, per solution (primal or dual):

* spatial indicators, one per interior edge: residuals of the Galerkin
  solution tested against the edge-midpoint hat functions of the uniform
  refinement, normalized by the detail-hat stiffness diagonal;
* parametric indicators, one per detail index: the mean-field energy norm
  of the decoupled residual solve for that index.

No linear system is solved for the spatial part.  The enriched-space
solves used by the accompanying test oracles are built here as well, on
top of the same single-quadrature assembly.
"""

import numpy as np

from .chaos import ZERO_INDEX, sort_indices, trim
from .errors import NumericError
from .solver import BlockOperator, BlockVector, GalerkinSolution, coupling_pairs


class IndicatorBundle:
    """Spatial and parametric error indicators with their global estimate."""

    def __init__(self, edge_ids, spatial, detail_indices, parametric):
        self.edge_ids = np.asarray(edge_ids)
        self.spatial = np.asarray(spatial, dtype=float)
        self.detail_indices = list(detail_indices)
        self.parametric = np.asarray(parametric, dtype=float)
        if np.any(self.spatial < 0) or np.any(self.parametric < 0):
            raise NumericError("negative indicator")
        if not (np.all(np.isfinite(self.spatial))
                and np.all(np.isfinite(self.parametric))):
            raise NumericError("non-finite indicator")
        self.spatial_total = float(np.sqrt((self.spatial ** 2).sum()))
        self.parametric_total = float(np.sqrt((self.parametric ** 2).sum()))
        self.total = float(np.sqrt((self.spatial ** 2).sum()
                                   + (self.parametric ** 2).sum()))

    def spatial_by_edge(self):
        return dict(zip(self.edge_ids.tolist(), self.spatial.tolist()))

    def parametric_by_index(self):
        return dict(zip(self.detail_indices, self.parametric.tolist()))

    def dump_csv(self, tri, spatial_path, parametric_path):
        with open(spatial_path, "w") as fh:
            fh.write("edge_v0,edge_v1,indicator\n")
            for eid, val in zip(self.edge_ids, self.spatial):
                v0, v1 = tri.edges[eid]
                fh.write(f"{v0},{v1},{val:.9e}\n")
        with open(parametric_path, "w") as fh:
            fh.write("index,indicator\n")
            for nu, val in zip(self.detail_indices, self.parametric):
                from .chaos import format_index
                fh.write(f"{format_index(nu)},{val:.9e}\n")


def residual_numerators(system, table, solution, detail_rhs):
    """Residual of the solution at every detail hat, per solution index.

    Returns an array of shape (#indices, #interior edges) whose (nu, E)
    entry is the load term (zero except for the zero index) minus the
    bilinear-form action of the solution against the midpoint hat of E.
    """
    indices = solution.indices
    num = np.empty((len(indices), len(system.iy)))
    C0 = system.detail_coupling(0)
    for i, b in enumerate(solution.blocks):
        num[i] = -(C0 @ b)
    num[indices.index(ZERO_INDEX)] += detail_rhs
    for i, j, m, c in coupling_pairs(indices, table):
        num[i] -= c * (system.detail_coupling(m) @ solution.blocks[j])
    return num


def spatial_indicators(system, table, solution, detail_rhs):
    """Per-edge two-level indicators of one Galerkin solution."""
    num = residual_numerators(system, table, solution, detail_rhs)
    system.detail_coupling(0)  # ensures the diagonal is available
    sq = (num ** 2).sum(axis=0) / system.detail_diag
    return np.sqrt(sq)


def cross_pairs(rows, cols, table):
    """Coupled pairs (i_row, j_col, m, coeff) between two index lists."""
    pos = {nu: j for j, nu in enumerate(cols)}
    span = max([len(nu) for nu in list(rows) + list(cols)], default=0) + 1
    pairs = []
    for i, nu in enumerate(rows):
        for m in range(1, span + 1):
            deg = nu[m - 1] if m - 1 < len(nu) else 0
            for step in (+1, -1):
                if deg + step < 0:
                    continue
                dense = list(nu) + [0] * max(0, m - len(nu))
                dense[m - 1] += step
                mu = trim(dense)
                j = pos.get(mu)
                if j is not None:
                    pairs.append((i, j, m, table.coupling(deg, deg + step)))
    return pairs


def parametric_residuals(system, table, solution, detail_indices):
    """Right-hand sides of the decoupled detail-index error problems."""
    res = np.zeros((len(detail_indices), system.tri.n_dofs))
    for i, j, m, c in cross_pairs(detail_indices, solution.indices, table):
        res[i] -= c * (system.coarse_matrix(m) @ solution.blocks[j])
    return res


def parametric_indicators(system, table, solution, detail_indices, lu0):
    """Mean-field energy norms of the decoupled detail-index solves."""
    detail_indices = list(detail_indices)
    if set(detail_indices) & set(solution.indices):
        raise ValueError("detail indices overlap the solution index set")
    res = parametric_residuals(system, table, solution, detail_indices)
    vals = np.empty(len(detail_indices))
    for i, r in enumerate(res):
        e = lu0.solve(r)
        vals[i] = np.sqrt(max(float(e @ r), 0.0))
        if not np.isfinite(vals[i]):
            raise NumericError(f"parametric solve failed for index "
                               f"{detail_indices[i]}")
    return vals


def two_level_estimate(system, table, solution, detail_rhs, detail_indices, lu0):
    """Full indicator bundle for one solution and one load."""
    spatial = spatial_indicators(system, table, solution, detail_rhs)
    parametric = parametric_indicators(system, table, solution,
                                       detail_indices, lu0)
    return IndicatorBundle(system.detail.interior_edges, spatial,
                           detail_indices, parametric)


# ---------------------------------------------------------------------------
# enriched-space operators (oracle and reference machinery)

class EnrichedOperator(BlockOperator):
    """Operator on the two-level enriched space.

    Blocks for the solution indices live on the uniform refinement; blocks
    for the detail indices stay on the coarse space.  Cross terms are the
    fine matrices composed with the P1 prolongation.
    """

    def __init__(self, system, table, base_indices, detail_indices=()):
        self.system = system
        base = sort_indices(base_indices)
        detail = sort_indices(detail_indices)
        if set(base) & set(detail):
            raise ValueError("enrichment indices overlap the base set")
        indices = base + detail
        base_set = set(base)
        fine = [nu in base_set for nu in indices]

        def term_matrix(m, fi, fj):
            A = system.fine_matrix(m)
            if fi and fj:
                return A
            if fi and not fj:
                return (A @ system.prolong).tocsr()
            if not fi and fj:
                return (system.prolong.T @ A).tocsr()
            return system.coarse_matrix(m)

        diag = [system.fine_matrix(0) if f else system.coarse_matrix(0)
                for f in fine]
        terms = [(i, j, term_matrix(m, fine[i], fine[j]), c)
                 for i, j, m, c in coupling_pairs(indices, table)]
        super().__init__(indices, diag, terms)
        self.base_indices = base
        self.detail_indices = detail
        self.fine_mask = fine

    def embed(self, solution):
        """Lift a coarse-space block vector into the enriched layout."""
        blocks = []
        for pos, (nu, f) in enumerate(zip(self.indices, self.fine_mask)):
            if nu in solution.indices:
                b = solution.blocks[solution.indices.index(nu)]
                blocks.append(self.system.prolong @ b if f else b.copy())
            else:
                blocks.append(np.zeros(self.block_sizes[pos]))
        return BlockVector(self.indices, blocks)

    def rhs_from_loads(self, fine_load, coarse_load):
        blocks = []
        for nu, f, size in zip(self.indices, self.fine_mask, self.block_sizes):
            if nu == ZERO_INDEX:
                blocks.append(fine_load.copy() if f else coarse_load.copy())
            else:
                blocks.append(np.zeros(size))
        return BlockVector(self.indices, blocks)

    def error_between(self, enriched_solution, coarse_solution):
        """Energy norm of the difference (enriched minus embedded coarse)."""
        diff = enriched_solution.copy()
        diff.axpy(-1.0, self.embed(coarse_solution))
        return self.energy_norm(diff)


def solve_dense(operator, rhs):
    """Direct dense solve, for oracle-scale systems."""
    A = operator.as_dense()
    x = np.linalg.solve(A, rhs.ravel())
    out = operator.unravel(x)
    return GalerkinSolution(out.indices, out.blocks)


def efficiency_bound(expansion, overlap):
    """Computable constant lambda / K of the two-level lower bound."""
    return expansion.lam / overlap
