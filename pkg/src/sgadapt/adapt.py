"""Marking, error-reduction estimates and the goal-oriented adaptive loop.

Each iteration solves primal and dual problems on the current tensor-product
space, computes two-level indicator bundles for both, marks edges and detail
indices independently (Doerfler) for both solutions, combines the marks, and
then either refines the mesh or enlarges the index set depending on which
enrichment promises the larger reduction of the estimate product.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import TwoLevelSystem
from .chaos import (ZERO_INDEX, active_count, detail_index_set, format_index,
                    recurrence, sort_indices)
from .errors import NumericError
from .estimator import two_level_estimate
from .mesh import refine, virtual_refined_set
from .solver import BlockVector, MeanPreconditioner, build_operator, solve

CSV_HEADER = ("iter,dofs,mu,zeta,product,n_elements,card_P,active_M,"
              "decision,goal_value,seconds")


@dataclass
class MarkingParams:
    theta_x: float = 0.5
    theta_p: float = 0.9
    m_bar: int = 1
    tol: float = 1e-3
    max_iterations: int = 100
    solver_tol: float = 1e-10

    def __post_init__(self):
        if not 0.0 < self.theta_x <= 1.0:
            raise ValueError("theta_x must lie in (0, 1]")
        if not 0.0 < self.theta_p <= 1.0:
            raise ValueError("theta_p must lie in (0, 1]")
        if self.m_bar < 1:
            raise ValueError("m_bar must be at least 1")
        if not self.tol > 0.0:
            raise ValueError("tol must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class IterationRecord:
    iteration: int
    dofs: int
    mu: float
    zeta: float
    n_elements: int
    card_p: int
    active_m: int
    decision: str
    goal_value: float
    seconds: float
    rho_x: float = np.nan
    rho_p: float = np.nan
    added_indices: tuple = ()

    @property
    def product(self):
        return self.mu * self.zeta

    def csv_row(self):
        # floats carry 9 significant digits
        return (f"{self.iteration},{self.dofs},{self.mu:.9g},{self.zeta:.9g},"
                f"{self.product:.9g},{self.n_elements},{self.card_p},"
                f"{self.active_m},{self.decision},{self.goal_value:.9g},"
                f"{self.seconds:.3f}")


@dataclass
class RunResult:
    records: list
    mesh: object
    indices: list
    primal: object
    dual: object
    status: str
    index_log: list = field(default_factory=list)

    @property
    def final(self):
        return self.records[-1]

    def csv_text(self):
        return "\n".join([CSV_HEADER] + [r.csv_row() for r in self.records]) + "\n"

    def index_log_text(self):
        lines = []
        for iteration, added, width in self.index_log:
            lines.append(f"iteration {iteration}")
            for nu in added:
                lines.append("  " + format_index(nu, width))
        return "\n".join(lines) + ("\n" if lines else "")

    def enrichment_events(self):
        """Added index sets, in event order."""
        return [tuple(added) for _, added, _ in self.index_log]


def doerfler(values, keys, theta):
    """Minimal-cardinality marked set satisfying the bulk criterion.

    Sorts descending by value (ties by ascending key) and returns the
    shortest prefix whose squared sum reaches theta times the squared total.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return []
    order = sorted(range(len(values)), key=lambda k: (-values[k], keys[k]))
    csum = np.cumsum(values[order] ** 2)
    total = float(csum[-1])
    if total == 0.0:
        return []
    target = theta * total
    cut = int(np.searchsorted(csum, target, side="left"))
    marked = [keys[k] for k in order[:cut + 1]]
    assert csum[cut] >= target, "Doerfler inequality violated"
    return marked


def combine(marked_u, marked_z, values_u, values_z):
    """Union of the smaller set with equally many top entries of the other.

    ``values_u``/``values_z`` map keys to indicator values; ties between the
    two cardinalities keep the primal set as the anchor.
    """
    mu_set, mz_set = list(marked_u), list(marked_z)
    if len(mu_set) <= len(mz_set):
        anchor, other, other_vals = mu_set, mz_set, values_z
    else:
        anchor, other, other_vals = mz_set, mu_set, values_u
    k = len(anchor)
    top = sorted(other, key=lambda key: (-other_vals[key], key))[:k]
    out = sorted(set(anchor) | set(top))
    assert len(out) <= 2 * k
    return out


def reduction_estimates(mu_bundle, zeta_bundle, refined_edges, marked_indices):
    """Estimated error-product reductions of the two enrichment options."""
    mu2, zeta2 = mu_bundle.total ** 2, zeta_bundle.total ** 2
    eid_pos = {e: i for i, e in enumerate(mu_bundle.edge_ids.tolist())}
    sel = [eid_pos[e] for e in refined_edges]
    mu_edge2 = float((mu_bundle.spatial[sel] ** 2).sum())
    zeta_edge2 = float((zeta_bundle.spatial[sel] ** 2).sum())
    rho_x = np.sqrt(mu2 * zeta_edge2 + zeta2 * mu_edge2)

    pos = {nu: i for i, nu in enumerate(mu_bundle.detail_indices)}
    sel = [pos[nu] for nu in marked_indices]
    mu_idx2 = float((mu_bundle.parametric[sel] ** 2).sum())
    zeta_idx2 = float((zeta_bundle.parametric[sel] ** 2).sum())
    rho_p = np.sqrt(mu2 * zeta_idx2 + zeta2 * mu_idx2)
    return float(rho_x), float(rho_p)


class AdaptiveProblem:
    """Everything the loop needs: mesh, expansion, measure, loads, goal."""

    def __init__(self, name, mesh, expansion, measure, primal_spec, goal_spec,
                 initial_indices=((), (1,)), defaults=None):
        self.name = name
        self.mesh = mesh
        self.expansion = expansion
        self.measure = measure
        self.primal_spec = primal_spec
        self.goal_spec = goal_spec
        self.initial_indices = sort_indices(initial_indices)
        if ZERO_INDEX not in self.initial_indices:
            raise ValueError("initial index set must contain the zero index")
        self.defaults = defaults or MarkingParams()


class _MeshState:
    """Per-mesh assembly cache shared across parametric-only iterations."""

    def __init__(self, tri, problem):
        self.tri = tri
        self.system = TwoLevelSystem(tri, problem.expansion)
        self.lu0 = spla.splu(self.system.coarse_matrix(0).tocsc())
        self.f_coarse = self.system.coarse_load(problem.primal_spec)
        self.g_coarse = self.system.coarse_load(problem.goal_spec)
        self.f_detail = self.system.detail_load(problem.primal_spec)
        self.g_detail = self.system.detail_load(problem.goal_spec)


def max_degree(indices):
    return max((max(nu) for nu in indices if nu), default=0)


def run(problem, params=None, observer=None, inspector=None):
    """Goal-oriented adaptive loop; returns the full convergence record.

    ``observer(record)`` is called after every iteration; ``inspector``
    additionally receives the iteration internals (mesh state, recurrence
    table, index set, solutions, indicator bundles) for diagnostics.
    """
    params = params or problem.defaults
    indices = list(problem.initial_indices)
    state = _MeshState(problem.mesh, problem)
    table = recurrence(problem.measure, max_degree(indices) + 2)
    records = []
    index_log = []
    try:
        return _run_loop(problem, params, observer, inspector, indices,
                         state, table, records, index_log)
    except NumericError as err:
        # let the caller persist whatever progress was made
        err.records = records
        err.index_log = index_log
        raise


def _run_loop(problem, params, observer, inspector, indices, state, table,
              records, index_log):
    status = "max_iterations"
    primal = dual = None

    for iteration in range(params.max_iterations):
        t_iter = time.perf_counter()
        detail_indices = detail_index_set(indices, params.m_bar)
        need = max(max_degree(indices), max_degree(detail_indices)) + 2
        if need > table.n_max:
            table = recurrence(problem.measure, need)
        reach = active_count(indices) + params.m_bar
        if reach > problem.expansion.n_terms:
            raise NumericError(
                f"expansion truncation {problem.expansion.n_terms} is too "
                f"short for parameter reach {reach}")

        op = build_operator(indices, state.system.coarse_matrix, table)
        pre = MeanPreconditioner([state.lu0] * len(indices))
        zero_pos = indices.index(ZERO_INDEX)

        rhs_u = BlockVector.zeros(indices, op.block_sizes)
        rhs_u.blocks[zero_pos][:] = state.f_coarse
        primal = solve(op, rhs_u, precond=pre, tol_rel=params.solver_tol,
                       mesh_id=state.tri.mesh_id)
        rhs_z = BlockVector.zeros(indices, op.block_sizes)
        rhs_z.blocks[zero_pos][:] = state.g_coarse
        dual = solve(op, rhs_z, precond=pre, tol_rel=params.solver_tol,
                     mesh_id=state.tri.mesh_id)

        mu_bundle = two_level_estimate(state.system, table, primal,
                                       state.f_detail, detail_indices,
                                       state.lu0)
        zeta_bundle = two_level_estimate(state.system, table, dual,
                                         state.g_detail, detail_indices,
                                         state.lu0)
        goal_value = float(state.g_coarse @ primal.blocks[zero_pos])
        if inspector:
            inspector(iteration=iteration, state=state, table=table,
                      indices=list(indices), detail_indices=detail_indices,
                      primal=primal, dual=dual, mu_bundle=mu_bundle,
                      zeta_bundle=zeta_bundle)

        record = IterationRecord(
            iteration=iteration,
            dofs=state.tri.n_dofs * len(indices),
            mu=mu_bundle.total,
            zeta=zeta_bundle.total,
            n_elements=state.tri.n_elements,
            card_p=len(indices),
            active_m=active_count(indices),
            decision="stop",
            goal_value=goal_value,
            seconds=0.0,
        )

        if mu_bundle.total * zeta_bundle.total <= params.tol:
            record.seconds = time.perf_counter() - t_iter
            records.append(record)
            status = "converged"
            if observer:
                observer(record)
            break

        # mark edges and detail indices for both solutions, then combine
        edge_keys = [tuple(pair) for pair in
                     state.tri.edges[mu_bundle.edge_ids]]
        key_to_eid = dict(zip(edge_keys, mu_bundle.edge_ids.tolist()))
        marked_u = doerfler(mu_bundle.spatial, edge_keys, params.theta_x)
        marked_z = doerfler(zeta_bundle.spatial, edge_keys, params.theta_x)
        edge_marks = combine(marked_u, marked_z,
                             dict(zip(edge_keys, mu_bundle.spatial)),
                             dict(zip(edge_keys, zeta_bundle.spatial)))
        marked_edges = [key_to_eid[k] for k in edge_marks]

        idx_marked_u = doerfler(mu_bundle.parametric, detail_indices,
                                params.theta_p)
        idx_marked_z = doerfler(zeta_bundle.parametric, detail_indices,
                                params.theta_p)
        marked_indices = combine(
            idx_marked_u, idx_marked_z,
            dict(zip(detail_indices, mu_bundle.parametric)),
            dict(zip(detail_indices, zeta_bundle.parametric)))

        refined_edges = virtual_refined_set(state.tri, marked_edges)
        rho_x, rho_p = reduction_estimates(mu_bundle, zeta_bundle,
                                           refined_edges, marked_indices)
        record.rho_x, record.rho_p = rho_x, rho_p
        if rho_x == 0.0 and rho_p == 0.0:
            raise NumericError("both reduction estimates vanished while the "
                               "estimate product exceeds the tolerance")

        if rho_x >= rho_p:
            record.decision = "spatial"
            fine, _ = refine(state.tri, marked_edges)
            state = _MeshState(fine, problem)
        else:
            record.decision = "parametric"
            record.added_indices = tuple(marked_indices)
            index_log.append((iteration, tuple(marked_indices),
                              active_count(indices + marked_indices)))
            indices = sort_indices(indices + marked_indices)
        record.seconds = time.perf_counter() - t_iter
        records.append(record)
        if observer:
            observer(record)

    return RunResult(records=records, mesh=state.tri, indices=indices,
                     primal=primal, dual=dual, status=status,
                     index_log=index_log)
