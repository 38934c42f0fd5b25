"""Matrix-free solution of the coupled tensor-product Galerkin systems.

The operator acts on block vectors (one spatial vector per multi-index):

    (A x)[nu] = K0 x[nu] + sum_m sum_{mu = nu +- e_m} c_m(nu, mu) K_m x[mu]

No global Kronecker matrix is formed; preconditioning is block-diagonal
with the mean-field matrix.  The same machinery drives the enriched-space
oracles where blocks may live on different spatial levels.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .chaos import sort_indices, trim
from .errors import NumericError


class BlockVector:
    """Association index -> spatial coefficient vector, fixed block layout."""

    __slots__ = ("indices", "blocks")

    def __init__(self, indices, blocks):
        self.indices = list(indices)
        self.blocks = list(blocks)
        if len(self.indices) != len(self.blocks):
            raise ValueError("index/block count mismatch")

    @classmethod
    def zeros(cls, indices, sizes):
        return cls(indices, [np.zeros(n) for n in sizes])

    def copy(self):
        return BlockVector(self.indices, [b.copy() for b in self.blocks])

    def __getitem__(self, nu):
        return self.blocks[self.indices.index(trim(nu))]

    def dot(self, other):
        return float(sum(a @ b for a, b in zip(self.blocks, other.blocks)))

    def axpy(self, alpha, other):
        for a, b in zip(self.blocks, other.blocks):
            a += alpha * b

    def scale_add(self, alpha, other):
        """self = other + alpha * self (CG direction update)."""
        for a, b in zip(self.blocks, other.blocks):
            a *= alpha
            a += b

    def norm(self):
        return np.sqrt(self.dot(self))

    def ravel(self):
        return np.concatenate(self.blocks) if self.blocks else np.zeros(0)


class GalerkinSolution(BlockVector):
    """Galerkin coefficients nu -> u_nu over one triangulation."""

    def __init__(self, indices, blocks, mesh_id=None):
        super().__init__(indices, blocks)
        self.mesh_id = mesh_id

    @property
    def mean_block(self):
        return self[()]


def coupling_pairs(indices, table):
    """All ordered coupled block pairs (i, j, m, coefficient) within a set."""
    pos = {nu: i for i, nu in enumerate(indices)}
    pairs = []
    for i, nu in enumerate(indices):
        span = max(len(nu) for nu in indices) + 1
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


class BlockOperator:
    """Symmetric block operator given by per-pair sparse terms.

    ``diag_terms[i]`` is the mean-field matrix of block i; ``terms`` holds
    (i, j, matrix, coefficient) contributions of the fluctuation fields.
    """

    def __init__(self, indices, diag_terms, terms):
        self.indices = list(indices)
        self.diag_terms = list(diag_terms)
        self.terms = list(terms)
        self.block_sizes = [A.shape[0] for A in diag_terms]

    def apply(self, x):
        out = [A @ b for A, b in zip(self.diag_terms, x.blocks)]
        for i, j, mat, coeff in self.terms:
            out[i] += coeff * (mat @ x.blocks[j])
        return BlockVector(x.indices, out)

    def energy_norm(self, x):
        return np.sqrt(max(x.dot(self.apply(x)), 0.0))

    def as_dense(self):
        """Materialized block matrix, for oracle-scale problems only."""
        sizes = self.block_sizes
        offs = np.concatenate([[0], np.cumsum(sizes)])
        n = offs[-1]
        A = np.zeros((n, n))
        for i, K in enumerate(self.diag_terms):
            A[offs[i]:offs[i + 1], offs[i]:offs[i + 1]] = K.toarray()
        for i, j, mat, coeff in self.terms:
            A[offs[i]:offs[i + 1], offs[j]:offs[j + 1]] += coeff * mat.toarray()
        return A

    def ravel(self, x):
        return x.ravel()

    def unravel(self, flat):
        offs = np.concatenate([[0], np.cumsum(self.block_sizes)])
        return BlockVector(self.indices,
                           [flat[offs[i]:offs[i + 1]].copy()
                            for i in range(len(self.indices))])


def build_operator(indices, matrix_for_m, table):
    """Standard operator on one spatial space for an index set.

    ``matrix_for_m(m)`` returns the stiffness of expansion coefficient m
    (m = 0 is the mean field).
    """
    indices = sort_indices(indices)
    K0 = matrix_for_m(0)
    pairs = coupling_pairs(indices, table)
    terms = [(i, j, matrix_for_m(m), c) for i, j, m, c in pairs]
    return BlockOperator(indices, [K0] * len(indices), terms)


class MeanPreconditioner:
    """Block-diagonal solve with (factorized) mean-field matrices."""

    def __init__(self, factors):
        self.factors = list(factors)

    @classmethod
    def shared(cls, matrix, n_blocks):
        lu = spla.splu(matrix.tocsc())
        return cls([lu] * n_blocks)

    def apply(self, r):
        return BlockVector(r.indices,
                           [lu.solve(b) for lu, b in zip(self.factors, r.blocks)])


def pcg(operator, rhs, precond, tol_rel=1e-10, max_iter=500):
    """Preconditioned conjugate gradients on block vectors.

    Stops when the preconditioned residual norm falls below ``tol_rel``
    times its initial value; raises NumericError (with the residual
    history attached) when the iteration cap is exceeded.
    """
    x = BlockVector.zeros(rhs.indices, [len(b) for b in rhs.blocks])
    r = rhs.copy()
    z = precond.apply(r)
    rho = r.dot(z)
    rhs_rho = rho
    if rhs_rho <= 0.0:
        return x, {"iterations": 0, "history": [0.0]}
    p = z.copy()
    history = [1.0]
    for it in range(1, max_iter + 1):
        Ap = operator.apply(p)
        pAp = p.dot(Ap)
        if pAp <= 0:
            raise NumericError("operator lost positive definiteness in CG")
        alpha = rho / pAp
        x.axpy(alpha, p)
        r.axpy(-alpha, Ap)
        z = precond.apply(r)
        rho_new = r.dot(z)
        rel = np.sqrt(max(rho_new, 0.0) / rhs_rho)
        history.append(rel)
        if rel <= tol_rel:
            return x, {"iterations": it, "history": history}
        p.scale_add(rho_new / rho, z)
        rho = rho_new
    err = NumericError(f"CG did not reach tol {tol_rel} in {max_iter} iterations "
                       f"(last relative residual {history[-1]:.3e})")
    err.history = history
    raise err


def solve(operator, rhs, precond=None, tol_rel=1e-10, max_iter=500, mesh_id=None):
    """Solve the coupled Galerkin system; returns a GalerkinSolution."""
    if precond is None:
        precond = MeanPreconditioner.shared(operator.diag_terms[0],
                                            len(operator.indices))
    x, _ = pcg(operator, rhs, precond, tol_rel=tol_rel, max_iter=max_iter)
    return GalerkinSolution(x.indices, x.blocks, mesh_id=mesh_id)


def mean_energy_norm(operator, x):
    """B0-energy norm: sqrt of sum_nu x_nu^T K0 x_nu."""
    return np.sqrt(max(sum(b @ (A @ b) for A, b in
                           zip(operator.diag_terms, x.blocks)), 0.0))
