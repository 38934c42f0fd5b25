"""Shared fixtures-in-code for the solver/estimator/adaptivity tests."""

import numpy as np
import scipy.sparse.linalg as spla

from sgadapt.assembly import (CharacteristicRegion, CoefficientExpansion,
                              FunctionalSpec, TwoLevelSystem)
from sgadapt.chaos import UniformMeasure, recurrence, sort_indices
from sgadapt.solver import BlockVector, MeanPreconditioner, build_operator, solve


class TinyState:
    """One mesh + expansion + loads, solved for a given index set."""

    def __init__(self, tri, expansion, fspec, gspec=None, indices=((), (1,)),
                 table=None):
        self.tri = tri
        self.expansion = expansion
        self.fspec = fspec
        self.gspec = gspec if gspec is not None else fspec
        self.table = table or recurrence(UniformMeasure(), 10)
        self.system = TwoLevelSystem(tri, expansion)
        self.lu0 = spla.splu(self.system.coarse_matrix(0).tocsc())
        self.indices = sort_indices(indices)
        self.op = build_operator(self.indices, self.system.coarse_matrix,
                                 self.table)
        self.f_coarse = self.system.coarse_load(self.fspec)
        self.g_coarse = self.system.coarse_load(self.gspec)
        self.f_detail = self.system.detail_load(self.fspec)
        self.g_detail = self.system.detail_load(self.gspec)
        self.f_fine = self.system.fine_load(self.fspec)
        self.g_fine = self.system.fine_load(self.gspec)

    def rhs(self, which="primal"):
        vec = self.f_coarse if which == "primal" else self.g_coarse
        b = BlockVector.zeros(self.indices,
                              [self.tri.n_dofs] * len(self.indices))
        b.blocks[self.indices.index(())][:] = vec
        return b

    def solve(self, which="primal", tol_rel=1e-12):
        pre = MeanPreconditioner([self.lu0] * len(self.indices))
        return solve(self.op, self.rhs(which), precond=pre, tol_rel=tol_rel,
                     mesh_id=self.tri.mesh_id)


def default_expansion():
    a0 = 2.0
    a1 = lambda x: 0.4 * np.cos(np.pi * x[:, 0])
    a2 = lambda x: 0.25 * np.cos(np.pi * x[:, 1])
    a3 = lambda x: 0.1 * np.cos(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])
    return CoefficientExpansion([a0, a1, a2, a3], 2.0, 2.0, [0.4, 0.25, 0.1])


def corner_region_spec(tri, element=0, vec=(1.0, 0.0)):
    region = CharacteristicRegion(tri.vertices[tri.elements[element]])
    return FunctionalSpec(regions=[(region, vec)])
