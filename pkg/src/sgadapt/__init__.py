"""Goal-oriented adaptive stochastic Galerkin FEM for parametric elliptic PDEs.

The package solves -div(a(x,y) grad u) = f on 2D polygonal domains with an
affine-parametric diffusion coefficient, estimates the energy errors of
primal and dual Galerkin solutions with a two-level a posteriori estimator,
and adaptively refines the mesh or enriches the polynomial index set to
drive the error in a goal functional below a tolerance.
"""

__version__ = "0.1.0"

from .adapt import (AdaptiveProblem, MarkingParams, RunResult, combine,
                    doerfler, reduction_estimates, run)
from .assembly import (CharacteristicRegion, CoefficientExpansion,
                       FunctionalSpec, TwoLevelSystem, load, stiffness)
from .chaos import (RecurrenceTable, TruncatedGaussianMeasure, UniformMeasure,
                    detail_index_set, format_index, parse_index, recurrence,
                    sort_indices)
from .errors import ConfigError, NumericError
from .estimator import (EnrichedOperator, IndicatorBundle,
                        parametric_indicators, spatial_indicators,
                        two_level_estimate)
from .mesh import (DetailStructure, Triangulation, dump_mesh_text, load_asset,
                   load_mesh_text, refine, uniform_refine, virtual_refined_set)
from .problems import (build_problem, cosine_expansion, kl_expansion,
                       mollifier, mollifier_goal, slit_expansion)
from .solver import (BlockOperator, BlockVector, GalerkinSolution,
                     MeanPreconditioner, build_operator, mean_energy_norm,
                     pcg, solve)

__all__ = [name for name in dir() if not name.startswith("_")]
