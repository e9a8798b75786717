"""Local discontinuous Galerkin discretization and backward solvers for 1-D backward SPDEs."""
__version__ = "0.1.0"

from .errors import (DegenerateBasisError, DriverEvaluationError, InvalidBatchError,
                     RankDeficiencyError, TrainingDivergenceError)
from .ldg import CoefFns, LdgOperator
from .meshspace import CoefField, ElementMesh, Space, l2_error, l2_norm, make_space, make_uniform_mesh
from .polybasis import BasisSet, gauss_legendre, make_basis
from .problems import ProblemSpec, get_problem, relative_error
from .projection import project_gr_minus, project_gr_plus, project_l2
