from importlib.metadata import version

from .api import SclsSolver, SolveReport
from .data import (
    ManipulationRule,
    SyntheticSpec,
    generate,
    load_csv,
    load_libsvm,
)
from .exceptions import SpglsError
from .krylov import KrylovConfig, KrylovSolver, krylov_solve
from .oracle import OracleSolver, oracle_solve, solve_spg_small
from .reformulate import (
    Dataset,
    Samples,
    SclsProblem,
    SpgPoint,
    SphereVec,
    build_scls,
    map_to_sphere,
    recover_spg,
)
from .riemannian import RtrConfig, RtrSolver, rtr_multistart, rtr_solve

__version__ = version("pyspgls")

__all__ = [
    "Dataset",
    "KrylovConfig",
    "KrylovSolver",
    "ManipulationRule",
    "OracleSolver",
    "RtrConfig",
    "RtrSolver",
    "Samples",
    "SclsProblem",
    "SclsSolver",
    "SolveReport",
    "SpgPoint",
    "SphereVec",
    "SpglsError",
    "SyntheticSpec",
    "build_scls",
    "generate",
    "krylov_solve",
    "load_csv",
    "load_libsvm",
    "map_to_sphere",
    "oracle_solve",
    "recover_spg",
    "rtr_multistart",
    "rtr_solve",
    "solve_spg_small",
]
