"""Structured low-rank tensor completion through a partial dual on unit spheres."""

__version__ = "0.1.0"

from .constraints import ConstraintKind, HankelLift, hankel_adjoint, hankelize  # noqa: E402
from .dual import duality_gap, eval_g, euclidean_grad, euclidean_hess_vec, recover_primal  # noqa: E402
from .inner import SolverParams, solve_directional, solve_inner  # noqa: E402
from .manifold import DualProblem, IterationRecord, SphereProduct, outer_solve  # noqa: E402
from .problem import ProblemSpec, default_lambdas  # noqa: E402
from .synth import eval_recovery, generate_synthetic  # noqa: E402
from .tensor_core import SparseTensor, fold, mode_product, read_tns, unfold, write_tns  # noqa: E402

__all__ = [
    "ConstraintKind", "DualProblem", "HankelLift", "IterationRecord", "ProblemSpec", "SolverParams",
    "SparseTensor", "SphereProduct", "default_lambdas", "duality_gap", "eval_g", "eval_recovery",
    "euclidean_grad", "euclidean_hess_vec", "fold", "generate_synthetic", "hankel_adjoint", "hankelize",
    "mode_product", "outer_solve", "read_tns", "recover_primal", "solve_directional", "solve_inner",
    "unfold", "write_tns",
]
