import numpy as np
import pytest

from stlt.constraints import ConstraintKind
from stlt.problem import ProblemSpec
from stlt.tensor_core import SparseTensor


def random_support(dims, nnz, rng):
    lin = np.sort(rng.choice(int(np.prod(dims)), size=nnz, replace=False))
    return np.array(np.unravel_index(lin, dims, order="F")).T.reshape(-1, len(dims))


def make_spec(kind, dims=(4, 3, 3), ranks=(2, 2, 2), nnz=12, seed=0, lam=0.7, C=1.0, tau=None):
    rng = np.random.default_rng(seed)
    subs = random_support(dims, nnz, rng)
    vals = rng.standard_normal(nnz)
    if kind == "nonneg":
        vals = np.abs(vals)
    Y = SparseTensor(dims, subs, vals)
    ck = ConstraintKind(kind, tau if kind == "hankel" else None)
    return ProblemSpec(Y, ranks, (lam,) * len(dims), C, ck)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=["none", "nonneg", "hankel"])
def any_spec(request):
    if request.param == "hankel":
        return make_spec("hankel", dims=(7, 6), ranks=(2, 2), nnz=15, tau=(3, 2))
    return make_spec(request.param)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
