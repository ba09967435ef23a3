import dataclasses

import numpy as np
import pytest

from stlt.inner import (
    SolverParams, conjugate_gradient, solve_directional, solve_inner, solve_inner_hankel, solve_inner_nonneg,
    split_multiplier,
)
from stlt.manifold import SphereProduct

from conftest import make_spec
from oracles import hankel_oracle, none_oracle, nonneg_oracle


def point(spec, seed=1):
    return SphereProduct(spec.factor_shapes).random_point(np.random.default_rng(seed))


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


# -- linear CG ---------------------------------------------------------------


def test_cg_solves_spd_system(rng):
    B = rng.standard_normal((30, 30))
    A = B @ B.T + 0.1 * np.eye(30)
    b = rng.standard_normal(30)
    res = conjugate_gradient(lambda v: A @ v, b, tol=1e-12, maxiter=500)
    assert res.converged
    assert np.allclose(A @ res.x, b, atol=1e-9)


def test_pcg_with_jacobi_preconditioner_needs_fewer_iterations(rng):
    d = np.logspace(0, 6, 200)
    B = rng.standard_normal((200, 5))
    A = np.diag(d) + B @ B.T
    b = rng.standard_normal(200)
    plain = conjugate_gradient(lambda v: A @ v, b, tol=1e-10, maxiter=5000)
    pre = conjugate_gradient(lambda v: A @ v, b, tol=1e-10, maxiter=5000, precond=lambda r: r / np.diag(A))
    assert pre.converged and pre.iterations < plain.iterations
    assert np.allclose(A @ pre.x, b, atol=1e-8 * np.linalg.norm(b) * 1e3)


def test_cg_on_subspace_with_projector(rng):
    A = np.diag(np.arange(1.0, 11.0))
    P = np.eye(10)
    P[0, 0] = 0.0
    res = conjugate_gradient(lambda v: A @ v, np.ones(10), tol=1e-12, maxiter=100, project=lambda v: P @ v)
    assert res.converged
    assert res.x[0] == 0.0
    assert np.allclose(res.x[1:], 1.0 / np.arange(2.0, 11.0))


def test_cg_zero_rhs_and_warm_start(rng):
    A = np.eye(4) * 2
    res = conjugate_gradient(lambda v: A @ v, np.zeros(4))
    assert res.converged and res.iterations == 0 and not res.x.any()
    x_true = rng.standard_normal(4)
    res = conjugate_gradient(lambda v: A @ v, A @ x_true, x0=x_true, tol=1e-12)
    assert res.iterations == 0


def test_solver_params_validation():
    with pytest.raises(ValueError):
        SolverParams(cg_tol=0)
    with pytest.raises(ValueError):
        SolverParams(cg_max_iter=0)
    with pytest.raises(ValueError):
        SolverParams(nonneg_method="simplex")
    with pytest.raises(ValueError):
        SolverParams(operator="dense")
    t = SolverParams().tightened(0.1)
    assert t.cg_tol == pytest.approx(1e-11) and t.operator == "auto"


# -- oracle equivalence --------------------------------------------------------


@pytest.mark.parametrize("seed", range(3))
def test_none_matches_dense_spd_solve(seed):
    spec = make_spec("none", dims=(3, 3, 2), ranks=(2, 2, 2), nnz=5, seed=seed)
    U = point(spec, seed)
    val, z = none_oracle(spec, U)
    sol = solve_inner(U, spec)
    assert sol.converged
    assert rel(sol.value, val) <= 1e-8
    assert np.allclose(sol.z, z, atol=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_nonneg_matches_projected_ascent(seed):
    spec = make_spec("nonneg", dims=(3, 3, 2), ranks=(2, 2, 2), nnz=5, seed=seed)
    U = point(spec, seed)
    val, _, _ = nonneg_oracle(spec, U)
    sol = solve_inner(U, spec)
    assert sol.converged
    assert rel(sol.value, val) <= 1e-8


@pytest.mark.parametrize("seed", range(3))
def test_hankel_matches_dense_kkt(seed):
    spec = make_spec("hankel", dims=(3, 3, 2), ranks=(2, 2, 2), nnz=5, seed=seed, tau=(2, 2, 1))
    U = point(spec, seed)
    val, z, _ = hankel_oracle(spec, U)
    sol = solve_inner(U, spec)
    assert sol.converged
    assert rel(sol.value, val) <= 1e-8
    assert np.allclose(sol.z, z, atol=1e-8)


def test_nonneg_solution_satisfies_kkt():
    spec = make_spec("nonneg", dims=(4, 3, 3), ranks=(2, 2, 1), nnz=10, seed=4)
    U = point(spec, 4)
    sol = solve_inner(U, spec)
    W = spec.qop(U, sol.m)
    assert sol.s.min() >= 0
    # W = Q(M) is the (scaled) primal estimate: nonnegative, and zero wherever S > 0
    assert W.min() >= -1e-8 * max(1.0, np.abs(W).max())
    assert np.abs(W[sol.s > 1e-8]).max(initial=0.0) <= 1e-7
    assert np.allclose(spec.restrict(W), spec.y - sol.z / (2 * spec.C), atol=1e-7)


def test_nonneg_methods_agree():
    spec = make_spec("nonneg", dims=(4, 3, 3), ranks=(2, 2, 2), nnz=12, seed=5)
    U = point(spec, 5)
    a = solve_inner_nonneg(U, spec, SolverParams(nonneg_method="lbfgsb"))
    b = solve_inner_nonneg(U, spec, SolverParams(nonneg_method="alternating"))
    assert a.converged and b.converged
    assert rel(a.value, b.value) <= 1e-8


def test_split_multiplier_recovers_z_and_s():
    spec = make_spec("nonneg", seed=6)
    U = point(spec, 6)
    sol = solve_inner(U, spec)
    z, S = split_multiplier(spec, sol.m)
    assert np.allclose(z, sol.z) and np.allclose(S, sol.s)


def test_hankel_methods_agree_and_stay_feasible():
    spec = make_spec("hankel", dims=(7, 6), ranks=(2, 2), nnz=15, seed=7, tau=(3, 2))
    U = point(spec, 7)
    a = solve_inner_hankel(U, spec, SolverParams(hankel_method="pcg"))
    b = solve_inner_hankel(U, spec, SolverParams(hankel_method="projected"))
    assert rel(a.value, b.value) <= 1e-9
    assert a.feasibility <= 1e-12 * np.linalg.norm(a.z)
    assert b.feasibility <= 1e-10 * np.linalg.norm(b.z)


@pytest.mark.parametrize("kind", ["none", "hankel"])
def test_assembled_and_matrix_free_operators_agree(kind):
    kw = dict(dims=(7, 6), ranks=(2, 2), nnz=20, tau=(3, 2)) if kind == "hankel" else {}
    spec = make_spec(kind, seed=8, **kw)
    U = point(spec, 8)
    a = solve_inner(U, spec, SolverParams(operator="assembled"))
    b = solve_inner(U, spec, SolverParams(operator="matfree"))
    assert rel(a.value, b.value) <= 1e-10


def test_warm_start_reduces_iterations():
    spec = make_spec("hankel", dims=(9, 8), ranks=(2, 2), nnz=30, seed=9, tau=(3, 3))
    U = point(spec, 9)
    cold = solve_inner(U, spec)
    warm = solve_inner(U, spec, warm=cold)
    assert warm.iterations < cold.iterations
    assert rel(warm.value, cold.value) <= 1e-9


def test_unconverged_solve_is_reported():
    spec = make_spec("none", dims=(5, 5, 5), nnz=60, seed=10)
    sol = solve_inner(point(spec), spec, SolverParams(cg_max_iter=1))
    assert not sol.converged and sol.messages


# -- directional derivative of the maximizer -----------------------------------


@pytest.mark.parametrize("kind", ["none", "nonneg", "hankel"])
def test_directional_derivative_matches_finite_difference(kind):
    kw = dict(dims=(7, 6), ranks=(2, 2), nnz=15, tau=(3, 2)) if kind == "hankel" else {}
    spec = make_spec(kind, seed=11, **kw)
    M = SphereProduct(spec.factor_shapes)
    rng = np.random.default_rng(11)
    U = M.random_point(rng)
    V = M.proj(U, [rng.standard_normal(u.shape) for u in U])
    tight = dataclasses.replace(SolverParams(), cg_tol=1e-13, alternation_tol=1e-13)
    sol = solve_inner(U, spec, tight)
    d = solve_directional(U, V, sol, spec, tight)
    # the bound-constrained solver stalls near a 1e-9 KKT residual, so nonneg needs a larger step
    h, tol = (1e-4, 1e-4) if kind == "nonneg" else (1e-6, 1e-5)
    zp = solve_inner([u + h * v for u, v in zip(U, V)], spec, tight).z
    zm = solve_inner([u - h * v for u, v in zip(U, V)], spec, tight).z
    fd = (zp - zm) / (2 * h)
    assert np.linalg.norm(d.z - fd) <= tol * max(1.0, np.linalg.norm(fd))
