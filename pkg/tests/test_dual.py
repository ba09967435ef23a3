import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stlt.checks import check_derivatives, gradient_error, hessian_error, random_tangent, taylor_slope
from stlt.dual import (
    duality_gap, euclidean_grad, lemma1_certificate, nuclear_norm, primal_objective, recover_decomposition,
    top_singular_value,
)
from stlt.inner import InnerSolution, solve_inner
from stlt.manifold import SphereProduct, outer_solve
from stlt.tensor_core import unfold

from conftest import make_spec

HANKEL = dict(dims=(7, 6), ranks=(2, 2), nnz=15, tau=(3, 2))


def _kw(kind):
    return HANKEL if kind == "hankel" else {}


@given(m=st.integers(1, 12), n=st.integers(1, 12), seed=st.integers(0, 2**16))
@settings(max_examples=60, deadline=None)
def test_lemma1_certificate_value(m, n, seed):
    X = np.random.default_rng(seed).standard_normal((m, n))
    Theta, val = lemma1_certificate(X)
    nuc = nuclear_norm(X)
    assert abs(val - nuc**2) <= 1e-10 * nuc**2
    assert np.isclose(np.trace(Theta), 1.0)
    assert np.linalg.eigvalsh(Theta).min() >= -1e-12


def test_lemma1_handles_rank_deficiency():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 9))
    _, val = lemma1_certificate(X)
    assert np.isclose(val, nuclear_norm(X) ** 2, rtol=1e-10)
    with pytest.raises(ValueError):
        lemma1_certificate(np.zeros((3, 3)))


def test_top_singular_value_matches_svd(rng):
    A = rng.standard_normal((20, 35))
    s, ok = top_singular_value(lambda x: A @ (A.T @ x), 20, tol=1e-14, maxiter=5000)
    assert ok
    assert np.isclose(s, np.linalg.svd(A, compute_uv=False)[0], rtol=1e-6)


def test_gradient_matches_dense_formula():
    spec = make_spec("none", seed=1)
    U = SphereProduct(spec.factor_shapes).random_point(np.random.default_rng(1))
    sol = solve_inner(U, spec)
    G = euclidean_grad(U, sol, spec)
    Z = sol.Z(spec).to_dense()
    for k in range(spec.K):
        Mk = unfold(Z, k)
        assert np.allclose(G[k], -spec.lambdas[k] * Mk @ Mk.T @ U[k])


@pytest.mark.parametrize("kind", ["none", "nonneg", "hankel"])
def test_gradient_finite_difference(kind):
    spec = make_spec(kind, seed=2, **_kw(kind))
    rng = np.random.default_rng(2)
    U = SphereProduct(spec.factor_shapes).random_point(rng)
    err, fd, an = gradient_error(spec, U, random_tangent(U, rng))
    assert err <= 1e-4, (fd, an)


@pytest.mark.parametrize("kind", ["none", "hankel"])
def test_hessian_finite_difference_and_taylor_slope(kind):
    spec = make_spec(kind, seed=3, **_kw(kind))
    rng = np.random.default_rng(3)
    M = SphereProduct(spec.factor_shapes)
    U = M.random_point(rng)
    V = random_tangent(U, rng)
    assert hessian_error(spec, U, V) <= 1e-3
    V = M.lincomb(1.0 / M.norm(V), V)
    slope, _, _ = taylor_slope(spec, U, V)
    assert slope >= 2.9


def test_check_derivatives_report():
    rep = check_derivatives(make_spec("none", seed=4), n_points=2)
    assert rep.passed
    assert rep.lines()[-1] == "PASS"
    assert len(rep.grad_errors) == len(rep.slopes) == 2


def test_zero_lambda_gives_flat_dual():
    spec = make_spec("none", seed=5, lam=0.0)
    U = SphereProduct(spec.factor_shapes).random_point(np.random.default_rng(5))
    sol = solve_inner(U, spec)
    assert np.isclose(sol.value, spec.C * spec.y @ spec.y)
    assert all(not g.any() for g in euclidean_grad(U, sol, spec))


@pytest.mark.parametrize("kind", ["none", "nonneg", "hankel"])
def test_duality_gap_nonnegative_at_random_points(kind):
    for seed in range(3):
        spec = make_spec(kind, seed=seed, **_kw(kind))
        U = SphereProduct(spec.factor_shapes).random_point(np.random.default_rng(seed))
        sol = solve_inner(U, spec)
        rep = duality_gap(U, sol, spec)
        assert rep.delta >= -1e-8 * (1 + abs(sol.value))
        assert rep.confident


def test_gap_singular_values_match_dense_svd():
    spec = make_spec("none", seed=6)
    U = SphereProduct(spec.factor_shapes).random_point(np.random.default_rng(6))
    sol = solve_inner(U, spec)
    rep = duality_gap(U, sol, spec)
    Z = sol.Z(spec).to_dense()
    for k in range(spec.K):
        assert np.isclose(rep.sigma[k], np.linalg.svd(unfold(Z, k), compute_uv=False)[0], rtol=1e-6)


@pytest.mark.parametrize("kind", ["none", "nonneg"])
def test_strong_duality_at_converged_point(kind):
    spec = make_spec(kind, seed=2)
    res = outer_solve(spec, eps=1e-9, max_iters=300)
    parts = recover_decomposition(res.U, res.sol, spec)
    W = sum(parts)
    g = res.sol.value
    assert res.gap.delta <= 1e-6 * (1 + abs(g))
    # primal: C ||W - Y||^2 + sum_k ||W^(k)||_*^2 / (2 lam_k)
    assert abs(primal_objective(W, spec, parts, reg_weight=0.5) - g) <= 1e-6 * (1 + abs(g))
    if kind == "nonneg":
        assert W.min() >= -1e-8 * np.abs(W).max()


def test_gap_vanishes_on_rank_one_multiplier():
    spec = make_spec("none", dims=(3, 4), ranks=(1, 1), nnz=12, seed=2)
    rng = np.random.default_rng(2)
    u, v = rng.standard_normal(3), rng.standard_normal(4)
    u, v = u / np.linalg.norm(u), v / np.linalg.norm(v)
    subs = spec.Y.subs
    z = 2.5 * u[subs[:, 0]] * v[subs[:, 1]]
    sol = InnerSolution("none", z, None, z, 0.0, 0.0, 0, True)
    rep = duality_gap([u[:, None], v[:, None]], sol, spec)
    assert rep.sigma == pytest.approx([2.5, 2.5], rel=1e-10)
    assert abs(rep.delta) <= 1e-10
