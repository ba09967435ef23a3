import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stlt.constraints import (
    ConstraintKind, HankelLift, apply_adjoint, duplication_counts, hankel_adjoint, hankel_dims, hankelize,
)
from stlt.tensor_core import SparseTensor, TensorShapeError

from conftest import random_support


@st.composite
def hankel_case(draw):
    K = draw(st.integers(1, 3))
    dims = tuple(draw(st.integers(1, 6)) for _ in range(K))
    tau = tuple(draw(st.integers(1, n)) for n in dims)
    return dims, tau, draw(st.integers(0, 2**16))


def test_hankelize_matches_definition():
    x = np.arange(5.0)
    H = hankelize(x, (3,))
    assert H.shape == (3, 3)
    assert np.array_equal(H, [[0, 1, 2], [1, 2, 3], [2, 3, 4]])
    W = np.arange(12.0).reshape(3, 4)
    H = hankelize(W, (2, 3))
    assert H.shape == hankel_dims((3, 4), (2, 3)) == (2, 2, 3, 2)
    for j1 in range(2):
        for l1 in range(2):
            for j2 in range(3):
                for l2 in range(2):
                    assert H[j1, l1, j2, l2] == W[j1 + l1, j2 + l2]


@given(hankel_case())
@settings(max_examples=50, deadline=None)
def test_hankel_adjoint_identity(case):
    dims, tau, seed = case
    rng = np.random.default_rng(seed)
    W = rng.standard_normal(dims)
    S = rng.standard_normal(hankel_dims(dims, tau))
    lhs = float(np.sum(hankelize(W, tau) * S))
    rhs = float(np.sum(W * hankel_adjoint(S, tau, dims)))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


@given(hankel_case())
@settings(max_examples=30, deadline=None)
def test_duplication_counts_equal_adjoint_of_ones(case):
    dims, tau, _ = case
    ones = np.ones(hankel_dims(dims, tau))
    assert np.array_equal(duplication_counts(dims, tau), hankel_adjoint(ones, tau, dims))


def test_hankel_adjoint_checks_shapes():
    with pytest.raises(TensorShapeError):
        hankel_adjoint(np.zeros((2, 2)), (2,), (4,))
    with pytest.raises(ValueError):
        hankelize(np.zeros(4), (5,))


def test_constraint_kind_validation():
    assert ConstraintKind().kind == "none"
    with pytest.raises(ValueError):
        ConstraintKind("box")
    with pytest.raises(ValueError):
        ConstraintKind("hankel")
    with pytest.raises(ValueError):
        ConstraintKind("nonneg", (2,))
    ck = ConstraintKind.parse("hankel", "3,2")
    assert ck.tau == (3, 2)
    assert ck.factor_rows((7, 6)) == (5, 5)
    with pytest.raises(ValueError):
        ck.validate((7,))
    with pytest.raises(ValueError):
        ConstraintKind("hankel", (8, 2)).validate((7, 6))


def test_apply_adjoint_identity_for_nonneg():
    S = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(apply_adjoint(ConstraintKind("nonneg"), S), S)
    with pytest.raises(TensorShapeError):
        apply_adjoint(ConstraintKind("nonneg"), S, dims=(3, 2))
    ck = ConstraintKind("hankel", (2,))
    Hs = hankelize(np.arange(4.0), (2,))
    assert np.array_equal(apply_adjoint(ck, Hs), hankel_adjoint(Hs, (2,), (4,)))


def _lift_case(seed):
    rng = np.random.default_rng(seed)
    dims, tau = (7, 6), (3, 2)
    T = SparseTensor(dims, random_support(dims, 15, rng), rng.standard_normal(15))
    return rng, dims, tau, T, HankelLift(dims, T.subs, tau)


def test_lift_support_is_preimage_of_omega():
    rng, dims, tau, T, lift = _lift_case(0)
    # every lifted entry maps back to its source omega index
    J, L = lift.subs[:, 0::2], lift.subs[:, 1::2]
    assert np.array_equal(J + L, T.subs[lift.src])
    # and the lift holds every such entry: compare with the dense lift of the omega mask
    mask = np.zeros(dims)
    mask[tuple(T.subs.T)] = 1.0
    assert lift.size == int(hankelize(mask, tau).sum())
    assert np.array_equal(lift.mult, duplication_counts(dims, tau)[tuple(T.subs.T)])


def test_lift_aggregate_spread_are_adjoint_and_match_dense():
    rng, dims, tau, T, lift = _lift_case(1)
    z = rng.standard_normal(T.nnz)
    s = rng.standard_normal(lift.size)
    assert np.isclose(lift.spread(z) @ s, z @ lift.aggregate(s), rtol=1e-13)
    dense = hankel_adjoint(lift.as_sparse(s).to_dense(), tau, dims)
    assert np.allclose(lift.aggregate(s), T.gather(dense))
    assert np.allclose(lift.spread(z), lift.as_sparse(lift.spread(z)).gather(hankelize(T.with_values(z).to_dense(), tau)))


def test_lift_projection_is_orthogonal_projector():
    rng, dims, tau, T, lift = _lift_case(2)
    z, s = rng.standard_normal(T.nnz), rng.standard_normal(lift.size)
    pz, ps = lift.project(z, s)
    assert np.allclose(lift.aggregate(ps), pz, atol=1e-12)
    qz, qs = lift.project(pz, ps)
    assert np.allclose(qz, pz) and np.allclose(qs, ps)
    # residual orthogonal to the feasible subspace, spanned by (H*(t), t)
    t = rng.standard_normal(lift.size)
    assert abs((z - pz) @ lift.aggregate(t) + (s - ps) @ t) < 1e-10
