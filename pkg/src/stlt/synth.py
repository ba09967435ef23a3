"""Synthetic problems and recovery metrics."""
from __future__ import annotations

import numpy as np

from .tensor_core import SparseTensor, fold


def _sample_support(dims, fraction, rng):
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    N = int(np.prod(dims))
    m = int(round(fraction * N))
    if m == 0:
        raise ValueError(f"fraction {fraction} observes no entries of a {N}-entry tensor")
    lin = np.sort(rng.choice(N, size=m, replace=False)) if m < N else np.arange(N)
    return lin


def khatri_rao(mats):
    """Column-wise Kronecker product, first matrix varying fastest."""
    out = mats[0]
    for A in mats[1:]:
        out = np.einsum("ir,jr->jir", out, A).reshape(-1, out.shape[1])
    return out


def nonneg_ground_truth(dims, true_ranks, rng):
    """``sum_k fold_k(B_k C_k^T)`` with entrywise-nonnegative uniform factors.

    ``C_k`` is a Khatri-Rao product of uniform factors for the other modes, so
    each summand is a nonnegative rank-``r_k`` CP tensor and every mode rank
    of the sum is at most ``sum(true_ranks)``.
    """
    dims = tuple(dims)
    W = np.zeros(dims)
    for k, (n, r) in enumerate(zip(dims, true_ranks)):
        if r == 0:
            continue
        B = rng.random((n, r))
        Cf = khatri_rao([rng.random((m, r)) for j, m in enumerate(dims) if j != k])
        W += fold(B @ Cf.T, k, dims)
    return W


def damped_sinusoid(n, rng):
    t = np.arange(n)
    decay = rng.uniform(0.0, 0.05)
    freq = rng.uniform(0.1, 1.0) * np.pi
    phase = rng.uniform(0, 2 * np.pi)
    return np.exp(-decay * t) * np.cos(freq * t + phase)


def hankel_ground_truth(dims, true_ranks, rng):
    """Sum of separable damped sinusoids.

    Every term has Hankel rank at most 2 in each mode, so ``ceil(min(r) / 2)``
    terms keep the mode-wise Hankel ranks within ``true_ranks``.
    """
    dims = tuple(dims)
    terms = max(1, (min(true_ranks) + 1) // 2)
    W = np.zeros(dims)
    for _ in range(terms):
        term = np.ones(())
        for n in dims:
            term = np.multiply.outer(term, damped_sinusoid(n, rng))
        W += rng.normal(1.0, 0.25) * term
    return W


def generate_synthetic(kind, dims, true_ranks, fraction, seed=0):
    """Observed entries and ground truth for a synthetic completion problem.

    Returns ``(Y, W_true)`` where ``Y`` is a :class:`SparseTensor` of the
    entries sampled uniformly without replacement.
    """
    rng = np.random.default_rng(seed)
    dims = tuple(int(n) for n in dims)
    if kind == "hankel":
        W = hankel_ground_truth(dims, true_ranks, rng)
    elif kind in ("nonneg", "none"):
        W = nonneg_ground_truth(dims, true_ranks, rng)
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    lin = _sample_support(dims, fraction, rng)
    subs = np.array(np.unravel_index(lin, dims, order="F")).T.reshape(-1, len(dims))
    Y = SparseTensor(dims, subs, W.ravel(order="F")[lin])
    return Y, W


def _rms(x):
    return float(np.sqrt(np.mean(x**2))) if x.size else 0.0


def eval_recovery(W_hat, W_true, omega):
    """RMSE off and on the observed set, plus min-entry diagnostics."""
    W_hat = np.asarray(W_hat, dtype=float)
    W_true = np.asarray(W_true, dtype=float)
    if W_hat.shape != W_true.shape:
        raise ValueError(f"shape mismatch {W_hat.shape} vs {W_true.shape}")
    mask = np.zeros(W_true.size, dtype=bool)
    lin = omega.linear_index() if isinstance(omega, SparseTensor) else np.asarray(omega)
    mask[lin] = True
    err = (W_hat - W_true).ravel(order="F")
    truth = W_true.ravel(order="F")
    return {
        "test_rmse": _rms(err[~mask]),
        "train_rmse": _rms(err[mask]),
        "test_rms_truth": _rms(truth[~mask]),
        "train_rms_truth": _rms(truth[mask]),
        "min_entry": float(W_hat.min()),
        "max_abs": float(np.abs(W_hat).max()),
    }
