"""Dual objective, its derivatives, the duality gap and primal recovery."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .constraints import duplication_counts, hankel_adjoint, hankelize
from .inner import InnerSolution, inner_value
from .tensor_core import mode_product, unfold


class InnerConvergenceWarning(RuntimeWarning):
    pass


def eval_g(U, sol: InnerSolution, spec):
    """``g(U)`` evaluated at a (converged) inner maximizer."""
    if not sol.converged:
        warnings.warn("g evaluated at an unconverged inner solution", InnerConvergenceWarning, stacklevel=2)
    return inner_value(spec, U, sol.z, sol.m)


def euclidean_grad(U, sol, spec):
    """``G_k = -lam_k M_(k) M_(k)^T U_k``, using two sparse operator products per mode."""
    out = []
    for k in range(spec.K):
        A = spec.modes.left(k, U[k], sol.m)
        out.append(-spec.lambdas[k] * spec.modes.times(k, sol.m, A.T))
    return out


def euclidean_hess_vec(U, V, sol, dsol, spec):
    """Directional derivative of :func:`euclidean_grad` along ``V``.

    ``dsol`` is the matching :class:`stlt.inner.Directional`.
    """
    md, m = dsol.m, sol.m
    out = []
    for k in range(spec.K):
        modes = spec.modes
        Q = (
            modes.times(k, m, modes.left(k, V[k], m).T)
            + modes.times(k, md, modes.left(k, U[k], m).T)
            + modes.times(k, m, modes.left(k, U[k], md).T)
        )
        out.append(-spec.lambdas[k] * Q)
    return out


@dataclass
class GapReport:
    """Per-mode duality gap terms.

    ``delta = sum_k lam_k / 2 * (sigma_k**2 - captured_k)``.
    """

    sigma: list
    captured: list
    delta: float
    rel_gap: float
    g: float
    confident: bool = True


def top_singular_value(apply_gram, n, tol=1e-10, maxiter=1000, seed=0, restarts=3, floor_vec=None):
    """Largest singular value of ``M`` from power iteration on ``x -> M M^T x``.

    Starts from a fixed-seed Gaussian vector. If the Rayleigh quotient has not
    settled within ``maxiter`` steps, up to ``restarts`` fresh random starts
    are tried. ``floor_vec`` (a known good direction) is used as a last warm
    start whenever the power estimate falls below its Rayleigh quotient, so
    the result never underestimates that lower bound.

    Returns ``(sigma, converged)``.
    """

    def run(x):
        x = x / np.linalg.norm(x)
        q = 0.0
        for _ in range(maxiter):
            y = apply_gram(x)
            qn = float(x @ y)
            ny = np.linalg.norm(y)
            if ny == 0:
                return 0.0, True
            x = y / ny
            if abs(qn - q) <= tol * max(abs(qn), np.finfo(float).tiny):
                return qn, True
            q = qn
        return q, False

    best, ok = run(np.random.default_rng(seed).standard_normal(n))
    attempt = 0
    while not ok and attempt < restarts:
        attempt += 1
        q, ok = run(np.random.default_rng(seed + 1000 * attempt).standard_normal(n))
        best = max(best, q)
    if floor_vec is not None and np.linalg.norm(floor_vec) > 0:
        f = floor_vec / np.linalg.norm(floor_vec)
        qf = float(f @ apply_gram(f))
        if qf > best:
            q, ok2 = run(f)
            best = max(q, qf)
            ok = ok and ok2
    return float(np.sqrt(max(best, 0.0))), ok


def duality_gap(U, sol, spec, tol=1e-10, maxiter=1000, seed=0):
    """Duality gap of the candidate ``(U U^T, Z, s)``."""
    g = inner_value(spec, U, sol.z, sol.m)
    sig, cap = [], []
    confident = True
    m = sol.m
    modes = spec.modes
    for k in range(spec.K):
        A = modes.left(k, U[k], m)
        cap.append(float(np.sum(A**2)))

        def gram(x, k=k):
            return modes.times(k, m, modes.left(k, x[:, None], m).T)[:, 0]

        # best direction inside span(U_k): a certified lower bound for sigma^2
        Q, _ = np.linalg.qr(U[k])
        B = modes.left(k, Q, m)
        w, vecs = np.linalg.eigh(B @ B.T)
        s, ok = top_singular_value(gram, U[k].shape[0], tol, maxiter, seed + k, floor_vec=Q @ vecs[:, -1])
        sig.append(s)
        confident &= ok
    delta = float(sum(0.5 * l * (s**2 - c) for l, s, c in zip(spec.lambdas, sig, cap)))
    return GapReport(sig, cap, delta, delta / (1 + abs(g)), g, confident)


def recover_decomposition(U, sol, spec):
    """Latent summands ``W^(k) = lam_k * (Z + A*(s)) x_k (U_k U_k^T)`` as dense tensors.

    For the Hankel kind each summand is formed in the lifted space along mode
    ``2k`` and mapped back by the least-squares Hankel inverse
    ``(H* H)^{-1} H*``, i.e. anti-diagonal averaging.
    """
    parts = []
    if spec.kind == "none":
        for k in range(spec.K):
            mp = spec.omega_modes.maps[k]
            A = mp.left(U[k], sol.m)
            parts.append(spec.lambdas[k] * mp.expand_full(U[k], A))
    elif spec.kind == "nonneg":
        for k in range(spec.K):
            parts.append(spec.lambdas[k] * mode_product(sol.m, U[k] @ U[k].T, k))
    else:
        counts = duplication_counts(spec.dims, spec.constraint.tau)
        for k in range(spec.K):
            mp = spec.lift.modes[k]
            A = mp.left(U[k], sol.m)
            lifted = spec.lambdas[k] * mp.expand_full(U[k], A)
            parts.append(hankel_adjoint(lifted, spec.constraint.tau, spec.dims) / counts)
    return parts


def recover_primal(U, sol, spec):
    """Primal estimate ``sum_k W^(k)``."""
    return sum(recover_decomposition(U, sol, spec))


def lemma1_certificate(X):
    """Minimizer of ``<Theta^+ X, X>`` over unit-trace PSD ``Theta`` and its value.

    ``Theta = sqrt(X X^T) / tr(sqrt(X X^T))``; the value equals ``||X||_*^2``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w, V = np.linalg.eigh(X @ X.T)
    # eigenvalues of X X^T at rounding level belong to the null space
    keep = w > max(w.max(initial=0.0), 0.0) * max(X.shape) * np.finfo(float).eps
    root = np.where(keep, np.sqrt(np.where(keep, w, 0.0)), 0.0)
    tr = root.sum()
    if tr == 0:
        raise ValueError("certificate undefined for the zero matrix")
    theta_eigs = root / tr
    Theta = (V * theta_eigs) @ V.T
    inv = np.where(keep, 1.0 / np.where(keep, theta_eigs, 1.0), 0.0)
    Theta_pinv = (V * inv) @ V.T
    return Theta, float(np.sum((Theta_pinv @ X) * X))


def nuclear_norm(X):
    return float(np.linalg.svd(X, compute_uv=False).sum())


def primal_objective(W, spec, decomposition=None, reg_weight=1.0):
    """``C ||W_omega - Y_omega||^2`` plus, given latent summands, ``sum_k reg_weight ||.||_*^2 / lam_k``.

    For the Hankel kind the nuclear norm is taken of the mode-``2k`` unfolding
    of each summand's Hankel lift. Dense SVDs: small problems only.
    """
    W = np.asarray(W, dtype=float)
    if W.shape != spec.dims:
        raise ValueError(f"W has shape {W.shape}, problem has {spec.dims}")
    r = spec.restrict(W) - spec.y
    val = spec.C * float(r @ r)
    if decomposition is not None:
        for k, Wk in enumerate(decomposition):
            if spec.kind == "hankel":
                X = unfold(hankelize(Wk, spec.constraint.tau), 2 * k + 1)
            else:
                X = unfold(Wk, k)
            if spec.lambdas[k] > 0:
                val += reg_weight * nuclear_norm(X) ** 2 / spec.lambdas[k]
            elif np.any(X):
                return float("inf")
    return val
