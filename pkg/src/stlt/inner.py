"""Solvers for the strongly concave inner maximization at fixed factors.

For fixed ``U`` the inner problem is

    max_{Z = Z_omega, s}  <Z, Y> - ||Z||^2 / (4C) - sum_k lam_k / 2 ||U_k^T M_(k)||^2

where ``M`` depends on the constraint kind (see :mod:`stlt.problem`).
All solvers *minimize* the negated objective internally.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import Bounds, minimize


log = logging.getLogger(__name__)


@dataclass
class SolverParams:
    """Inner solver tolerances and iteration caps."""

    cg_tol: float = 1e-10
    cg_max_iter: int = 10000
    nnls_tol: float = 1e-10
    nnls_max_iter: int = 300
    alternation_max_rounds: int = 50
    alternation_tol: float = 1e-8
    nonneg_method: str = "lbfgsb"
    lbfgs_memory: int = 20
    lbfgs_max_iter: int = 20000
    operator: str = "auto"
    hankel_method: str = "pcg"

    def __post_init__(self):
        for name in ("cg_tol", "nnls_tol", "alternation_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("cg_max_iter", "nnls_max_iter", "alternation_max_rounds", "lbfgs_memory", "lbfgs_max_iter"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.nonneg_method not in ("lbfgsb", "alternating"):
            raise ValueError(f"unknown nonneg_method {self.nonneg_method!r}")
        if self.hankel_method not in ("pcg", "projected"):
            raise ValueError(f"unknown hankel_method {self.hankel_method!r}")
        if self.operator not in ("auto", "matfree", "assembled"):
            raise ValueError(f"unknown operator policy {self.operator!r}")

    def tightened(self, factor=0.1):
        return replace(
            self,
            cg_tol=self.cg_tol * factor,
            nnls_tol=self.nnls_tol * factor,
            alternation_tol=self.alternation_tol * factor,
        )


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool
    restarts: int = 0


def conjugate_gradient(apply_A, b, x0=None, tol=1e-10, maxiter=1000, project=None, precond=None):
    """Linear (preconditioned) CG for ``A x = b`` with ``A`` symmetric positive (semi)definite.

    With ``project`` (an orthogonal projector onto a subspace), every
    residual and operator image is projected, which runs CG on the subspace.
    ``precond`` applies an SPD approximation of ``A^{-1}``.
    Converged when ``||r|| <= tol * ||b||``. A direction of non-positive
    curvature restarts from the (preconditioned) residual.
    """
    P = project if project is not None else (lambda v: v)
    Minv = precond if precond is not None else (lambda v: v)
    b = P(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return CGResult(np.zeros_like(b), 0, 0.0, True)
    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = P(np.array(x0, dtype=float))
        r = b - P(apply_A(x))
    target = tol * bnorm
    rnorm = np.linalg.norm(r)
    zr = Minv(r)
    rz = r @ zr
    p = zr.copy()
    restarts = 0
    it = 0
    while it < maxiter and rnorm > target:
        Ap = P(apply_A(p))
        pAp = p @ Ap
        if pAp <= 0:
            if restarts > 5 or np.array_equal(p, zr):
                break
            restarts += 1
            p = zr.copy()
            continue
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rnorm = np.linalg.norm(r)
        zr = Minv(r)
        rz_new = r @ zr
        p = zr + (rz_new / rz) * p
        rz = rz_new
        it += 1
    return CGResult(x, it, float(rnorm), rnorm <= target, restarts)


@dataclass
class InnerSolution:
    """Maximizer of the inner problem at a fixed factor point.

    Attributes
    ----------
    z : ndarray
        ``Z`` on omega.
    s : ndarray or None
        Multiplier: a dense nonnegative tensor (nonneg) or values on the
        lifted support (hankel).
    m : ndarray
        The tensor whose unfoldings enter the penalty.
    value : float
        ``g(U)``.
    residual : float
        Final stationarity (KKT) residual.
    """

    kind: str
    z: np.ndarray
    s: np.ndarray | None
    m: np.ndarray
    value: float
    residual: float
    iterations: int
    converged: bool
    feasibility: float = 0.0
    complementarity: float = 0.0
    free: np.ndarray | None = None
    degenerate: int = 0
    messages: list = field(default_factory=list)

    def Z(self, spec):
        return spec.Y.with_values(self.z)

    def S(self, spec):
        """The multiplier as a tensor: dense (nonneg) or sparse on the lift (hankel)."""
        if self.kind == "hankel":
            return spec.lift.as_sparse(self.s)
        return self.s


def inner_value(spec, U, z, m):
    pen, _ = spec.penalty(U, m)
    return float(z @ spec.y - z @ z / (4 * spec.C) - pen)


# -- unconstrained -------------------------------------------------------


def _none_operator(spec, U, policy="auto"):
    c = 1.0 / (2 * spec.C)
    Q = spec.q_operator(U, spec.omega_modes, policy)
    return lambda v: c * v + Q(v)


def solve_inner_none(U, spec, params=None, warm=None):
    """Inner maximizer without structural constraint.

    Solves ``Z / (2C) + P_omega(sum_k lam_k fold_k(U_k U_k^T Z_(k))) = Y_omega``
    by linear CG.
    """
    params = params or SolverParams()
    A = _none_operator(spec, U, params.operator)
    x0 = None if warm is None else warm.z
    res = conjugate_gradient(A, spec.y, x0, params.cg_tol, params.cg_max_iter)
    z = res.x
    sol = InnerSolution("none", z, None, z, inner_value(spec, U, z, z), res.residual, res.iterations, res.converged)
    if not res.converged:
        sol.messages.append(f"CG stopped after {res.iterations} iterations, residual {res.residual:.3e}")
    return sol


# -- nonnegative ---------------------------------------------------------


def _nonneg_objective(spec, U, z, S):
    M = spec.embed(z) + S
    W = spec.qop(U, M)
    f = -z @ spec.y + z @ z / (4 * spec.C) + 0.5 * float(np.vdot(M, W))
    return f, M, W


def _nonneg_kkt(spec, z, S, W):
    gz = -spec.y + z / (2 * spec.C) + spec.restrict(W)
    pg = np.minimum(S, W)
    return float(np.sqrt(gz @ gz + np.vdot(pg, pg))), float(np.sum(S * np.maximum(0.0, -W)))


def nnls_projected_gradient(spec, U, base, S0, tol, maxiter, memory=10):
    """``min_{S >= 0} 1/2 <base + S, Q(base + S)>`` by projected gradient.

    Barzilai-Borwein steps with a nonmonotone (max over the last ``memory``
    values) Armijo line search. Returns ``(S, iterations)``.
    """
    S = np.maximum(S0, 0.0)
    M = base + S
    G = spec.qop(U, M)
    f = 0.5 * float(np.vdot(M, G))
    hist = [f]
    step = 1.0 / max(sum(spec.lambdas), np.finfo(float).tiny)
    it = 0
    for it in range(1, maxiter + 1):
        pg = S - np.maximum(S - G, 0.0)
        if np.linalg.norm(pg) <= tol:
            it -= 1
            break
        t = step
        fref = max(hist[-memory:])
        for _ in range(40):
            Sn = np.maximum(S - t * G, 0.0)
            d = Sn - S
            Mn = base + Sn
            Gn = spec.qop(U, Mn)
            fn = 0.5 * float(np.vdot(Mn, Gn))
            if fn <= fref + 1e-4 * float(np.vdot(G, d)):
                break
            t *= 0.5
        dy = Gn - G
        sy = float(np.vdot(d, dy))
        step = float(np.vdot(d, d)) / sy if sy > 0 else step * 2
        step = min(max(step, 1e-12), 1e12)
        S, G, f = Sn, Gn, fn
        hist.append(f)
    return S, it


def _face_operator(spec, U, free):
    c = 1.0 / (2 * spec.C)
    nz = spec.Y.nnz

    def apply(x):
        z, sf = x[:nz], x[nz:]
        S = np.zeros(spec.dims)
        S[free] = sf
        Wd = spec.qop(U, spec.embed(z) + S)
        return np.concatenate([c * z + spec.restrict(Wd), Wd[free]])

    return apply


def _face_refine(spec, U, z, S, W, params):
    """One CG solve on the current face, then a projected search back to S >= 0."""
    free = (S > 0) | (W < 0)
    nz = spec.Y.nnz
    apply = _face_operator(spec, U, free)
    b = np.concatenate([spec.y, np.zeros(int(free.sum()))])
    x0 = np.concatenate([z, S[free]])
    res = conjugate_gradient(apply, b, x0, params.cg_tol, params.cg_max_iter)
    f0, _, _ = _nonneg_objective(spec, U, z, S)
    t = 1.0
    for _ in range(30):
        x = x0 + t * (res.x - x0)
        zt = x[:nz]
        St = np.zeros(spec.dims)
        St[free] = np.maximum(x[nz:], 0.0)
        ft, _, Wt = _nonneg_objective(spec, U, zt, St)
        if ft <= f0:
            return zt, St, Wt, res.iterations
        t *= 0.5
    return z, S, W, res.iterations


def _nonneg_solution(spec, U, z, S, iters, tol, messages=()):
    M = spec.embed(z) + S
    W = spec.qop(U, M)
    kkt, comp = _nonneg_kkt(spec, z, S, W)
    sol = InnerSolution(
        "nonneg", z, S, M, inner_value(spec, U, z, M), kkt, iters, kkt <= tol, complementarity=comp,
    )
    sol.messages.extend(messages)
    return sol


def split_multiplier(spec, M):
    """``(z, S)`` with ``z = min(2C y, M_omega)`` and ``S = M - Z >= 0``."""
    z = np.minimum(2 * spec.C * spec.y, spec.restrict(M))
    S = np.array(M, dtype=float)
    S.ravel(order="F")[spec._omega_lin] -= z
    return z, np.maximum(S, 0.0)


def solve_inner_nonneg_lbfgsb(U, spec, params=None, warm=None):
    """Inner maximizer under ``W >= 0`` as one bound-constrained problem in ``M = Z + S``.

    For fixed ``M`` the best ``Z`` is ``min(2C y, M_omega)``, which leaves

        min_M  sum_omega h(M_i) + 1/2 <M, Q M>,   M_i >= 0 off omega,

    with ``h`` a convex, continuously differentiable piecewise quadratic.
    Solved by L-BFGS-B, warm-started from the previous ``M``.
    """
    params = params or SolverParams()
    dims = spec.dims
    N = int(np.prod(dims))
    om = spec._omega_lin
    y, C = spec.y, spec.C
    cap = 2 * C * y
    lower = np.zeros(N)
    lower[om] = -np.inf
    tol = params.alternation_tol * (1 + np.linalg.norm(y))

    def fun(v):
        W = spec.qop(U, v.reshape(dims, order="F")).ravel(order="F")
        mo = v[om]
        z = np.minimum(cap, mo)
        grad = W.copy()
        grad[om] += np.minimum(mo / (2 * C) - y, 0.0)
        return float(np.sum(z * z / (4 * C) - z * y) + 0.5 * v @ W), grad

    if warm is not None and warm.m is not None:
        x0 = np.maximum(np.asarray(warm.m, dtype=float).ravel(order="F"), lower)
    else:
        x0 = np.zeros(N)
        x0[om] = cap
    res = minimize(
        fun, x0, jac=True, method="L-BFGS-B", bounds=Bounds(lower, np.inf),
        options={"maxcor": params.lbfgs_memory, "gtol": tol / np.sqrt(N), "ftol": 0.0,
                 "maxiter": params.lbfgs_max_iter, "maxfun": 2 * params.lbfgs_max_iter},
    )
    M = np.maximum(res.x, lower).reshape(dims, order="F")
    z, S = split_multiplier(spec, M)
    sol = _nonneg_solution(spec, U, z, S, int(res.nfev), tol)
    if not sol.converged:
        sol.messages.append(f"L-BFGS-B stopped ({res.message}), KKT residual {sol.residual:.3e}")
    return sol


def solve_inner_nonneg(U, spec, params=None, warm=None):
    """Inner maximizer under ``W >= 0``; dispatches on ``params.nonneg_method``."""
    params = params or SolverParams()
    if params.nonneg_method == "lbfgsb":
        return solve_inner_nonneg_lbfgsb(U, spec, params, warm)
    return solve_inner_nonneg_alternating(U, spec, params, warm)


def solve_inner_nonneg_alternating(U, spec, params=None, warm=None):
    """Inner maximizer under ``W >= 0``: alternate CG over ``Z`` and NNLS over ``S``.

    Each round (i) solves the least-squares system for ``Z`` with ``S`` fixed,
    (ii) solves the NNLS problem for ``S`` with ``Z`` fixed, and (iii) runs a
    joint CG solve on the face ``{S_i = 0, grad_i > 0}`` identified so far.
    Stops once the joint KKT residual is below
    ``alternation_tol * (1 + ||Y||)``.
    """
    params = params or SolverParams()
    A = _none_operator(spec, U, params.operator)
    if warm is not None:
        z, S = warm.z.copy(), warm.s.copy()
    else:
        z, S = np.zeros(spec.Y.nnz), np.zeros(spec.dims)
    tol = params.alternation_tol * (1 + np.linalg.norm(spec.y))
    iters = 0
    f, M, W = _nonneg_objective(spec, U, z, S)
    kkt, comp = _nonneg_kkt(spec, z, S, W)
    rounds = 0
    while kkt > tol and rounds < params.alternation_max_rounds:
        rounds += 1
        rhs = spec.y - spec.restrict(spec.qop(U, S))
        res = conjugate_gradient(A, rhs, z, params.cg_tol, params.cg_max_iter)
        z = res.x
        iters += res.iterations
        S, it = nnls_projected_gradient(spec, U, spec.embed(z), S, params.nnls_tol, params.nnls_max_iter)
        iters += it
        f, M, W = _nonneg_objective(spec, U, z, S)
        z, S, W, it = _face_refine(spec, U, z, S, W, params)
        iters += it
        kkt, comp = _nonneg_kkt(spec, z, S, W)
    sol = _nonneg_solution(spec, U, z, S, iters, tol)
    if not sol.converged:
        sol.messages.append(f"alternation stopped after {rounds} rounds, KKT residual {kkt:.3e}")
    return sol


# -- Hankel --------------------------------------------------------------


def _hankel_system(spec, U, policy="auto"):
    """Stacked ``(z, s)`` operator and the orthogonal projector onto ``H*(S) = Z``."""
    lift = spec.lift
    nz = spec.Y.nnz
    c = 1.0 / (2 * spec.C)
    Q = spec.q_operator(U, policy=policy)

    def apply(x):
        return np.concatenate([c * x[:nz], Q(x[nz:])])

    def project(x):
        z, s = lift.project(x[:nz], x[nz:])
        return np.concatenate([z, s])

    return apply, project


def _hankel_reduced(spec, U, policy="auto"):
    """Coupled system in ``s`` alone (``z = H*(s)`` eliminated) and its preconditioner.

    The operator is ``H H* / (2C) + Q``. Duplicates of one observed entry
    never share an unfolding column, so within such a block ``Q`` is
    diagonal and the block of the operator is ``diag(d) + 11^T / (2C)``;
    the preconditioner inverts these blocks exactly (Sherman-Morrison).
    """
    lift = spec.lift
    c = 1.0 / (2 * spec.C)
    Q = spec.q_operator(U, policy=policy)
    d = spec.q_diagonal(U)
    d = np.maximum(d, 1e-8 * max(float(d.max(initial=0.0)), c))
    dinv = 1.0 / d
    denom = 1.0 / c + lift.aggregate(dinv)

    def apply(s):
        return c * lift.spread(lift.aggregate(s)) + Q(s)

    def precond(r):
        t = dinv * r
        return t - dinv * lift.spread(lift.aggregate(t) / denom)

    return apply, precond


def solve_inner_hankel(U, spec, params=None, warm=None):
    """Inner maximizer under the Hankel coupling ``H*(S) = Z``.

    Default (``hankel_method="pcg"``): preconditioned CG over ``s`` with
    ``Z = H*(S)`` substituted, so every iterate is exactly feasible. This is
    the projected CG over the stacked ``(Z, S)`` written in coordinates of
    the coupling subspace, with a block-Jacobi preconditioner in place of
    the implicit ``(I + H H*)^{-1}``. ``hankel_method="projected"`` runs the
    stacked projected CG itself.
    """
    params = params or SolverParams()
    lift = spec.lift
    if params.hankel_method == "projected":
        nz = spec.Y.nnz
        apply, project = _hankel_system(spec, U, params.operator)
        b = np.concatenate([spec.y, np.zeros(lift.size)])
        x0 = None if warm is None else np.concatenate([warm.z, warm.s])
        res = conjugate_gradient(apply, b, x0, params.cg_tol, params.cg_max_iter, project)
        x = project(res.x)
        z, s = x[:nz], x[nz:]
    else:
        apply, precond = _hankel_reduced(spec, U, params.operator)
        x0 = None if warm is None else warm.s
        res = conjugate_gradient(apply, lift.spread(spec.y), x0, params.cg_tol, params.cg_max_iter,
                                 precond=precond)
        s = res.x
        z = lift.aggregate(s)
    feas = float(np.linalg.norm(lift.aggregate(s) - z))
    sol = InnerSolution(
        "hankel", z, s, s, inner_value(spec, U, z, s), res.residual, res.iterations, res.converged,
        feasibility=feas,
    )
    if res.restarts:
        sol.messages.append(f"CG restarted {res.restarts} times on non-positive curvature")
    if not res.converged:
        sol.messages.append(f"{params.hankel_method} CG stopped after {res.iterations} iterations, "
                            f"residual {res.residual:.3e}")
    return sol


SOLVERS = {"none": solve_inner_none, "nonneg": solve_inner_nonneg, "hankel": solve_inner_hankel}


def solve_inner(U, spec, params=None, warm=None):
    """Dispatch on the constraint kind of ``spec``."""
    return SOLVERS[spec.kind](U, spec, params, warm)


# -- directional derivative of the maximizer ------------------------------


@dataclass
class Directional:
    """Derivative of the inner maximizer along a tangent direction."""

    z: np.ndarray
    s: np.ndarray | None
    m: np.ndarray
    iterations: int
    converged: bool
    degenerate: int = 0


def solve_directional(U, V, sol, spec, params=None):
    """Differentiate the inner optimality system along ``V``.

    For the nonnegative kind the active set ``{S_i = 0, grad_i > 0}`` is held
    fixed; indices with ``S_i = 0`` and a vanishing gradient are counted as
    degenerate and treated as free.
    """
    params = params or SolverParams()
    nz = spec.Y.nnz
    if spec.kind == "none":
        rhs = -spec.qdot(U, V, sol.m, spec.omega_modes)
        res = conjugate_gradient(_none_operator(spec, U, params.operator), rhs, None, params.cg_tol, params.cg_max_iter)
        return Directional(res.x, None, res.x, res.iterations, res.converged)
    if spec.kind == "hankel":
        rhs = -spec.qdot(U, V, sol.m)
        if params.hankel_method == "projected":
            apply, project = _hankel_system(spec, U, params.operator)
            res = conjugate_gradient(apply, np.concatenate([np.zeros(nz), rhs]), None, params.cg_tol,
                                     params.cg_max_iter, project)
            x = project(res.x)
            return Directional(x[:nz], x[nz:], x[nz:], res.iterations, res.converged)
        apply, precond = _hankel_reduced(spec, U, params.operator)
        res = conjugate_gradient(apply, rhs, None, params.cg_tol, params.cg_max_iter, precond=precond)
        sd = res.x
        return Directional(spec.lift.aggregate(sd), sd, sd, res.iterations, res.converged)
    W = spec.qop(U, sol.m)
    scale = max(float(np.abs(W).max()), 1.0)
    thresh = 1e3 * np.finfo(float).eps * scale
    degenerate = (sol.s <= 0) & (np.abs(W) <= thresh)
    free = (sol.s > 0) | (W <= thresh)
    Wdot = spec.qdot(U, V, sol.m)
    rhs = -np.concatenate([spec.restrict(Wdot), Wdot[free]])
    res = conjugate_gradient(_face_operator(spec, U, free), rhs, None, params.cg_tol, params.cg_max_iter)
    zdot = res.x[:nz]
    Sdot = np.zeros(spec.dims)
    Sdot[free] = res.x[nz:]
    n_deg = int(degenerate.sum())
    if n_deg:
        log.debug("directional solve: %d degenerate multiplier entries treated as free", n_deg)
    return Directional(zdot, Sdot, spec.embed(zdot) + Sdot, res.iterations, res.converged, n_deg)
