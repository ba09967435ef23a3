"""Product of unit-Frobenius spheres and the outer Riemannian solvers."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .dual import GapReport, duality_gap, euclidean_grad, euclidean_hess_vec
from .inner import SolverParams, solve_directional, solve_inner

log = logging.getLogger(__name__)


class SphereProduct:
    """``{(U_1, ..., U_K) : ||U_k||_F = 1}`` with the embedded trace metric."""

    def __init__(self, shapes):
        self.shapes = [tuple(s) for s in shapes]

    @property
    def dim(self):
        return sum(n * r - 1 for n, r in self.shapes)

    def random_point(self, rng):
        """Orthonormal columns from a seeded Gaussian QR, scaled to unit norm."""
        U = []
        for n, r in self.shapes:
            Q, R = np.linalg.qr(rng.standard_normal((n, r)))
            Q = Q * np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))
            U.append(Q / np.linalg.norm(Q))
        return U

    @staticmethod
    def inner(A, B):
        return float(sum(np.vdot(a, b) for a, b in zip(A, B)))

    def norm(self, A):
        return float(np.sqrt(self.inner(A, A)))

    @staticmethod
    def proj(U, V):
        """Tangent projection ``V_k - <U_k, V_k> U_k``."""
        return [v - np.vdot(u, v) * u for u, v in zip(U, V)]

    @staticmethod
    def retract(U, X):
        out = []
        for u, x in zip(U, X):
            y = u + x
            ny = np.linalg.norm(y)
            if ny == 0:
                raise ValueError("retraction through the origin")
            out.append(y / ny)
        return out

    def transport(self, U_new, V):
        return self.proj(U_new, V)

    def egrad2rgrad(self, U, G):
        return self.proj(U, G)

    def ehess2rhess(self, U, G, H, V):
        """Riemannian Hessian from the Euclidean gradient ``G`` and ``D grad[V] = H``."""
        return [h - np.vdot(u, h) * u - np.vdot(u, g) * v for u, g, h, v in zip(U, G, H, V)]

    @staticmethod
    def lincomb(a, A, b=0.0, B=None):
        if B is None:
            return [a * x for x in A]
        return [a * x + b * y for x, y in zip(A, B)]

    def zeros(self):
        return [np.zeros(s) for s in self.shapes]


@dataclass
class Evaluation:
    U: list
    sol: object
    g: float
    egrad: list
    rgrad: list
    grad_norm: float


class DualProblem:
    """Cost, gradient and Hessian callbacks for ``min_U g(U)``.

    Inner solves are warm-started from the most recent inner solution.
    """

    def __init__(self, spec, params=None):
        self.spec = spec
        self.params = params or SolverParams()
        self.manifold = SphereProduct(spec.factor_shapes)
        self._warm = None
        self.inner_iters = 0
        self.hess_calls = 0

    def evaluate(self, U):
        sol = solve_inner(U, self.spec, self.params, self._warm)
        self.inner_iters += sol.iterations
        self._warm = sol
        G = euclidean_grad(U, sol, self.spec)
        R = self.manifold.egrad2rgrad(U, G)
        return Evaluation(U, sol, sol.value, G, R, self.manifold.norm(R))

    def cost(self, U):
        sol = solve_inner(U, self.spec, self.params, self._warm)
        self.inner_iters += sol.iterations
        return sol.value, sol

    def hess(self, ev, V):
        ds = solve_directional(ev.U, V, ev.sol, self.spec, self.params)
        self.inner_iters += ds.iterations
        self.hess_calls += 1
        H = euclidean_hess_vec(ev.U, V, ev.sol, ds, self.spec)
        return self.manifold.ehess2rhess(ev.U, ev.egrad, H, V)

    def tighten(self):
        self.params = self.params.tightened(0.1)


@dataclass
class IterationRecord:
    iter: int
    g_value: float
    grad_norm: float
    duality_gap: float
    rel_gap: float
    inner_iters: int
    wall_ms: float
    feasibility: float = 0.0
    extra: dict = field(default_factory=dict)

    CSV_FIELDS = ("iter", "g_value", "grad_norm", "duality_gap", "rel_gap", "inner_iters", "wall_ms")


@dataclass
class OuterState:
    """Mutable state of the outer loop."""

    ev: Evaluation
    direction: list | None = None
    prev_grad: list | None = None
    step: float = 1.0
    radius: float = 0.1
    iteration: int = 1
    failures: int = 0
    stalled: int = 0
    status: str = "running"
    last: dict = field(default_factory=dict)


def rcg_step(state, problem, c=1e-4, shrink=0.5, max_backtracks=30):
    """One Riemannian CG iteration (PR+ with projection transport, Armijo backtracking)."""
    M = problem.manifold
    ev = state.ev
    g = ev.rgrad
    if ev.grad_norm == 0:
        state.status = "converged"
        return state
    if state.direction is None or state.prev_grad is None:
        d = M.lincomb(-1.0, g)
    else:
        gp = M.transport(ev.U, state.prev_grad)
        dp = M.transport(ev.U, state.direction)
        beta = max(0.0, M.inner(g, M.lincomb(1.0, g, -1.0, gp)) / M.inner(state.prev_grad, state.prev_grad))
        d = M.lincomb(-1.0, g, beta, dp)
        if M.inner(d, g) >= 0:
            d = M.lincomb(-1.0, g)
    slope = M.inner(g, d)
    t = state.step
    accepted = None
    for _ in range(max_backtracks):
        try:
            U_new = M.retract(ev.U, M.lincomb(t, d))
        except ValueError:
            t *= shrink
            continue
        g_new, _ = problem.cost(U_new)
        if g_new <= ev.g + c * t * slope:
            accepted = U_new
            break
        t *= shrink
    if accepted is None or not g_new < ev.g:
        state.failures += 1
        state.direction = None
        state.prev_grad = None
        state.step = max(t, 1e-12)
        problem.tighten()
        state.last = {"accepted": False, "step": t}
        if state.failures >= 30:
            state.status = "line_search_failed"
        return state
    state.failures = 0
    new_ev = problem.evaluate(accepted)
    state.prev_grad = g
    state.direction = d
    state.step = 2 * t
    state.last = {"accepted": True, "step": t, "decrease": ev.g - new_ev.g}
    state.ev = new_ev
    return state


def truncated_cg(problem, ev, radius, theta=1.0, kappa=0.1, maxiter=None):
    """Steihaug-Toint truncated CG on the trust-region model at ``ev``.

    Returns ``(eta, H eta, hit_boundary, iterations)``.
    """
    M = problem.manifold
    g = ev.rgrad
    maxiter = maxiter or M.dim
    eta = M.zeros()
    Heta = M.zeros()
    r = [x.copy() for x in g]
    r0 = M.norm(r)
    z = r
    d = M.lincomb(-1.0, z)
    rz = M.inner(r, z)
    e_Pe = 0.0
    e_Pd = 0.0
    d_Pd = rz
    for j in range(maxiter):
        Hd = problem.hess(ev, d)
        dHd = M.inner(d, Hd)
        alpha = rz / dHd if dHd != 0 else np.inf
        e_Pe_new = e_Pe + 2 * alpha * e_Pd + alpha**2 * d_Pd
        if dHd <= 0 or e_Pe_new >= radius**2:
            tau = (-e_Pd + np.sqrt(e_Pd**2 + d_Pd * (radius**2 - e_Pe))) / d_Pd
            eta = M.lincomb(1.0, eta, tau, d)
            Heta = M.lincomb(1.0, Heta, tau, Hd)
            return eta, Heta, True, j + 1
        e_Pe = e_Pe_new
        eta = M.lincomb(1.0, eta, alpha, d)
        Heta = M.lincomb(1.0, Heta, alpha, Hd)
        r = M.lincomb(1.0, r, alpha, Hd)
        r = M.proj(ev.U, r)
        rn = M.norm(r)
        if rn <= r0 * min(r0**theta, kappa):
            return eta, Heta, False, j + 1
        z = r
        rz_new = M.inner(r, z)
        beta = rz_new / rz
        rz = rz_new
        d = M.proj(ev.U, M.lincomb(-1.0, z, beta, d))
        e_Pd = beta * (e_Pd + alpha * d_Pd)
        d_Pd = rz + beta**2 * d_Pd
    return eta, Heta, False, maxiter


def model_decrease(M, g, eta, Heta):
    return -(M.inner(g, eta) + 0.5 * M.inner(eta, Heta))


def cauchy_point(problem, ev, radius):
    """Minimizer of the model along ``-grad`` inside the trust region."""
    M = problem.manifold
    g = ev.rgrad
    gn = ev.grad_norm
    Hg = problem.hess(ev, g)
    gHg = M.inner(g, Hg)
    t = radius / gn
    if gHg > 0:
        t = min(t, gn**2 / gHg)
    return M.lincomb(-t, g), M.lincomb(-t, Hg)


def rtr_step(state, problem, max_radius, rho_accept=0.1, tcg_maxiter=None):
    """One Riemannian trust-region iteration."""
    M = problem.manifold
    ev = state.ev
    if ev.grad_norm == 0:
        state.status = "converged"
        return state
    eta, Heta, boundary, inner = truncated_cg(problem, ev, state.radius, maxiter=tcg_maxiter)
    mdec = model_decrease(M, ev.rgrad, eta, Heta)
    used_cauchy = False
    if not mdec > 0:
        eta, Heta = cauchy_point(problem, ev, state.radius)
        mdec = model_decrease(M, ev.rgrad, eta, Heta)
        boundary = M.norm(eta) >= state.radius * (1 - 1e-12)
        used_cauchy = True
    try:
        U_new = M.retract(ev.U, eta)
        g_new, _ = problem.cost(U_new)
    except ValueError:
        U_new, g_new = None, np.inf
    reg = 1e3 * np.finfo(float).eps * max(1.0, abs(ev.g))
    rho = ((ev.g - g_new) + reg) / (mdec + reg)
    accepted = rho > rho_accept and U_new is not None
    state.last = {
        "rho": float(rho), "radius": state.radius, "model_decrease": float(mdec),
        "actual_decrease": float(ev.g - g_new), "accepted": bool(accepted), "tcg_iters": inner,
        "boundary": bool(boundary), "cauchy": used_cauchy, "step_norm": M.norm(eta),
    }
    if rho < rho_accept:
        state.radius *= 0.25
    elif rho > 0.75 and boundary:
        state.radius = min(2 * state.radius, max_radius)
    if accepted:
        state.ev = problem.evaluate(U_new)
    elif state.radius < 1e-14:
        state.status = "radius_collapsed"
    return state


@dataclass
class OuterResult:
    U: list
    sol: object
    history: list
    status: str
    evaluation: Evaluation
    gap: GapReport


def _record(t, ev, problem, t0, inner_before):
    gap = duality_gap(ev.U, ev.sol, problem.spec)
    rec = IterationRecord(
        iter=t, g_value=ev.g, grad_norm=ev.grad_norm, duality_gap=gap.delta, rel_gap=max(gap.rel_gap, 0.0),
        inner_iters=problem.inner_iters - inner_before, wall_ms=(time.perf_counter() - t0) * 1e3,
        feasibility=ev.sol.feasibility,
    )
    rec.extra["rel_feasibility"] = ev.sol.feasibility / max(float(np.linalg.norm(ev.sol.z)), np.finfo(float).tiny)
    rec.extra["gap_confident"] = gap.confident
    rec.extra["raw_rel_gap"] = gap.rel_gap
    return rec, gap


def default_solver(kind):
    """RTR for Hankel, RCG otherwise."""
    return "rtr" if kind == "hankel" else "rcg"


def outer_solve(spec, solver=None, eps=1e-6, max_iters=200, seed=0, params=None, U0=None,
                callback=None, stagnation_window=5, tcg_maxiter=None, max_time=None):
    """Minimize ``g`` over the sphere product.

    Each iteration solves the inner problem at the current point, logs cost,
    gradient norm and duality gap, checks termination and updates ``U`` with
    a Riemannian CG or trust-region step.

    ``max_time`` is a wall-clock budget in seconds, checked between
    iterations (status ``"time_limit"``). A run cut short by it is not
    reproducible, so it is off by default.

    Returns
    -------
    OuterResult
        ``history`` holds one :class:`IterationRecord` per evaluated iterate,
        starting with the initial point as iteration 1.
    """
    solver = solver or default_solver(spec.kind)
    if solver not in ("rcg", "rtr"):
        raise ValueError(f"unknown solver {solver!r}")
    problem = DualProblem(spec, params)
    M = problem.manifold
    rng = np.random.default_rng(seed)
    U = M.random_point(rng) if U0 is None else [np.array(u, dtype=float) for u in U0]
    t0 = time.perf_counter()
    ev = problem.evaluate(U)
    state = OuterState(ev=ev, radius=0.1)
    max_radius = 2 * np.sqrt(spec.K)
    history = []
    rec, gap = _record(1, ev, problem, t0, 0)
    history.append(rec)
    if callback:
        callback(rec)
    status = "max_iters"
    while True:
        if state.ev.grad_norm <= eps:
            status = "converged"
            break
        if state.iteration > max_iters:
            status = "max_iters"
            break
        if max_time is not None and time.perf_counter() - t0 > max_time:
            status = "time_limit"
            break
        inner_before = problem.inner_iters
        t_iter = time.perf_counter()
        g_prev = state.ev.g
        prev_ev = state.ev
        if solver == "rcg":
            state = rcg_step(state, problem)
        else:
            state = rtr_step(state, problem, max_radius, tcg_maxiter=tcg_maxiter)
        state.iteration += 1
        if state.ev is not prev_ev:
            rec, gap = _record(state.iteration, state.ev, problem, t_iter, inner_before)
        else:
            rec = IterationRecord(
                state.iteration, history[-1].g_value, history[-1].grad_norm, history[-1].duality_gap,
                history[-1].rel_gap, problem.inner_iters - inner_before, (time.perf_counter() - t_iter) * 1e3,
                history[-1].feasibility,
            )
            # a rejected step leaves the iterate unchanged
            rec.extra.update({k: history[-1].extra[k] for k in ("rel_feasibility", "gap_confident", "raw_rel_gap")})
        rec.extra.update(state.last)
        history.append(rec)
        if callback:
            callback(rec)
        if state.status != "running":
            status = state.status
            break
        if state.ev is not prev_ev:
            if abs(g_prev - state.ev.g) < 1e-12 * (1 + abs(state.ev.g)):
                state.stalled += 1
                if state.stalled >= stagnation_window:
                    status = "stagnated"
                    break
            else:
                state.stalled = 0
    log.info("outer solve finished: %s after %d records", status, len(history))
    return OuterResult(state.ev.U, state.ev.sol, history, status, state.ev, gap)
