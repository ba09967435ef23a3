"""Finite-difference checks of the dual gradient and Hessian."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dual import euclidean_grad, euclidean_hess_vec
from .inner import SolverParams, solve_directional, solve_inner
from .manifold import DualProblem, SphereProduct

# Inner tolerances tight enough that finite differences see g, not solver noise.
TIGHT = SolverParams(cg_tol=1e-13, cg_max_iter=20000, nnls_tol=1e-13, nnls_max_iter=2000,
                     alternation_max_rounds=200, alternation_tol=1e-13)


def _shift(U, V, h):
    return [u + h * v for u, v in zip(U, V)]


def _rel(err, scale):
    return err / scale if scale > 0 else err


def gradient_error(spec, U, V, h=1e-6, params=TIGHT):
    """Relative error of a central difference of ``g`` along ``V`` against ``<grad g, V>``.

    The denominator is ``max(|<G, V>|, ||P_U G|| ||V||)``, so directions almost
    orthogonal to the gradient are judged against the gradient's size.
    """
    sol = solve_inner(U, spec, params)
    G = euclidean_grad(U, sol, spec)
    M = SphereProduct(spec.factor_shapes)
    an = M.inner(G, V)
    gp = solve_inner(_shift(U, V, h), spec, params).value
    gm = solve_inner(_shift(U, V, -h), spec, params).value
    fd = (gp - gm) / (2 * h)
    scale = max(abs(an), M.norm(M.proj(U, G)) * M.norm(V))
    return _rel(abs(fd - an), scale), fd, an


def hessian_error(spec, U, V, h=1e-5, params=TIGHT):
    """Relative error of a central difference of the Euclidean gradient against ``D grad g(U)[V]``."""
    sol = solve_inner(U, spec, params)
    ds = solve_directional(U, V, sol, spec, params)
    H = euclidean_hess_vec(U, V, sol, ds, spec)
    Up, Um = _shift(U, V, h), _shift(U, V, -h)
    Gp = euclidean_grad(Up, solve_inner(Up, spec, params), spec)
    Gm = euclidean_grad(Um, solve_inner(Um, spec, params), spec)
    fd = [(a - b) / (2 * h) for a, b in zip(Gp, Gm)]
    err = np.sqrt(sum(np.sum((a - b) ** 2) for a, b in zip(H, fd)))
    scale = np.sqrt(sum(np.sum(a**2) for a in fd))
    return _rel(err, scale)


def taylor_slope(spec, U, V, hs=None, params=TIGHT, n_fit=6):
    """Log-log slope of the second-order model error along ``t -> R(U + hV)``.

    Returns ``(slope, hs, errors)``. Steps whose error sits below the inner
    solver's noise floor are excluded, and only the ``n_fit`` smallest
    remaining steps are fitted: at larger steps the fourth-order term can
    cancel the third and bend the curve.
    """
    hs = np.logspace(-4, -1, 13) if hs is None else np.asarray(hs)
    problem = DualProblem(spec, params)
    M = problem.manifold
    ev = problem.evaluate(U)
    HV = problem.hess(ev, V)
    d1, d2 = M.inner(ev.rgrad, V), M.inner(HV, V)
    errs = []
    for h in hs:
        g = problem.cost(M.retract(U, M.lincomb(h, V)))[0]
        errs.append(abs(g - ev.g - h * d1 - 0.5 * h * h * d2))
    errs = np.array(errs)
    floor = 1e3 * np.finfo(float).eps * (1 + abs(ev.g))
    keep = np.flatnonzero(errs > floor)[:n_fit]
    if keep.size < 3:
        return float("nan"), hs, errs
    slope = np.polyfit(np.log10(hs[keep]), np.log10(errs[keep]), 1)[0]
    return float(slope), hs, errs


def random_tangent(U, rng):
    return SphereProduct([u.shape for u in U]).proj(U, [rng.standard_normal(u.shape) for u in U])


@dataclass
class DerivativeReport:
    kind: str
    grad_errors: list = field(default_factory=list)
    hess_errors: list = field(default_factory=list)
    slopes: list = field(default_factory=list)
    grad_tol: float = 1e-4
    hess_tol: float = 1e-3
    slope_min: float = 2.9

    @property
    def max_grad_error(self):
        return max(self.grad_errors, default=0.0)

    @property
    def max_hess_error(self):
        return max(self.hess_errors, default=0.0)

    @property
    def passed(self):
        ok = self.max_grad_error <= self.grad_tol and self.max_hess_error <= self.hess_tol
        slopes = [s for s in self.slopes if np.isfinite(s)]
        return ok and all(s >= self.slope_min for s in slopes)

    def lines(self):
        out = [
            f"gradient: max rel error {self.max_grad_error:.3e} (tol {self.grad_tol:g})",
        ]
        if self.hess_errors:
            out.append(f"hessian: max rel error {self.max_hess_error:.3e} (tol {self.hess_tol:g})")
        if self.slopes:
            shown = ", ".join(f"{s:.2f}" for s in self.slopes)
            out.append(f"taylor slopes: {shown} (min {self.slope_min:g})")
        out.append("PASS" if self.passed else "FAIL")
        return out


def check_derivatives(spec, n_points=3, seed=0, hessian=True, taylor=True):
    """Gradient and Hessian finite-difference suite at seeded random points.

    With ``lambda = 0`` the gradient vanishes identically and the check
    passes trivially.
    """
    rng = np.random.default_rng(seed)
    M = SphereProduct(spec.factor_shapes)
    rep = DerivativeReport(spec.kind)
    for _ in range(n_points):
        U = M.random_point(rng)
        V = random_tangent(U, rng)
        rep.grad_errors.append(gradient_error(spec, U, V)[0])
        if hessian:
            rep.hess_errors.append(hessian_error(spec, U, V))
        if taylor:
            V = M.lincomb(1.0 / max(M.norm(V), np.finfo(float).tiny), V)
            rep.slopes.append(taylor_slope(spec, U, V)[0])
    return rep
