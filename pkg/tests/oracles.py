"""Dense reference solutions of the inner problem, built from dense unfoldings only."""
import numpy as np

from stlt.tensor_core import fold, unfold


def _dense_q(dims, U, lambdas, modes):
    def apply(T):
        return sum(l * fold(u @ (u.T @ unfold(T, k)), k, dims) for l, u, k in zip(lambdas, U, modes))

    return apply


def q_matrix_on_support(dims, lin, U, lambdas, modes):
    """Dense matrix of ``m -> restrict(sum_k lam_k fold(U_k U_k^T unfold(embed(m), mode_k)))``."""
    apply = _dense_q(dims, U, lambdas, modes)
    N = int(np.prod(dims))
    cols = []
    for i in lin:
        e = np.zeros(N)
        e[i] = 1.0
        cols.append(apply(e.reshape(dims, order="F")).ravel(order="F")[lin])
    return np.array(cols).T


def none_oracle(spec, U):
    """``g = 1/2 y^T A^{-1} y`` with ``A = I / (2C) + Q_omega``."""
    lin = spec.Y.linear_index()
    Q = q_matrix_on_support(spec.dims, lin, U, spec.lambdas, range(spec.K))
    A = np.eye(len(lin)) / (2 * spec.C) + Q
    z = np.linalg.solve(A, spec.y)
    return 0.5 * float(spec.y @ z), z


def hankel_oracle(spec, U):
    """Dense KKT system of ``max <z,y> - |z|^2/4C - 1/2 s^T Q s`` subject to ``H*(s) = z``."""
    lift = spec.lift
    ldims = lift.lifted_dims
    lin = np.ravel_multi_index(tuple(lift.subs.T), ldims, order="F")
    Q = q_matrix_on_support(ldims, lin, U, spec.lambdas, [2 * k + 1 for k in range(spec.K)])
    nz, ns = spec.Y.nnz, lift.size
    B = np.zeros((nz, ns))
    B[lift.src, np.arange(ns)] = 1.0
    D = np.zeros((nz + ns, nz + ns))
    D[:nz, :nz] = np.eye(nz) / (2 * spec.C)
    D[nz:, nz:] = Q
    Cm = np.hstack([-np.eye(nz), B])
    KKT = np.block([[D, Cm.T], [Cm, np.zeros((nz, nz))]])
    rhs = np.concatenate([spec.y, np.zeros(ns + nz)])
    x = np.linalg.lstsq(KKT, rhs, rcond=None)[0]
    z, s = x[:nz], x[nz:nz + ns]
    val = float(z @ spec.y - z @ z / (4 * spec.C) - 0.5 * s @ Q @ s)
    return val, z, s


def nonneg_oracle(spec, U, iters=20000):
    """Accelerated projected gradient ascent over ``(z, S >= 0)`` on the dense quadratic."""
    dims = spec.dims
    N = int(np.prod(dims))
    lin = spec.Y.linear_index()
    nz = len(lin)
    Q = q_matrix_on_support(dims, np.arange(N), U, spec.lambdas, range(spec.K))
    P = np.zeros((N, nz + N))
    P[lin, np.arange(nz)] = 1.0
    P[:, nz:] = np.eye(N)
    H = P.T @ Q @ P
    H[:nz, :nz] += np.eye(nz) / (2 * spec.C)
    b = np.concatenate([spec.y, np.zeros(N)])
    L = np.linalg.eigvalsh(H).max()

    def proj(x):
        x = x.copy()
        x[nz:] = np.maximum(x[nz:], 0.0)
        return x

    x = np.zeros(nz + N)
    yk, t = x.copy(), 1.0
    for _ in range(iters):
        xn = proj(yk - (H @ yk - b) / L)
        tn = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        yk = xn + ((t - 1) / tn) * (xn - x)
        x, t = xn, tn
    val = float(b @ x - 0.5 * x @ H @ x)
    return val, x[:nz], x[nz:].reshape(dims, order="F")
