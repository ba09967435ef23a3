"""Problem data and the unfolding operators shared by the solvers.

Every constraint kind is reduced to one object ``M`` whose mode unfoldings
enter the penalty ``sum_k lam_k / 2 * ||U_k^T M_(k)||^2``:

* ``none``    - ``M = Z``, values on omega;
* ``nonneg``  - ``M = Z + S``, a dense order-K tensor;
* ``hankel``  - ``M = S``, values on the lifted support, unfolded along the
  ``l_k`` modes of the order-2K lift.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .constraints import ConstraintKind, HankelLift
from .tensor_core import ModeIndex, SparseTensor, fold, unfold


class SparseModes:
    """Unfolding operators for a tensor stored as values on a fixed support."""

    dense = False

    def __init__(self, maps):
        self.maps = list(maps)

    def left(self, k, U, m):
        """``U^T M_(k)`` (compressed columns)."""
        return self.maps[k].left(U, m)

    def expand(self, k, U, A):
        """``fold_k(U A)`` restricted to the support."""
        return self.maps[k].expand(U, A)

    def times(self, k, m, B):
        """``M_(k) B`` for ``B`` given on the compressed columns."""
        return self.maps[k].times(m, B)

    def times_t(self, k, m, X):
        """``M_(k)^T X`` on the compressed columns, as a ``cols x r`` array."""
        return self.maps[k].left(X, m).T

    def gram(self, k, U):
        return self.maps[k].gram(U)

    def assembly_cost(self):
        """Stored entries of the assembled operator, summed over modes."""
        return sum(mp.npairs for mp in self.maps)


class DenseModes:
    """Unfolding operators for a dense tensor of shape ``dims``."""

    dense = True

    def __init__(self, dims):
        self.dims = tuple(dims)

    def left(self, k, U, m):
        return U.T @ unfold(m, k)

    def expand(self, k, U, A):
        return fold(U @ A, k, self.dims)

    def times(self, k, m, B):
        return unfold(m, k) @ B

    def times_t(self, k, m, X):
        return unfold(m, k).T @ X


@dataclass
class ProblemSpec:
    """A structured completion problem.

    Parameters
    ----------
    Y : SparseTensor
        Observed entries; its support is omega.
    ranks : tuple of int
        Factor ranks ``r_k``.
    lambdas : tuple of float
        Per-mode regularization weights.
    C : float
        Cost parameter of the data-fit term.
    constraint : ConstraintKind
    """

    Y: SparseTensor
    ranks: tuple
    lambdas: tuple
    C: float = 1.0
    constraint: ConstraintKind = field(default_factory=ConstraintKind)

    def __post_init__(self):
        K = self.Y.ndim
        self.ranks = tuple(int(r) for r in self.ranks)
        lam = np.broadcast_to(np.asarray(self.lambdas, dtype=float), (K,))
        self.lambdas = tuple(float(x) for x in lam)
        self.C = float(self.C)
        if len(self.ranks) != K:
            raise ValueError(f"need {K} ranks, got {len(self.ranks)}")
        if self.C <= 0:
            raise ValueError("C must be positive")
        if min(self.lambdas) < 0:
            raise ValueError("lambdas must be nonnegative")
        if self.Y.nnz == 0:
            raise ValueError("no observed entries")
        self.constraint.validate(self.dims)
        for r, n in zip(self.ranks, self.factor_rows):
            if not 1 <= r <= n:
                raise ValueError(f"rank {r} outside [1, {n}]")
        kind = self.constraint.kind
        self.omega_modes = SparseModes(ModeIndex(self.dims, self.Y.subs, k) for k in range(K))
        if kind == "hankel":
            self.lift = HankelLift(self.dims, self.Y.subs, self.constraint.tau)
            self.modes = SparseModes(self.lift.modes)
        elif kind == "nonneg":
            self.lift = None
            self.modes = DenseModes(self.dims)
        else:
            self.lift = None
            self.modes = self.omega_modes
        self._omega_lin = self.Y.linear_index()

    @property
    def dims(self):
        return self.Y.dims

    @property
    def K(self):
        return self.Y.ndim

    @property
    def kind(self):
        return self.constraint.kind

    @property
    def y(self):
        return self.Y.vals

    @property
    def factor_rows(self):
        return self.constraint.factor_rows(self.dims)

    @property
    def factor_shapes(self):
        return tuple(zip(self.factor_rows, self.ranks))

    # -- M-space helpers -------------------------------------------------

    def embed(self, z):
        """Dense tensor with ``z`` on omega."""
        out = np.zeros(int(np.prod(self.dims)))
        out[self._omega_lin] = z
        return out.reshape(self.dims, order="F")

    def restrict(self, W):
        """Values of a dense tensor on omega."""
        return np.asarray(W).ravel(order="F")[self._omega_lin]

    def qop(self, U, m, modes=None):
        """``sum_k lam_k fold_k(U_k U_k^T M_(k))`` in M-space.

        With ``modes=self.omega_modes`` the input and output are values on
        omega (the omega-block of the operator).
        """
        modes = self.modes if modes is None else modes
        out = np.zeros_like(m)
        for k in range(self.K):
            if self.lambdas[k] == 0:
                continue
            out += self.lambdas[k] * modes.expand(k, U[k], modes.left(k, U[k], m))
        return out

    def q_operator(self, U, modes=None, policy="auto"):
        """``m -> qop(U, m)`` as a callable, assembled as a sparse matrix when cheaper.

        ``policy`` is ``"matfree"``, ``"assembled"`` or ``"auto"``; ``auto``
        assembles a sparse support when the stored entries do not exceed
        ``4 * nnz * sum(r_k)``, i.e. when unfolding columns hold few entries.
        The last operator is cached per factor point.
        """
        modes = self.modes if modes is None else modes
        if policy not in ("auto", "matfree", "assembled"):
            raise ValueError(f"unknown operator policy {policy!r}")
        assemble = policy == "assembled"
        if policy == "auto" and not modes.dense:
            assemble = modes.assembly_cost() <= 4 * len(modes.maps[0].rows) * sum(self.ranks)
        if not assemble or modes.dense:
            return lambda m: self.qop(U, m, modes)
        key = (id(modes), b"".join(np.ascontiguousarray(u).tobytes() for u in U))
        cache = getattr(self, "_qcache", None)
        if cache is not None and cache[0] == key:
            return cache[1]
        A = sum(
            (self.lambdas[k] * modes.gram(k, U[k]) for k in range(self.K) if self.lambdas[k] != 0),
            sp.csr_matrix((len(modes.maps[0].rows),) * 2),
        )
        A = sp.csr_matrix(A)
        op = A.dot
        self._qcache = (key, op)
        return op

    def q_diagonal(self, U, modes=None):
        """Diagonal of :meth:`qop` (support values, or a dense tensor)."""
        modes = self.modes if modes is None else modes
        if modes.dense:
            out = np.zeros(self.dims)
            for k in range(self.K):
                shape = [1] * self.K
                shape[k] = self.dims[k]
                out = out + self.lambdas[k] * np.sum(U[k] ** 2, axis=1).reshape(shape)
            return out
        return sum(
            self.lambdas[k] * np.sum(U[k][modes.maps[k].rows] ** 2, axis=1) for k in range(self.K)
        )

    def qdot(self, U, V, m, modes=None):
        """Derivative of :meth:`qop` along ``V`` applied to ``m``."""
        modes = self.modes if modes is None else modes
        out = np.zeros_like(m)
        for k in range(self.K):
            if self.lambdas[k] == 0:
                continue
            out += self.lambdas[k] * (
                modes.expand(k, V[k], modes.left(k, U[k], m))
                + modes.expand(k, U[k], modes.left(k, V[k], m))
            )
        return out

    def penalty(self, U, m):
        """``sum_k lam_k / 2 * ||U_k^T M_(k)||^2`` and the per-mode captured energies."""
        cap = [float(np.sum(self.modes.left(k, U[k], m) ** 2)) for k in range(self.K)]
        return sum(0.5 * l * c for l, c in zip(self.lambdas, cap)), cap

    def default_lambdas(self):
        return default_lambdas(self.Y)


def default_lambdas(Y):
    """Harness default: ``lambda = K / ||Y_omega||`` split evenly, ``lam_k = lambda / K``."""
    K = Y.ndim
    lam = K / max(Y.norm(), np.finfo(float).tiny)
    return tuple([lam / K] * K)
