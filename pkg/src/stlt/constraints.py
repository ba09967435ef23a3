"""Structural maps: nonnegativity (identity) and the multiway Hankel transform.

The Hankel transform of an order-K tensor with window sizes ``tau`` is the
order-2K tensor ``H[j_1, l_1, ..., j_K, l_K] = W[j_1 + l_1, ..., j_K + l_K]``
(0-based here), with ``j_k < tau_k`` and ``l_k < n_k - tau_k + 1``.
Its adjoint scatter-adds every lifted entry back onto its source index.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_core import ModeIndex, SparseTensor, TensorShapeError

KINDS = ("none", "nonneg", "hankel")


@dataclass(frozen=True)
class ConstraintKind:
    """Which structural map ``A`` is active.

    ``tau`` is only meaningful (and required) for ``kind == "hankel"``.
    """

    kind: str = "none"
    tau: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown constraint kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "hankel":
            if self.tau is None:
                raise ValueError("hankel constraint needs tau")
            object.__setattr__(self, "tau", tuple(int(t) for t in self.tau))
        elif self.tau is not None:
            raise ValueError("tau is only valid for the hankel constraint")

    def validate(self, dims):
        if self.kind != "hankel":
            return
        if len(self.tau) != len(dims):
            raise ValueError(f"tau has {len(self.tau)} entries for an order-{len(dims)} tensor")
        for t, n in zip(self.tau, dims):
            if not 1 <= t <= n:
                raise ValueError(f"tau entry {t} outside [1, {n}]")

    def factor_rows(self, dims):
        """Row count of each factor matrix ``U_k``."""
        if self.kind == "hankel":
            return tuple(n - t + 1 for n, t in zip(dims, self.tau))
        return tuple(dims)

    @classmethod
    def parse(cls, name, tau=None):
        """Build from CLI spellings ``none|nonneg|hankel`` and ``"t1,t2,..."``."""
        if isinstance(tau, str):
            tau = tuple(int(t) for t in tau.split(",") if t.strip())
        return cls(name, tuple(tau) if tau is not None and name == "hankel" else None)


def _check_tau(dims, tau):
    if len(tau) != len(dims):
        raise ValueError("tau must have one entry per mode")
    for t, n in zip(tau, dims):
        if not 1 <= t <= n:
            raise ValueError(f"tau entry {t} outside [1, {n}]")


def hankel_dims(dims, tau):
    out = []
    for n, t in zip(dims, tau):
        out += [t, n - t + 1]
    return tuple(out)


def _hankel_index(dims, tau):
    # broadcastable source-index arrays, one per original mode
    K = len(dims)
    idx = []
    for k, (n, t) in enumerate(zip(dims, tau)):
        shape = [1] * (2 * K)
        shape[2 * k], shape[2 * k + 1] = t, n - t + 1
        idx.append((np.arange(t)[:, None] + np.arange(n - t + 1)[None, :]).reshape(shape))
    return tuple(idx)


def hankelize(W, tau):
    """Order-2K Hankel lift of dense ``W``."""
    W = np.asarray(W, dtype=float)
    _check_tau(W.shape, tau)
    return W[_hankel_index(W.shape, tau)]


def hankel_adjoint(S, tau, dims):
    """Scatter-add adjoint of :func:`hankelize`."""
    S = np.asarray(S, dtype=float)
    dims = tuple(dims)
    _check_tau(dims, tau)
    if S.shape != hankel_dims(dims, tau):
        raise TensorShapeError(f"lifted tensor has shape {S.shape}, expected {hankel_dims(dims, tau)}")
    idx = np.broadcast_arrays(*_hankel_index(dims, tau))
    out = np.zeros(dims)
    np.add.at(out, tuple(i.ravel() for i in idx), S.ravel())
    return out


def duplication_counts(dims, tau):
    """How many lifted entries each source index is copied into."""
    out = np.ones(dims)
    for k, (n, t) in enumerate(zip(dims, tau)):
        i = np.arange(n)
        c = np.minimum.reduce([np.full(n, t), np.full(n, n - t + 1), i + 1, n - i])
        shape = [1] * len(dims)
        shape[k] = n
        out = out * c.reshape(shape)
    return out


def apply_adjoint(kind, s, dims=None):
    """``A*(s)`` as a dense order-K tensor."""
    if isinstance(s, SparseTensor):
        s = s.to_dense()
    s = np.asarray(s, dtype=float)
    if kind.kind == "hankel":
        if dims is None:
            dims = tuple(s.shape[2 * k] + s.shape[2 * k + 1] - 1 for k in range(s.ndim // 2))
        return hankel_adjoint(s, kind.tau, dims)
    if dims is not None and tuple(s.shape) != tuple(dims):
        raise TensorShapeError(f"multiplier shape {s.shape} does not match {tuple(dims)}")
    return s


class HankelLift:
    """The lifted support of an observation set and the maps living on it.

    Attributes
    ----------
    subs : ndarray, shape (m, 2K)
        Lifted index tuples ``(j_1, l_1, ..., j_K, l_K)``, sorted.
    src : ndarray, shape (m,)
        Position in ``omega`` of each lifted entry's source index.
    mult : ndarray, shape (|omega|,)
        Number of lifted entries per observed index.
    modes : list of ModeIndex
        Unfolding maps for the ``l_k`` modes (0-based mode ``2k + 1``).
    """

    def __init__(self, dims, omega_subs, tau):
        dims = tuple(dims)
        _check_tau(dims, tau)
        self.dims = dims
        self.tau = tuple(tau)
        self.lifted_dims = hankel_dims(dims, tau)
        omega_subs = np.asarray(omega_subs, dtype=np.int64)
        self.nomega = len(omega_subs)
        K = len(dims)
        # every combination of window offsets j, per source entry
        offsets = np.array(np.meshgrid(*[np.arange(t) for t in tau], indexing="ij")).reshape(K, -1).T
        src = np.repeat(np.arange(self.nomega), len(offsets))
        J = np.tile(offsets, (self.nomega, 1))
        L = omega_subs[src] - J
        ok = np.all((L >= 0) & (L < np.array(self.lifted_dims[1::2])), axis=1)
        src, J, L = src[ok], J[ok], L[ok]
        subs = np.empty((len(src), 2 * K), dtype=np.int64)
        subs[:, 0::2] = J
        subs[:, 1::2] = L
        order = np.lexsort(subs.T[::-1])
        self.subs = subs[order]
        self.src = src[order]
        self.mult = np.bincount(self.src, minlength=self.nomega).astype(float)
        self.modes = [ModeIndex(self.lifted_dims, self.subs, 2 * k + 1) for k in range(K)]

    @property
    def size(self):
        return len(self.src)

    def aggregate(self, s):
        """``H*(S)`` restricted to omega (vector of length ``|omega|``)."""
        return np.bincount(self.src, weights=s, minlength=self.nomega)

    def spread(self, z):
        """``H(Z)`` restricted to the lifted support."""
        return np.asarray(z)[self.src]

    def project(self, z, s):
        """Euclidean projection of ``(z, s)`` onto ``{H*(S) = Z}``.

        Each observed entry couples only with its own block of lifted entries,
        so the projection is a closed-form rank-one correction per block.
        """
        mu = (z - self.aggregate(s)) / (1.0 + self.mult)
        return z - mu, s + mu[self.src]

    def as_sparse(self, s):
        return SparseTensor(self.lifted_dims, self.subs, s)


def lift_support(omega_subs, tau, dims):
    """0-based lifted index tuples whose source index lies in omega."""
    return HankelLift(dims, omega_subs, tau).subs


def project_coupling(Z, S, lift):
    """Project a ``(Z, S)`` pair onto the coupling set ``H*(S) = Z``.

    ``Z`` is a SparseTensor on omega and ``S`` a SparseTensor on the lifted
    support (or plain value vectors in the same order).
    """
    z = Z.vals if isinstance(Z, SparseTensor) else np.asarray(Z, dtype=float)
    if isinstance(S, SparseTensor):
        if S.nnz != lift.size or not np.array_equal(S.subs, lift.subs):
            raise ValueError("S is not supported on the lifted support")
        s = S.vals
    else:
        s = np.asarray(S, dtype=float)
        if s.shape != (lift.size,):
            raise ValueError("S is not supported on the lifted support")
    z2, s2 = lift.project(z, s)
    if isinstance(Z, SparseTensor):
        return Z.with_values(z2), lift.as_sparse(s2)
    return z2, s2
