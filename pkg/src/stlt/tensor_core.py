"""Dense and sparse K-way tensor primitives.

Dense tensors are plain ``numpy.ndarray`` objects. Mode-k unfoldings use the
Kolda ordering: the flat layout is column-major (first index fastest) and the
columns of ``unfold(W, k)`` enumerate the remaining indices in that order.

Modes are 0-based in the Python API. Index tuples in ``.tns`` files are 1-based.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class TensorShapeError(ValueError):
    """Raised when tensor dimensions or modes are inconsistent."""


def _check_mode(ndim, k):
    if not 0 <= k < ndim:
        raise TensorShapeError(f"mode {k} out of range for order-{ndim} tensor")


def unfold(W, k):
    """Mode-k unfolding, shape ``(n_k, prod(n_m for m != k))``.

    Entry ``(i_1, ..., i_K)`` lands at row ``i_k`` and column
    ``sum_{m != k} i_m * J_m`` with ``J_m = prod_{l < m, l != k} n_l``.
    """
    W = np.asarray(W, dtype=float)
    _check_mode(W.ndim, k)
    return np.moveaxis(W, k, 0).reshape((W.shape[k], -1), order="F")


def fold(M, k, dims):
    """Inverse of :func:`unfold`."""
    dims = tuple(int(n) for n in dims)
    _check_mode(len(dims), k)
    M = np.asarray(M, dtype=float)
    rest = tuple(n for m, n in enumerate(dims) if m != k)
    if M.shape != (dims[k], int(np.prod(rest, dtype=int))):
        raise TensorShapeError(f"matrix of shape {M.shape} cannot be folded into {dims} along mode {k}")
    return np.moveaxis(M.reshape((dims[k],) + rest, order="F"), 0, k)


def mode_product(W, U, k):
    """``W x_k U``: the tensor whose mode-k unfolding is ``U @ unfold(W, k)``."""
    W = np.asarray(W, dtype=float)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    _check_mode(W.ndim, k)
    if U.shape[1] != W.shape[k]:
        raise TensorShapeError(f"matrix with {U.shape[1]} columns cannot multiply mode {k} of size {W.shape[k]}")
    dims = list(W.shape)
    dims[k] = U.shape[0]
    return fold(U @ unfold(W, k), k, dims)


def inner(X, Y):
    """Tensor inner product.

    Accepts any mix of dense arrays and :class:`SparseTensor`; sparse operands
    restrict the sum to their support.
    """
    if isinstance(X, SparseTensor) and isinstance(Y, SparseTensor):
        _same_dims(X.dims, Y.dims)
        _, ix, iy = np.intersect1d(X.linear_index(), Y.linear_index(), return_indices=True)
        return float(X.vals[ix] @ Y.vals[iy])
    if isinstance(Y, SparseTensor):
        X, Y = Y, X
    if isinstance(X, SparseTensor):
        Y = np.asarray(Y, dtype=float)
        _same_dims(X.dims, Y.shape)
        return float(X.vals @ X.gather(Y))
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    _same_dims(X.shape, Y.shape)
    return float(X.ravel(order="F") @ Y.ravel(order="F"))


def _same_dims(a, b):
    if tuple(a) != tuple(b):
        raise TensorShapeError(f"dimension mismatch: {tuple(a)} vs {tuple(b)}")


@dataclass(frozen=True, eq=False)
class SparseTensor:
    """Coordinate-form tensor with sorted, unique 0-based subscripts.

    Attributes
    ----------
    dims : tuple of int
    subs : ndarray of int64, shape (nnz, K)
        Lexicographically sorted (first index most significant).
    vals : ndarray of float64, shape (nnz,)
    """

    dims: tuple
    subs: np.ndarray
    vals: np.ndarray

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if not dims or min(dims) < 1:
            raise TensorShapeError(f"invalid dims {dims}")
        subs = np.asarray(self.subs, dtype=np.int64).reshape(-1, len(dims))
        vals = np.asarray(self.vals, dtype=float).reshape(-1)
        if subs.shape[0] != vals.shape[0]:
            raise TensorShapeError("subs and vals have different lengths")
        if subs.size and (subs.min() < 0 or np.any(subs.max(axis=0) >= np.array(dims))):
            raise TensorShapeError("index out of range")
        order = np.lexsort(subs.T[::-1]) if len(subs) else np.arange(0)
        subs, vals = subs[order], vals[order]
        if len(subs) > 1 and np.any(np.all(subs[1:] == subs[:-1], axis=1)):
            raise TensorShapeError("duplicate index tuples")
        subs.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "subs", subs)
        object.__setattr__(self, "vals", vals)

    @classmethod
    def from_entries(cls, dims, entries):
        """Build from ``[((i_1, ..., i_K), value), ...]`` with 1-based tuples."""
        entries = list(entries)
        K = len(dims)
        subs = np.array([idx for idx, _ in entries], dtype=np.int64).reshape(-1, K) - 1
        vals = np.array([v for _, v in entries], dtype=float)
        return cls(dims, subs, vals)

    @classmethod
    def from_dense(cls, W):
        W = np.asarray(W, dtype=float)
        subs = np.array(np.unravel_index(np.arange(W.size), W.shape, order="F")).T
        return cls(W.shape, subs, W.ravel(order="F"))

    @property
    def nnz(self):
        return len(self.vals)

    @property
    def ndim(self):
        return len(self.dims)

    def linear_index(self):
        """Column-major linear index of every stored entry."""
        if self.nnz == 0:
            return np.zeros(0, dtype=np.int64)
        return np.ravel_multi_index(tuple(self.subs.T), self.dims, order="F")

    def gather(self, W):
        """Values of dense ``W`` at this tensor's support."""
        return np.asarray(W).ravel(order="F")[self.linear_index()]

    def with_values(self, vals):
        """Same support, new values (no re-sorting needed)."""
        out = object.__new__(SparseTensor)
        vals = np.asarray(vals, dtype=float).reshape(self.vals.shape)
        object.__setattr__(out, "dims", self.dims)
        object.__setattr__(out, "subs", self.subs)
        object.__setattr__(out, "vals", vals)
        return out

    def to_dense(self):
        out = np.zeros(int(np.prod(self.dims)), dtype=float)
        out[self.linear_index()] = self.vals
        return out.reshape(self.dims, order="F")

    def norm(self):
        return float(np.linalg.norm(self.vals))

    def entries(self):
        """Iterate ``((i_1, ..., i_K), value)`` with 1-based tuples."""
        for idx, v in zip(self.subs + 1, self.vals):
            yield tuple(int(i) for i in idx), float(v)


def project_omega(W, omega):
    """Restrict dense ``W`` to the support ``omega``.

    ``omega`` is a :class:`SparseTensor` (its values are ignored) or an integer
    array of 0-based subscripts.
    """
    W = np.asarray(W, dtype=float)
    if isinstance(omega, SparseTensor):
        _same_dims(omega.dims, W.shape)
        return omega.with_values(omega.gather(W))
    subs = np.asarray(omega, dtype=np.int64).reshape(-1, W.ndim)
    T = SparseTensor(W.shape, subs, np.zeros(len(subs)))
    return T.with_values(T.gather(W))


def embed(Z):
    """Dense tensor equal to ``Z`` on its support and zero elsewhere."""
    return Z.to_dense()


class ModeIndex:
    """Row/column map of a fixed sparse support under the mode-k unfolding.

    Only the columns that actually contain support entries are kept, so
    products like ``U.T @ unfold(Z, k)`` cost ``O(nnz * r)`` and never
    materialize an ``n_k x prod(n_m)`` matrix.

    Attributes
    ----------
    rows : ndarray
        Row (``i_k``) of each support entry.
    cols : ndarray
        Compressed column id of each support entry.
    full_cols : ndarray
        Kolda column index of each compressed column.
    """

    def __init__(self, dims, subs, k):
        dims = tuple(dims)
        _check_mode(len(dims), k)
        self.dims = dims
        self.mode = k
        self.nrows = dims[k]
        subs = np.asarray(subs, dtype=np.int64)
        nnz = len(subs)
        self.rows = subs[:, k].copy()
        strides = np.zeros(len(dims), dtype=np.int64)
        J = 1
        for m, n in enumerate(dims):
            if m != k:
                strides[m] = J
                J *= n
        kolda_col = subs @ strides
        self.full_cols, self.cols = np.unique(kolda_col, return_inverse=True)
        self.cols = self.cols.ravel()
        self.ncols = len(self.full_cols)
        # column scatter (ncols x nnz) and row scatter (nrows x nnz)
        ones = np.ones(nnz)
        self._col_sel = sp.csr_matrix((ones, (self.cols, np.arange(nnz))), shape=(self.ncols, nnz))
        self._row_sel = sp.csr_matrix((ones, (self.rows, np.arange(nnz))), shape=(self.nrows, nnz))
        counts = np.bincount(self.cols, minlength=self.ncols)
        self.npairs = int(np.sum(counts.astype(np.int64) ** 2))
        self._pairs = None

    def pairs(self):
        """Index pairs ``(e, f)`` of support entries that share an unfolding column."""
        if self._pairs is None:
            order = np.argsort(self.cols, kind="stable")
            counts = np.bincount(self.cols, minlength=self.ncols)
            starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
            reps = np.repeat(counts, counts)
            first = np.repeat(np.repeat(starts, counts), reps)
            offset = np.arange(reps.sum()) - np.repeat(np.cumsum(reps) - reps, reps)
            self._pairs = (np.repeat(order, reps), order[first + offset])
        return self._pairs

    def gram(self, U):
        """Sparse ``nnz x nnz`` matrix of ``v -> expand(U, left(U, v))``.

        Block diagonal over unfolding columns, with blocks taken from
        ``U U^T``; worth assembling when columns hold few entries.
        """
        I, J = self.pairs()
        data = np.einsum("er,er->e", U[self.rows[I]], U[self.rows[J]])
        n = len(self.rows)
        return sp.csr_matrix((data, (I, J)), shape=(n, n))

    def left(self, U, vals):
        """Compressed ``U.T @ unfold(Z, k)`` as an ``r x ncols`` array."""
        return np.asarray(self._col_sel @ (U[self.rows] * vals[:, None])).T

    def expand(self, U, A):
        """Support values of ``U @ A`` for compressed ``A`` (``r x ncols``)."""
        return np.einsum("er,re->e", U[self.rows], A[:, self.cols])

    def times(self, vals, B):
        """``unfold(Z, k) @ B_full`` where ``B`` holds the compressed rows of ``B_full``."""
        return np.asarray(self._row_sel @ (vals[:, None] * B[self.cols]))

    def expand_full(self, U, A):
        """Dense tensor ``fold_k(U A_full)`` where ``A_full`` is ``A`` scattered to all columns."""
        full = np.zeros((U.shape[0], int(np.prod(self.dims)) // self.nrows))
        full[:, self.full_cols] = U @ A
        dims = list(self.dims)
        dims[self.mode] = U.shape[0]
        return fold(full, self.mode, dims)

    def to_matrix(self, vals):
        """Compressed unfolding as a dense ``n_k x ncols`` matrix (tests, small sizes)."""
        out = np.zeros((self.nrows, self.ncols))
        np.add.at(out, (self.rows, self.cols), vals)
        return out


def read_tns(path):
    """Read a ``.tns`` file into a :class:`SparseTensor`.

    Line 1 is ``dims n_1 ... n_K``; every other non-empty line is
    ``i_1 ... i_K value`` with 1-based indices.
    """
    lines = [ln.split() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    lines = [ln for ln in lines if ln and not ln[0].startswith("#")]
    if not lines or lines[0][0] != "dims":
        raise ValueError(f"{path}: first line must be 'dims n_1 ... n_K'")
    dims = tuple(int(t) for t in lines[0][1:])
    K = len(dims)
    body = lines[1:]
    for ln in body:
        if len(ln) != K + 1:
            raise ValueError(f"{path}: expected {K} indices and a value, got {' '.join(ln)!r}")
    subs = np.array([[int(t) for t in ln[:K]] for ln in body], dtype=np.int64).reshape(-1, K) - 1
    vals = np.array([float(ln[K]) for ln in body], dtype=float)
    return SparseTensor(dims, subs, vals)


def write_tns(path, T):
    """Write a sparse tensor, or a dense array with every entry, as ``.tns``."""
    if not isinstance(T, SparseTensor):
        T = SparseTensor.from_dense(T)
    rows = ["dims " + " ".join(str(n) for n in T.dims)]
    for idx, v in zip(T.subs + 1, T.vals):
        rows.append(" ".join(str(int(i)) for i in idx) + " " + repr(float(v)))
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")
