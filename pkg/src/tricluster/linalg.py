"""Matrix containers and the small kernel set the multiplicative updates are built from.

Everything here is a pure function over immutable inputs; no kernel keeps
hidden state, so values can be shared read-only across threads.
"""

from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

SYMMETRY_TOL = 1e-9


class DimensionError(ValueError):
    """Raised when operand shapes do not compose."""


class SparseMatrix:
    """Non-negative sparse matrix, coordinate form at the interface.

    Duplicate (row, col) pairs in the input are summed at construction; after
    that the entry set is duplicate-free, every index is in bounds and every
    weight is finite and >= 0.  Internally a CSR copy backs the products, but
    the layout never changes results beyond float reassociation.
    """

    __slots__ = ("rows", "cols", "_csr")

    def __init__(self, rows, cols, entries=()):
        entries = list(entries)
        ii = np.asarray([e[0] for e in entries], dtype=np.int64)
        jj = np.asarray([e[1] for e in entries], dtype=np.int64)
        vv = np.asarray([e[2] for e in entries], dtype=np.float64)
        built = SparseMatrix.from_arrays(rows, cols, ii, jj, vv)
        self.rows = built.rows
        self.cols = built.cols
        self._csr = built._csr

    @classmethod
    def from_dense(cls, arr):
        arr = np.asarray(arr, dtype=np.float64)
        ii, jj = np.nonzero(arr)
        return cls.from_arrays(arr.shape[0], arr.shape[1], ii, jj, arr[ii, jj])

    @classmethod
    def from_arrays(cls, rows, cols, ii, jj, vv):
        """Same contract as the tuple constructor, on index/value arrays."""
        obj = cls.__new__(cls)
        if rows <= 0 or cols <= 0:
            raise ValueError("matrix dimensions must be positive, got %dx%d" % (rows, cols))
        obj.rows = int(rows)
        obj.cols = int(cols)
        ii = np.asarray(ii, dtype=np.int64)
        jj = np.asarray(jj, dtype=np.int64)
        vv = np.asarray(vv, dtype=np.float64)
        if ii.size:
            if ii.min() < 0 or ii.max() >= rows or jj.min() < 0 or jj.max() >= cols:
                bad = int(np.argmax((ii < 0) | (ii >= rows) | (jj < 0) | (jj >= cols)))
                raise ValueError(
                    "entry (%d, %d) out of bounds for %dx%d matrix"
                    % (ii[bad], jj[bad], rows, cols)
                )
            if not np.all(np.isfinite(vv)):
                raise ValueError("non-finite weight in sparse matrix entries")
            if vv.min() < 0.0:
                raise ValueError("negative weight %r in sparse matrix entries" % vv.min())
        csr = sp.csr_matrix((vv, (ii, jj)), shape=(rows, cols))
        csr.sum_duplicates()
        obj._csr = csr
        return obj

    @classmethod
    def _wrap_csr(cls, csr):
        # internal: csr already validated non-negative/finite by the caller
        obj = cls.__new__(cls)
        obj.rows, obj.cols = csr.shape
        obj._csr = csr.tocsr()
        obj._csr.sum_duplicates()
        return obj

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def nnz(self):
        return self._csr.nnz

    @property
    def csr(self):
        return self._csr

    def entries(self):
        """All stored (row, col, weight) triples in row-major order."""
        coo = self._csr.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return [
            (int(coo.row[t]), int(coo.col[t]), float(coo.data[t])) for t in order
        ]

    def to_dense(self):
        return np.asarray(self._csr.todense(), dtype=np.float64)

    def squared_norm(self):
        return float(self._csr.data @ self._csr.data)

    def __repr__(self):
        return "SparseMatrix(%dx%d, nnz=%d)" % (self.rows, self.cols, self.nnz)


class SignSplit(NamedTuple):
    """Element-wise positive/negative parts: plus - minus reconstructs the source."""

    plus: np.ndarray
    minus: np.ndarray


class LaplacianParts(NamedTuple):
    """Degree diagonal (as a vector) and symmetrized adjacency of a user graph."""

    degree: np.ndarray
    adjacency: SparseMatrix


def spmm(A, B):
    """Sparse-dense product A @ B."""
    B = np.asarray(B, dtype=np.float64)
    if A.cols != B.shape[0]:
        raise DimensionError(
            "spmm: inner dimensions disagree, A is %dx%d but B is %dx%d"
            % (A.rows, A.cols, B.shape[0], B.shape[1])
        )
    return A.csr @ B


def spmm_t(A, B):
    """Product A.T @ B without materializing the transpose."""
    B = np.asarray(B, dtype=np.float64)
    if A.rows != B.shape[0]:
        raise DimensionError(
            "spmm_t: row counts disagree, A is %dx%d but B is %dx%d"
            % (A.rows, A.cols, B.shape[0], B.shape[1])
        )
    return A.csr.T @ B


def gram(B):
    """B.T @ B, symmetrized so the result is exactly symmetric PSD."""
    B = np.asarray(B, dtype=np.float64)
    G = B.T @ B
    return 0.5 * (G + G.T)


def split_pos_neg(M):
    """Split M into plus = max(M, 0) and minus = max(-M, 0)."""
    M = np.asarray(M, dtype=np.float64)
    if not np.all(np.isfinite(M)):
        raise ValueError("split_pos_neg: input has non-finite entries")
    return SignSplit(np.maximum(M, 0.0), np.maximum(-M, 0.0))


def hadamard_sqrt_update(S, numer, denom, eps):
    """Shared multiplicative-update template: S * sqrt(numer / (denom + eps)).

    All three matrices must agree in shape and be non-negative; a negative
    numerator or denominator entry signals a bug upstream (the derived rules
    produce non-negative ones by construction) and raises.
    """
    S = np.asarray(S, dtype=np.float64)
    numer = np.asarray(numer, dtype=np.float64)
    denom = np.asarray(denom, dtype=np.float64)
    if not (S.shape == numer.shape == denom.shape):
        raise DimensionError(
            "hadamard_sqrt_update: shapes disagree: S %s, numer %s, denom %s"
            % (S.shape, numer.shape, denom.shape)
        )
    if eps <= 0.0:
        raise ValueError("hadamard_sqrt_update: eps must be > 0, got %r" % eps)
    if S.min(initial=0.0) < 0.0 or numer.min(initial=0.0) < 0.0 or denom.min(initial=0.0) < 0.0:
        raise ValueError("hadamard_sqrt_update: negative input entry (upstream bug)")
    return S * np.sqrt(numer / (denom + eps))


def frob_residual_sq(X, A, H, B):
    """Squared Frobenius residual ||X - A @ H @ B.T||_F^2, H=None for identity.

    Expanded as ||X||^2 - 2 tr(X.T A H B.T) + ||A H B.T||^2 so only k x k
    intermediates and one sparse product are formed; clamped at 0 against
    cancellation.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if X.rows != A.shape[0] or X.cols != B.shape[0]:
        raise DimensionError(
            "frob_residual_sq: X is %dx%d but A has %d rows and B has %d rows"
            % (X.rows, X.cols, A.shape[0], B.shape[0])
        )
    if H is not None:
        H = np.asarray(H, dtype=np.float64)
        if H.shape != (A.shape[1], B.shape[1]):
            raise DimensionError(
                "frob_residual_sq: H has shape %s, expected %s"
                % (H.shape, (A.shape[1], B.shape[1]))
            )
    xta = spmm_t(X, A)  # (cols(X), k)
    ga = gram(A)
    gb = gram(B)
    if H is None:
        cross = float(np.sum(xta * B))
        prod = float(np.sum(ga * gb))
    else:
        cross = float(np.sum((xta @ H) * B))
        prod = float(np.sum((ga @ H @ gb) * H))
    return max(X.squared_norm() - 2.0 * cross + prod, 0.0)


def laplacian_parts(G):
    """Degree vector and symmetrized adjacency of a user-user graph.

    The graph must be square, non-negative and symmetric within 1e-9
    (small asymmetry is repaired by (G + G.T)/2, larger asymmetry is an input
    error naming the worst pair).  Self-loops are dropped with a warning.
    The implied Laplacian D - G has zero row sums.
    """
    if G.rows != G.cols:
        raise DimensionError("laplacian_parts: graph must be square, got %dx%d" % G.shape)
    W = G.csr
    gap = W - W.T
    if gap.nnz:
        worst = np.abs(gap.data).max()
        if worst > SYMMETRY_TOL:
            coo = gap.tocoo()
            t = int(np.argmax(np.abs(coo.data)))
            raise ValueError(
                "laplacian_parts: graph asymmetric beyond %g at (%d, %d): |G_ij - G_ji| = %g"
                % (SYMMETRY_TOL, coo.row[t], coo.col[t], abs(coo.data[t]))
            )
        W = 0.5 * (W + W.T)
    diag = W.diagonal()
    if np.any(diag != 0.0):
        warnings.warn(
            "laplacian_parts: dropping %d self-loop(s)" % int(np.count_nonzero(diag)),
            stacklevel=2,
        )
        W = W - sp.diags(diag)
        W.eliminate_zeros()
    degree = np.asarray(W.sum(axis=1)).ravel()
    return LaplacianParts(degree, SparseMatrix._wrap_csr(W))


def trace_quadratic(S, degree, adjacency):
    """Graph-smoothness penalty tr(S.T (D - G) S).

    Equals the pairwise form 0.5 * sum_ij ||S_i - S_j||^2 G_ij, so it is
    non-negative for any symmetric non-negative graph.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.shape[0] != adjacency.rows or S.shape[0] != degree.shape[0]:
        raise DimensionError(
            "trace_quadratic: S has %d rows but the graph is %dx%d"
            % (S.shape[0], adjacency.rows, adjacency.cols)
        )
    smooth = float(np.sum(degree * np.einsum("ik,ik->i", S, S)))
    return smooth - float(np.sum(S * spmm(adjacency, S)))
