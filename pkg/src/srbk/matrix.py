"""Immutable matrix storage and the dense micro-kernels every row-action solver needs.

A :class:`ProblemMatrix` holds either CSR arrays or a dense row-major array
and caches per-row Euclidean norms plus the squared Frobenius norm. Vectors
are plain 1-D float64 numpy arrays; multiple right-hand sides are 2-D arrays
kept column-major so per-column updates stay contiguous.

All operations here are pure given their inputs; a ProblemMatrix is safe to
share across concurrent solver runs.
"""
from __future__ import annotations

import math

import numpy as np

__all__ = [
    "MatrixBuildError",
    "BlockShapeError",
    "ProblemMatrix",
    "build_csr",
    "as_vector",
    "as_columns",
    "row_dot",
    "residual_on",
    "apply_block_pinv",
    "singular_values",
    "spectral_extremes",
]


class MatrixBuildError(ValueError):
    """Raised when matrix construction input is malformed."""


class BlockShapeError(ValueError):
    """Raised when a block index set and its residual slice disagree in length."""


def as_vector(x, length: int | None = None) -> np.ndarray:
    """Coerce to a finite 1-D float64 array, optionally checking its length."""
    v = np.ascontiguousarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    if length is not None and v.shape[0] != length:
        raise ValueError(f"expected length {length}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite entries")
    return v


def as_columns(X, n_rows: int | None = None) -> np.ndarray:
    """Coerce to a finite column-major 2-D float64 array."""
    M = np.asfortranarray(X, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {M.shape}")
    if n_rows is not None and M.shape[0] != n_rows:
        raise ValueError(f"expected {n_rows} rows, got {M.shape[0]}")
    if not np.all(np.isfinite(M)):
        raise ValueError("array contains non-finite entries")
    return M


def _index_array(idx, n_rows: int) -> np.ndarray:
    out = np.asarray(idx, dtype=np.int64).ravel()
    if out.size and (out.min() < 0 or out.max() >= n_rows):
        raise IndexError(f"row index out of range [0, {n_rows})")
    return out


class ProblemMatrix:
    """Immutable m-by-n matrix with cached row norms.

    Stored either as CSR (``indptr``, ``indices``, ``data``) or as a dense
    row-major array. Construction freezes all arrays; per-row squared norms
    and the squared Frobenius norm are computed once from the raw entries.
    """

    def __init__(self, *, n_rows, n_cols, dense=None, indptr=None, indices=None, data=None):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        if self.n_rows < 1 or self.n_cols < 1:
            raise MatrixBuildError("matrix dimensions must be positive")
        if dense is not None:
            self._dense = np.ascontiguousarray(dense, dtype=np.float64)
            if self._dense.shape != (self.n_rows, self.n_cols):
                raise MatrixBuildError(
                    f"dense shape {self._dense.shape} != ({self.n_rows}, {self.n_cols})"
                )
            if not np.all(np.isfinite(self._dense)):
                raise MatrixBuildError("dense matrix contains non-finite entries")
            self._indptr = self._indices = self._data = None
            row_norms_sq = np.einsum("ij,ij->i", self._dense, self._dense)
        else:
            self._dense = None
            self._indptr = np.ascontiguousarray(indptr, dtype=np.int64)
            self._indices = np.ascontiguousarray(indices, dtype=np.int64)
            self._data = np.ascontiguousarray(data, dtype=np.float64)
            self._check_csr()
            row_norms_sq = np.zeros(self.n_rows)
            if self._data.size:
                row_ids = np.repeat(
                    np.arange(self.n_rows), np.diff(self._indptr)
                )
                row_norms_sq = np.bincount(
                    row_ids, weights=self._data * self._data, minlength=self.n_rows
                )
        self.row_norms_sq = row_norms_sq
        self.row_norms = np.sqrt(row_norms_sq)
        self.frob_sq = float(row_norms_sq.sum())
        for arr in (self._dense, self._indptr, self._indices, self._data,
                    self.row_norms, self.row_norms_sq):
            if arr is not None:
                arr.flags.writeable = False

    def _check_csr(self):
        ip, ci, d = self._indptr, self._indices, self._data
        if ip.shape != (self.n_rows + 1,):
            raise MatrixBuildError("indptr length must be n_rows + 1")
        if ip[0] != 0 or ip[-1] != d.size or ci.size != d.size:
            raise MatrixBuildError("indptr must start at 0 and end at nnz")
        if np.any(np.diff(ip) < 0):
            raise MatrixBuildError("indptr must be non-decreasing")
        if d.size:
            if ci.min() < 0 or ci.max() >= self.n_cols:
                raise MatrixBuildError("column index out of range")
            # strictly increasing column indices within each row
            same_row = np.repeat(np.arange(self.n_rows), np.diff(ip))
            inner = np.diff(ci) <= 0
            if np.any(inner & (same_row[1:] == same_row[:-1])):
                raise MatrixBuildError("column indices must be strictly increasing per row")
        if not np.all(np.isfinite(d)):
            raise MatrixBuildError("matrix values contain non-finite entries")

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_dense(cls, values) -> "ProblemMatrix":
        arr = np.ascontiguousarray(values, dtype=np.float64)
        if arr.ndim != 2:
            raise MatrixBuildError(f"expected a 2-D array, got shape {arr.shape}")
        return cls(n_rows=arr.shape[0], n_cols=arr.shape[1], dense=arr)

    # -- properties --------------------------------------------------------

    @property
    def is_sparse(self) -> bool:
        return self._dense is None

    @property
    def nnz(self) -> int:
        if self.is_sparse:
            return int(self._data.size)
        return int(np.count_nonzero(self._dense))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    # -- row access --------------------------------------------------------

    def row(self, i: int) -> np.ndarray:
        """Dense copy of row i."""
        if not 0 <= i < self.n_rows:
            raise IndexError(f"row {i} out of range [0, {self.n_rows})")
        if not self.is_sparse:
            return self._dense[i].copy()
        out = np.zeros(self.n_cols)
        s, e = self._indptr[i], self._indptr[i + 1]
        out[self._indices[s:e]] = self._data[s:e]
        return out

    def rows_dense(self, idx) -> np.ndarray:
        """Dense copy of the rows in ``idx``, stacked in idx order."""
        idx = _index_array(idx, self.n_rows)
        if not self.is_sparse:
            return self._dense[idx].copy()
        out = np.zeros((idx.size, self.n_cols))
        for k, i in enumerate(idx):
            s, e = self._indptr[i], self._indptr[i + 1]
            out[k, self._indices[s:e]] = self._data[s:e]
        return out

    def rows_dot(self, idx, x: np.ndarray) -> np.ndarray:
        """A_(i) . x for each i in idx, in idx order; rows outside idx are not read."""
        idx = _index_array(idx, self.n_rows)
        if not self.is_sparse:
            return self._dense[idx] @ x
        out = np.empty(idx.size)
        ip, ci, d = self._indptr, self._indices, self._data
        for k, i in enumerate(idx):
            s, e = ip[i], ip[i + 1]
            out[k] = d[s:e] @ x[ci[s:e]]
        return out

    def axpy_row(self, x: np.ndarray, i: int, coef: float) -> None:
        """In-place x += coef * A_(i); touches only the row's stored entries."""
        if not self.is_sparse:
            x += coef * self._dense[i]
            return
        s, e = self._indptr[i], self._indptr[i + 1]
        x[self._indices[s:e]] += coef * self._data[s:e]

    def combine_rows(self, idx, coef: np.ndarray) -> np.ndarray:
        """Sum of coef[k] * A_(idx[k]) as a dense length-n vector."""
        idx = _index_array(idx, self.n_rows)
        if not self.is_sparse:
            return coef @ self._dense[idx]
        out = np.zeros(self.n_cols)
        ip, ci, d = self._indptr, self._indices, self._data
        for k, i in enumerate(idx):
            s, e = ip[i], ip[i + 1]
            out[ci[s:e]] += coef[k] * d[s:e]
        return out

    def gram(self, idx) -> np.ndarray:
        """Gram matrix A_J A_J^T of the row block ``idx``."""
        R = self.rows_dense(idx)
        return R @ R.T

    # -- full products -----------------------------------------------------

    def matvec(self, x: np.ndarray) -> np.ndarray:
        if not self.is_sparse:
            return self._dense @ x
        out = np.zeros(self.n_rows)
        if self._data.size:
            products = self._data * x[self._indices]
            counts = np.diff(self._indptr)
            nz = counts > 0
            out[nz] = np.add.reduceat(products, self._indptr[:-1][nz])
        return out

    def matmat(self, X: np.ndarray) -> np.ndarray:
        if not self.is_sparse:
            return self._dense @ X
        out = np.zeros((self.n_rows, X.shape[1]))
        ip, ci, d = self._indptr, self._indices, self._data
        for i in range(self.n_rows):
            s, e = ip[i], ip[i + 1]
            if e > s:
                out[i] = d[s:e] @ X[ci[s:e]]
        return out

    def to_dense(self) -> np.ndarray:
        if not self.is_sparse:
            return self._dense.copy()
        return self.rows_dense(np.arange(self.n_rows))


def build_csr(n_rows: int, n_cols: int, entries) -> ProblemMatrix:
    """Build a CSR ProblemMatrix from (row, col, value) triples.

    Duplicate coordinates are summed. Out-of-range coordinates raise
    :class:`MatrixBuildError` naming the offending entry.
    """
    n_rows, n_cols = int(n_rows), int(n_cols)
    entries = list(entries)
    if entries:
        rows = np.fromiter((e[0] for e in entries), dtype=np.int64, count=len(entries))
        cols = np.fromiter((e[1] for e in entries), dtype=np.int64, count=len(entries))
        vals = np.fromiter((e[2] for e in entries), dtype=np.float64, count=len(entries))
    else:
        rows = np.empty(0, dtype=np.int64)
        cols = np.empty(0, dtype=np.int64)
        vals = np.empty(0, dtype=np.float64)
    bad = (rows < 0) | (rows >= n_rows) | (cols < 0) | (cols >= n_cols)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise MatrixBuildError(
            f"entry {k} at (row={rows[k]}, col={cols[k]}) outside {n_rows}x{n_cols}"
        )
    if rows.size:
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        first = np.ones(rows.size, dtype=bool)
        first[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
        starts = np.flatnonzero(first)
        vals = np.add.reduceat(vals, starts)
        rows, cols = rows[starts], cols[starts]
    counts = np.bincount(rows, minlength=n_rows)
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return ProblemMatrix(n_rows=n_rows, n_cols=n_cols,
                         indptr=indptr, indices=cols, data=vals)


def row_dot(A: ProblemMatrix, i: int, x: np.ndarray) -> float:
    """A_(i) . x as a standard dot product over stored entries."""
    return float(A.rows_dot(np.array([i], dtype=np.int64), x)[0])


def residual_on(A: ProblemMatrix, b: np.ndarray, x: np.ndarray, idx) -> np.ndarray:
    """(b_i - A_(i) x) for i in idx, in idx order. Rows outside idx are never read."""
    idx = _index_array(idx, A.n_rows)
    return b[idx] - A.rows_dot(idx, x)


def _solve_spd(G: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Solve G y = r for symmetric positive-definite G via its Cholesky factor."""
    L = np.linalg.cholesky(G)
    u = np.linalg.solve(L, r)
    return np.linalg.solve(L.T, u)


def _solve_gram_pinv(G: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Moore-Penrose solve of G y = r via eigendecomposition with relative cutoff."""
    w, V = np.linalg.eigh(G)
    cutoff = w.max(initial=0.0) * 1e-12
    inv = np.where(w > cutoff, 1.0 / np.where(w > cutoff, w, 1.0), 0.0)
    return V @ (inv * (V.T @ r))


def apply_block_pinv(A: ProblemMatrix, J, r: np.ndarray) -> np.ndarray:
    """Apply the pseudoinverse of the row block A_J to r without forming it.

    Solves the |J|-by-|J| Gram system G y = r (G = A_J A_J^T) by Cholesky and
    returns A_J^T y; rank-deficient blocks fall back to an eigendecomposition
    of G with a relative cutoff, which realizes the Moore-Penrose action.
    """
    J = _index_array(J, A.n_rows)
    r = np.asarray(r, dtype=np.float64)
    if J.size != r.size:
        raise BlockShapeError(f"block size {J.size} != residual length {r.size}")
    if J.size == 0:
        return np.zeros(A.n_cols)
    if J.size == 1:
        nsq = A.row_norms_sq[J[0]]
        if nsq == 0.0:
            return np.zeros(A.n_cols)
        coef = float(r[0]) / nsq
        out = np.zeros(A.n_cols)
        A.axpy_row(out, int(J[0]), coef)
        return out
    G = A.gram(J)
    y = None
    try:
        y = _solve_spd(G, r)
    except np.linalg.LinAlgError:
        y = None
    if y is not None:
        # cheap sanity check so near-singular Gram matrices take the robust path
        scale = np.linalg.norm(G, ord="fro") * np.linalg.norm(y) + np.linalg.norm(r)
        if not np.all(np.isfinite(y)) or np.linalg.norm(G @ y - r) > 1e-8 * (scale + 1.0):
            y = None
    if y is None:
        y = _solve_gram_pinv(G, r)
    return A.combine_rows(J, y)


def _jacobi_column_sweeps(A: np.ndarray, tol: float = 1e-14, max_sweeps: int = 60) -> np.ndarray:
    """One-sided Jacobi: rotate column pairs until mutually orthogonal."""
    m, n = A.shape
    for _ in range(max_sweeps):
        worst = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                aii = A[:, i] @ A[:, i]
                ajj = A[:, j] @ A[:, j]
                if aii == 0.0 or ajj == 0.0:
                    continue
                aij = A[:, i] @ A[:, j]
                rel = abs(aij) / math.sqrt(aii * ajj)
                if rel <= tol:
                    continue
                worst = max(worst, rel)
                theta = 0.5 * math.atan2(2.0 * aij, aii - ajj)
                c, s = math.cos(theta), math.sin(theta)
                ci = A[:, i].copy()
                A[:, i] = c * ci + s * A[:, j]
                A[:, j] = -s * ci + c * A[:, j]
        if worst <= tol:
            break
    return A


def singular_values(M) -> np.ndarray:
    """All singular values of a small dense matrix, descending, via one-sided Jacobi."""
    A = np.array(M, dtype=np.float64, copy=True)
    if A.ndim != 2 or A.size == 0:
        raise ValueError("singular_values requires a non-empty 2-D matrix")
    if A.shape[0] < A.shape[1]:
        A = np.ascontiguousarray(A.T)
    A = _jacobi_column_sweeps(A)
    svals = np.sqrt(np.einsum("ij,ij->j", A, A))
    svals.sort()
    return svals[::-1]


def spectral_extremes(M) -> tuple[float, float]:
    """(smallest nonzero, largest) singular value of a small dense matrix.

    Values below sigma_max * max(dims) * 1e-12 count as zero. Intended for
    diagnostics-scale inputs (min dimension <= 2000).
    """
    svals = singular_values(M)
    smax = float(svals[0])
    thresh = smax * max(np.shape(M)) * 1e-12
    nonzero = svals[svals > thresh]
    smin = float(nonzero[-1]) if nonzero.size else 0.0
    return smin, smax
