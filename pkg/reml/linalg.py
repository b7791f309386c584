"""
Dense and sparse symmetric linear algebra.

All routines are pure. A :class:`SymmetricFactorization` is immutable once
built and may be shared between threads for concurrent solves.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular

from .exceptions import DimensionMismatch, NotPositiveDefinite, RankDeficient, ZeroPivot
from .sparseldl import minimum_degree_ordering, sparse_ldlt

logger = logging.getLogger(__name__)

PIVOT_TOLERANCE = 1e-13
"""Pivots smaller than this, relative to the largest diagonal entry, are zero."""
DENSE_FALLBACK_ORDER = 2000
"""Largest order for which a dense reference is always built."""

DenseMatrix = np.ndarray
"""Real 2-D array. Row-major in memory; layout is irrelevant to the API."""


@dataclass(frozen=True)
class SparseSymmetric:
    """
    A symmetric matrix stored by its lower triangle.
    """
    lower: sp.csc_matrix
    permutation: Optional[np.ndarray] = None
    """Precomputed fill-reducing ordering; one is computed when absent."""

    def __post_init__(self):
        rows, cols = self.lower.shape
        if rows != cols or rows < 1:
            raise DimensionMismatch(f'sparse symmetric matrix must be square, got {self.lower.shape}')
        if not np.all(np.isfinite(self.lower.data)):
            raise ValueError('sparse symmetric matrix has non-finite entries')

    @classmethod
    def from_matrix(cls, a, permutation: Optional[np.ndarray] = None) -> 'SparseSymmetric':
        """
        Build from a dense array or a sparse matrix holding both triangles.
        """
        lower = sp.csc_matrix(sp.tril(sp.csc_matrix(a)))
        lower.sort_indices()
        return cls(lower, permutation)

    @property
    def order(self) -> int:
        return self.lower.shape[0]

    @property
    def nnz(self) -> int:
        return self.lower.nnz

    def to_full(self) -> sp.csc_matrix:
        strict = sp.tril(self.lower, k=-1)
        return sp.csc_matrix(self.lower + strict.T)

    def to_dense(self) -> DenseMatrix:
        """
        Mirror the stored triangle. The result is symmetric bit for bit.
        """
        low = self.lower.toarray()
        return np.tril(low) + np.tril(low, -1).T

    def diagonal(self) -> np.ndarray:
        return self.lower.diagonal()


@dataclass(frozen=True)
class SymmetricFactorization:
    """
    ``Pᵀ A P = L D Lᵀ`` with unit lower triangular ``L``.
    """
    L: Union[DenseMatrix, sp.csc_matrix]
    d: np.ndarray
    permutation: np.ndarray
    positive_definite: bool

    @property
    def order(self) -> int:
        return self.d.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.L)

    def reconstruct(self) -> DenseMatrix:
        """
        Dense ``L D Lᵀ``, i.e. the permuted matrix ``A[p][:, p]``.
        """
        L = self.L.toarray() if self.is_sparse else self.L
        return (L * self.d) @ L.T


def _dense_ldlt(a: DenseMatrix, tolerance: float):
    n = a.shape[0]
    L = np.eye(n)
    d = np.zeros(n)
    for j in range(n):
        w = L[j, :j] * d[:j]
        d[j] = a[j, j] - L[j, :j] @ w
        if abs(d[j]) < tolerance:
            return L, d[:j + 1]
        if j + 1 < n:
            L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ w) / d[j]
    return L, d


def _equilibration(diagonal: np.ndarray) -> np.ndarray:
    """``s`` with ``sᵢ = 1/√aᵢᵢ`` where the diagonal is positive, 1 elsewhere."""
    s = np.ones_like(diagonal, dtype=float)
    positive = diagonal > 0
    s[positive] = 1.0 / np.sqrt(diagonal[positive])
    return s


def ldlt_factor(a: Union[SparseSymmetric, DenseMatrix], equilibrate: bool = False) -> SymmetricFactorization:
    """
    LDLᵀ-factorize a symmetric matrix.

    Dense input is factorized in its natural order. Sparse input is permuted
    by its stored ordering, or by a minimum-degree ordering computed here.
    With ``equilibrate`` the matrix is first scaled to unit diagonal, so the
    pivot test is blind to the units of individual rows and columns; the
    returned factors are those of the unscaled matrix.

    :raises ZeroPivot: when a pivot is below :const:`PIVOT_TOLERANCE` times
                       the largest diagonal magnitude (after scaling)
    """
    if isinstance(a, SparseSymmetric):
        n = a.order
        diagonal = np.asarray(a.diagonal(), dtype=float)
        full = a.to_full()
        perm = a.permutation if a.permutation is not None else minimum_degree_ordering(full)
        s = _equilibration(diagonal) if equilibrate else None
        if s is not None:
            full = sp.csc_matrix(sp.diags(s) @ full @ sp.diags(s))
            diagonal = diagonal * s * s
    else:
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise DimensionMismatch(f'cannot factorize a matrix of shape {a.shape}')
        n = a.shape[0]
        diagonal = np.diag(a).copy()
        perm = np.arange(n)
        s = _equilibration(diagonal) if equilibrate else None
        if s is not None:
            a = a * s[:, None] * s[None, :]
            diagonal = diagonal * s * s
    scale = float(np.max(np.abs(diagonal)))
    if scale == 0.0:
        raise ZeroPivot('zero pivot at position 0: the diagonal is identically zero', index=0)
    tolerance = PIVOT_TOLERANCE * scale
    if isinstance(a, SparseSymmetric):
        L, d = sparse_ldlt(full, perm, tolerance)
    else:
        L, d = _dense_ldlt(a, tolerance)
    if d.shape[0] < n or abs(d[-1]) < tolerance:
        k = d.shape[0] - 1
        raise ZeroPivot(f'zero pivot at position {k} of {n} '
                        f'(|d|={abs(d[-1]):.3e}, tolerance={tolerance:.3e})', index=k)
    if not np.all(np.isfinite(d)):
        raise ZeroPivot('factorization produced non-finite pivots')
    perm = np.asarray(perm)
    if s is not None:
        sp_ = s[perm]
        if sp.issparse(L):
            L = sp.csc_matrix(sp.diags(1.0 / sp_) @ L @ sp.diags(sp_))
        else:
            L = L * (1.0 / sp_)[:, None] * sp_[None, :]
        d = d / sp_ ** 2
    return SymmetricFactorization(L=L, d=d, permutation=perm, positive_definite=bool(np.all(d > 0)))


def _solve_block(f: SymmetricFactorization, b: DenseMatrix) -> DenseMatrix:
    bp = b[f.permutation]
    if f.is_sparse:
        Lr = sp.csr_matrix(f.L)
        z = spsolve_triangular(Lr, bp, lower=True, unit_diagonal=True)
        z = z / f.d[:, None]
        w = spsolve_triangular(sp.csr_matrix(Lr.T), z, lower=False, unit_diagonal=True)
    else:
        z = sla.solve_triangular(f.L, bp, lower=True, unit_diagonal=True)
        z = z / f.d[:, None]
        w = sla.solve_triangular(f.L, z, lower=True, trans='T', unit_diagonal=True)
    x = np.empty_like(w)
    x[f.permutation] = w
    return x


def solve(f: SymmetricFactorization, b, workers: int = 1) -> np.ndarray:
    """
    Solve ``A X = B`` for one or many right-hand sides.

    :param f: factorization of ``A``
    :param b: vector or matrix with ``f.order`` rows
    :param workers: threads over which the columns of ``b`` are split
    :return: the solution, shaped like ``b``
    """
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.order:
        raise DimensionMismatch(f'right-hand side has {b.shape[0]} rows, '
                                f'factorization has order {f.order}')
    vector = b.ndim == 1
    block = b[:, None] if vector else b
    if block.shape[1] == 0:
        return b.copy()
    if workers > 1 and block.shape[1] > 1:
        chunks = np.array_split(np.arange(block.shape[1]), min(workers, block.shape[1]))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda cols: _solve_block(f, block[:, cols]), chunks))
        x = np.hstack(parts)
    else:
        x = _solve_block(f, block)
    return x[:, 0] if vector else x


def logdet(f: SymmetricFactorization) -> float:
    """
    ``log|A| = Σ log dᵢᵢ``.

    :raises NotPositiveDefinite: if any pivot is not positive
    """
    if not f.positive_definite:
        k = int(np.argmax(f.d <= 0))
        raise NotPositiveDefinite(f'pivot {k} is {f.d[k]:.3e}; matrix is not positive definite')
    return float(np.sum(np.log(f.d)))


def _gram_factor(X: DenseMatrix) -> SymmetricFactorization:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatch(f'expected a matrix, got shape {X.shape}')
    try:
        return ldlt_factor(X.T @ X, equilibrate=True)
    except ZeroPivot as e:
        raise RankDeficient(f'design matrix is rank deficient: column {e.index} '
                            'is (numerically) a combination of earlier columns',
                            columns=[e.index])


def projector(X: DenseMatrix) -> DenseMatrix:
    """
    Orthogonal projector ``X (XᵀX)⁻¹ Xᵀ`` onto the column space of ``X``.
    """
    f = _gram_factor(X)
    M = X @ solve(f, X.T)
    return (M + M.T) / 2


def orthonormal_complement(X: DenseMatrix) -> DenseMatrix:
    """
    Orthonormal basis ``K₂`` of the orthogonal complement of ``span(X)``,
    taken as the unit-eigenvalue eigenvectors of ``I − P_X``.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if p >= n:
        raise RankDeficient(f'no complement: {p} columns for {n} rows')
    residual = np.eye(n) - projector(X)
    values, vectors = np.linalg.eigh(residual)
    keep = values > 0.5
    if np.count_nonzero(keep) != n - p:
        raise RankDeficient(f'expected {n - p} unit eigenvalues, found {np.count_nonzero(keep)}')
    return vectors[:, keep]
