"""
Sparse LDLᵀ factorization without numerical pivoting.

The symbolic and numeric phases follow the classic up-looking algorithm:
an elimination tree is built from the pattern of the permuted matrix,
column counts of ``L`` are taken from it, and each row of ``L`` is then
computed by a sparse triangular solve along the tree. A greedy
minimum-degree ordering is applied beforehand to limit fill-in.
"""

import logging
from typing import List, Tuple

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)


def minimum_degree_ordering(pattern: sp.spmatrix) -> np.ndarray:
    """
    Greedy minimum-degree ordering on the graph of a symmetric pattern.

    At every step the node of smallest current degree is eliminated (ties go
    to the smallest index) and its neighbours are joined into a clique.

    :param pattern: any sparse matrix whose off-diagonal nonzeros give the graph
    :return: permutation vector ``p`` such that ``A[p][:, p]`` is factorized
    """
    coo = sp.coo_matrix(pattern)
    n = coo.shape[0]
    adjacency: List[set] = [set() for _ in range(n)]
    for i, j in zip(coo.row, coo.col):
        if i != j:
            adjacency[i].add(int(j))
            adjacency[j].add(int(i))

    remaining = set(range(n))
    order = []
    while remaining:
        node = min(remaining, key=lambda k: (len(adjacency[k]), k))
        neighbours = adjacency[node]
        for k in neighbours:
            adjacency[k].discard(node)
            adjacency[k].update(neighbours - {k})
        adjacency[node] = set()
        remaining.remove(node)
        order.append(node)
    return np.asarray(order, dtype=np.int64)


def _symbolic(full: sp.csc_matrix, perm: np.ndarray, pinv: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Elimination tree and column pointers of ``L`` for ``A[perm][:, perm]``.
    """
    n = full.shape[0]
    parent = np.full(n, -1, dtype=np.int64)
    flag = np.empty(n, dtype=np.int64)
    lnz = np.zeros(n, dtype=np.int64)
    indptr, indices = full.indptr, full.indices
    for k in range(n):
        flag[k] = k
        kk = perm[k]
        for p in range(indptr[kk], indptr[kk + 1]):
            i = pinv[indices[p]]
            if i < k:
                while flag[i] != k:
                    if parent[i] == -1:
                        parent[i] = k
                    lnz[i] += 1
                    flag[i] = k
                    i = parent[i]
    lp = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(lnz, out=lp[1:])
    return parent, lp


def _numeric(full: sp.csc_matrix, perm: np.ndarray, pinv: np.ndarray,
             parent: np.ndarray, lp: np.ndarray,
             tolerance: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = full.shape[0]
    li = np.zeros(lp[-1], dtype=np.int64)
    lx = np.zeros(lp[-1], dtype=float)
    d = np.zeros(n, dtype=float)
    y = np.zeros(n, dtype=float)
    pattern = np.zeros(n, dtype=np.int64)
    flag = np.empty(n, dtype=np.int64)
    lnz = np.zeros(n, dtype=np.int64)
    indptr, indices, data = full.indptr, full.indices, full.data
    for k in range(n):
        y[k] = 0.0
        top = n
        flag[k] = k
        kk = perm[k]
        for p in range(indptr[kk], indptr[kk + 1]):
            i = pinv[indices[p]]
            if i <= k:
                y[i] += data[p]
                length = 0
                while flag[i] != k:
                    pattern[length] = i
                    length += 1
                    flag[i] = k
                    i = parent[i]
                while length > 0:
                    top -= 1
                    length -= 1
                    pattern[top] = pattern[length]
        d[k] = y[k]
        y[k] = 0.0
        while top < n:
            i = pattern[top]
            yi = y[i]
            y[i] = 0.0
            p2 = lp[i] + lnz[i]
            for p in range(lp[i], p2):
                y[li[p]] -= lx[p] * yi
            l_ki = yi / d[i]
            d[k] -= l_ki * yi
            li[p2] = k
            lx[p2] = l_ki
            lnz[i] += 1
            top += 1
        if abs(d[k]) < tolerance:
            return li, lx, d[:k + 1]
    return li, lx, d


def sparse_ldlt(full: sp.csc_matrix, perm: np.ndarray,
                tolerance: float) -> Tuple[sp.csc_matrix, np.ndarray]:
    """
    Factorize ``A[perm][:, perm] = L D Lᵀ``.

    :param full: both triangles of a symmetric matrix in CSC form
    :param perm: fill-reducing permutation
    :param tolerance: absolute pivot magnitude below which factorization stops
    :return: unit lower triangular ``L`` (CSC) and the diagonal ``D``. When a
             pivot falls below ``tolerance`` the returned ``D`` is truncated
             just after the offending pivot.
    """
    n = full.shape[0]
    full = sp.csc_matrix(full)
    full.sort_indices()
    pinv = np.empty(n, dtype=np.int64)
    pinv[perm] = np.arange(n)
    parent, lp = _symbolic(full, perm, pinv)
    li, lx, d = _numeric(full, perm, pinv, parent, lp, tolerance)
    strict = sp.csc_matrix((lx, li, lp), shape=(n, n))
    logger.debug('sparse LDLt: order=%d nnz(A)=%d nnz(L)=%d', n, full.nnz, strict.nnz)
    return sp.csc_matrix(strict + sp.identity(n, format='csc')), d
