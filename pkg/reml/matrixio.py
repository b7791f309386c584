"""
File formats for matrices: Matrix Market coordinate files for sparse
symmetric matrices (lower triangle) and plain headerless CSV for dense ones.
"""

import logging
from os import PathLike
from typing import Union

import numpy as np
import pandas as pd
import scipy.io
import scipy.sparse as sp

from .exceptions import ParseError
from .linalg import DenseMatrix, SparseSymmetric

logger = logging.getLogger(__name__)

Path = Union[str, PathLike]


def read_sparse_symmetric(path: Path) -> SparseSymmetric:
    try:
        m = scipy.io.mmread(path)
    except (ValueError, OSError) as e:
        raise ParseError(f'cannot read Matrix Market file {path}: {e}')
    return SparseSymmetric.from_matrix(sp.csc_matrix(m))


def write_sparse_symmetric(path: Path, a: SparseSymmetric, comment: str = ''):
    """
    Write ``a`` as a ``coordinate real symmetric`` Matrix Market file;
    only the lower triangle is stored.
    """
    scipy.io.mmwrite(path, sp.coo_matrix(a.to_full()), comment=comment, symmetry='symmetric')
    logger.debug('wrote order-%d matrix with %d stored entries to %s', a.order, a.nnz, path)


def read_dense_csv(path: Path) -> DenseMatrix:
    try:
        frame = pd.read_csv(path, header=None)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, OSError) as e:
        raise ParseError(f'cannot read matrix CSV {path}: {e}')
    try:
        values = frame.to_numpy(dtype=float)
    except ValueError as e:
        raise ParseError(f'matrix CSV {path} has non-numeric entries: {e}')
    if not np.all(np.isfinite(values)):
        raise ParseError(f'matrix CSV {path} has missing or non-finite entries')
    return values


def write_dense_csv(path: Path, m: DenseMatrix):
    pd.DataFrame(np.atleast_2d(m)).to_csv(path, header=False, index=False, float_format='%.17g')
