"""
Turn a CSV data table and a model configuration file into a :class:`ModelSpec`.

The configuration is plain ``key = value`` text; ``#`` starts a comment::

    response = yield
    fixed = variety, rain
    random = block
    intercept = yes
    residual = ar1
    residual.order = plot
    phi.lower = -0.99
    phi.upper = 0.99
    gamma.lower = 0
    parameterization = ratio

Categorical fixed effects are dummy coded with their first level dropped;
every grouping factor in ``random`` contributes one indicator block to ``Z``.
Levels are enumerated in order of first appearance.

Instead of one iid block per factor, ``G`` and ``R`` may be given as
explicit linear structures ``M₀ + Σₖ θₖ Mₖ`` read from Matrix Market files::

    random = animal
    random.structure = explicit
    random.matrices = relationship.mtx
    random.names = gamma[animal]
    residual = explicit
    residual.base = identity.mtx

``random.base`` and ``residual.matrices`` work the same way. Rows and columns
of an explicit ``G`` follow the random effects in level order, those of an
explicit ``R`` the (sorted) data rows. Relative paths are resolved against
the directory of the configuration file.
"""

import io
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, TextIO, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .ar1structure import PHI_LIMIT, AR1Residual
from .exceptions import ParseError, RankDeficient, UnknownColumn, ZeroPivot
from .explicitstructure import ExplicitStructure
from .iidstructure import IdentityResidual, IidBlocksStructure
from .linalg import ldlt_factor
from .model import ModelSpec, Parameterization

logger = logging.getLogger(__name__)

Source = Union[str, TextIO]

INTERCEPT = '(intercept)'
KEYS = ('response', 'fixed', 'random', 'intercept', 'residual', 'residual.order',
        'phi.lower', 'phi.upper', 'gamma.lower', 'parameterization',
        'random.structure', 'random.base', 'random.matrices', 'random.names',
        'residual.base', 'residual.matrices', 'residual.names')


@dataclass(frozen=True)
class DataTable:
    frame: pd.DataFrame
    categorical: List[str]

    @property
    def columns(self) -> List[str]:
        return list(self.frame.columns)

    @property
    def n_rows(self) -> int:
        return len(self.frame)

    def levels(self, column: str) -> List[str]:
        return [str(v) for v in pd.unique(self.frame[column].astype(str))]

    def numeric(self, column: str) -> np.ndarray:
        if column in self.categorical:
            raise ParseError(f'column {column!r} is not numeric')
        return self.frame[column].to_numpy(dtype=float)


def read_table(source: Source) -> DataTable:
    """
    :raises ParseError: if the CSV cannot be parsed, is empty or has missing cells
    """
    try:
        frame = pd.read_csv(source, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError, OSError) as e:
        raise ParseError(f'cannot read data table: {e}')
    if frame.empty:
        raise ParseError('data table has no rows')
    if frame.columns.duplicated().any():
        raise ParseError(f'duplicate column names: {list(frame.columns[frame.columns.duplicated()])}')
    if frame.isna().any().any():
        bad = [c for c in frame.columns if frame[c].isna().any()]
        raise ParseError(f'data table has missing values in {bad}')
    categorical = [c for c in frame.columns if not pd.api.types.is_numeric_dtype(frame[c])]
    return DataTable(frame=frame, categorical=categorical)


@dataclass(frozen=True)
class ExplicitFiles:
    """
    Matrix Market files of an explicit structure, already resolved to paths.
    """
    matrices: List[str]
    base: Optional[str] = None
    names: List[str] = field(default_factory=list)

    def structure(self, prefix: str) -> ExplicitStructure:
        names = self.names or [f'{prefix}[{Path(p).stem}]' for p in self.matrices]
        try:
            return ExplicitStructure.from_files(self.matrices, self.base, names=names)
        except ValueError as e:
            raise ParseError(f'bad explicit structure in {self.matrices + [self.base or ""]}: {e}')


@dataclass(frozen=True)
class ModelConfig:
    response: str
    fixed: List[str] = field(default_factory=list)
    random: List[str] = field(default_factory=list)
    intercept: bool = True
    residual: str = 'identity'
    residual_order: Optional[str] = None
    phi_lower: float = -PHI_LIMIT
    phi_upper: float = PHI_LIMIT
    gamma_lower: float = 0.0
    parameterization: Parameterization = Parameterization.ratio
    random_files: Optional[ExplicitFiles] = None
    residual_files: Optional[ExplicitFiles] = None


def _split(value: str) -> List[str]:
    return [s.strip() for s in value.split(',') if s.strip()]


def _float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ParseError(f'{key} must be a number, got {value!r}')


def _explicit_files(entries: Dict[str, str], prefix: str, selector: str, directory: Optional[str],
                    allow_files: bool) -> Optional[ExplicitFiles]:
    keys = [k for k in (f'{prefix}.base', f'{prefix}.matrices', f'{prefix}.names') if k in entries]
    if entries.get(selector, '').lower() != 'explicit':
        if keys:
            raise ParseError(f'{keys} need {selector} = explicit')
        return None
    if not allow_files:
        raise ParseError('explicit structures read matrix files and are only accepted from the command line')

    def resolve(path: str) -> str:
        return path if directory is None or os.path.isabs(path) else os.path.join(directory, path)

    matrices = [resolve(p) for p in _split(entries.get(f'{prefix}.matrices', ''))]
    base = resolve(entries[f'{prefix}.base']) if entries.get(f'{prefix}.base') else None
    names = _split(entries.get(f'{prefix}.names', ''))
    if not matrices and base is None:
        raise ParseError(f'an explicit {prefix} structure needs {prefix}.base or {prefix}.matrices')
    if names and len(names) != len(matrices):
        raise ParseError(f'{prefix}.names lists {len(names)} names for {len(matrices)} matrices')
    if not names and len({Path(p).stem for p in matrices}) < len(matrices):
        raise ParseError(f'{prefix}.matrices share file names; set {prefix}.names')
    return ExplicitFiles(matrices=matrices, base=base, names=names)


def parse_model_config(source: Source, allow_files: bool = True) -> ModelConfig:
    """
    :param allow_files: whether explicit structures, which name matrix files,
                        are accepted
    :raises ParseError: on malformed lines, unknown keys or bad values
    """
    directory = None
    if hasattr(source, 'read'):
        text = source.read()
    else:
        text = _read_text(source)
        directory = os.path.dirname(os.path.abspath(source))
    entries: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ParseError(f'model config line {number}: expected key = value, got {raw!r}')
        key, value = (s.strip() for s in line.split('=', 1))
        if key not in KEYS:
            raise ParseError(f'model config line {number}: unknown key {key!r}')
        if key in entries:
            raise ParseError(f'model config line {number}: duplicate key {key!r}')
        entries[key] = value
    if not entries.get('response'):
        raise ParseError('model config must name the response column')
    intercept = entries.get('intercept', 'yes').lower()
    if intercept not in ('yes', 'no'):
        raise ParseError(f'intercept must be yes or no, got {intercept!r}')
    residual = entries.get('residual', 'identity').lower()
    if residual not in ('identity', 'ar1', 'explicit'):
        raise ParseError(f'residual must be identity, ar1 or explicit, got {residual!r}')
    structure = entries.get('random.structure', 'iid').lower()
    if structure not in ('iid', 'explicit'):
        raise ParseError(f'random.structure must be iid or explicit, got {structure!r}')
    if structure == 'explicit' and not _split(entries.get('random', '')):
        raise ParseError('an explicit random structure needs the random columns that build Z')
    try:
        parameterization = Parameterization(entries.get('parameterization', 'ratio').lower())
    except ValueError:
        raise ParseError(f'parameterization must be ratio or component, got {entries["parameterization"]!r}')
    config = ModelConfig(
        response=entries['response'],
        fixed=_split(entries.get('fixed', '')),
        random=_split(entries.get('random', '')),
        intercept=intercept == 'yes',
        residual=residual,
        residual_order=entries.get('residual.order') or None,
        phi_lower=_float('phi.lower', entries['phi.lower']) if 'phi.lower' in entries else -PHI_LIMIT,
        phi_upper=_float('phi.upper', entries['phi.upper']) if 'phi.upper' in entries else PHI_LIMIT,
        gamma_lower=_float('gamma.lower', entries['gamma.lower']) if 'gamma.lower' in entries else 0.0,
        parameterization=parameterization,
        random_files=_explicit_files(entries, 'random', 'random.structure', directory, allow_files),
        residual_files=_explicit_files(entries, 'residual', 'residual', directory, allow_files)
    )
    if not -1.0 < config.phi_lower < config.phi_upper < 1.0:
        raise ParseError(f'phi bounds must satisfy -1 < lower < upper < 1, '
                         f'got [{config.phi_lower}, {config.phi_upper}]')
    if config.gamma_lower < 0:
        raise ParseError(f'gamma.lower must not be negative, got {config.gamma_lower}')
    if not config.intercept and not config.fixed:
        raise ParseError('a model without intercept needs at least one fixed column')
    return config


def _read_text(path: str) -> str:
    try:
        with open(path) as f:
            return f.read()
    except OSError as e:
        raise ParseError(f'cannot read model config {path}: {e}')


def _check_columns(table: DataTable, config: ModelConfig):
    wanted = [config.response] + config.fixed + config.random
    if config.residual_order:
        wanted.append(config.residual_order)
    missing = [c for c in wanted if c not in table.frame.columns]
    if missing:
        raise UnknownColumn(f'model config names unknown columns {missing}; table has {table.columns}')


def _fixed_design(table: DataTable, config: ModelConfig):
    columns, names = [], []
    if config.intercept:
        columns.append(np.ones(table.n_rows))
        names.append(INTERCEPT)
    for c in config.fixed:
        if c in table.categorical:
            values = table.frame[c].astype(str).to_numpy()
            for level in table.levels(c)[1:]:
                columns.append((values == level).astype(float))
                names.append(f'{c}[{level}]')
        else:
            columns.append(table.numeric(c))
            names.append(c)
    X = np.column_stack(columns)
    try:
        ldlt_factor(X.T @ X, equilibrate=True)
    except ZeroPivot as e:
        raise RankDeficient(f'fixed-effect design is rank deficient at column {names[e.index]!r}; '
                            f'it is a combination of {names[:e.index]}',
                            columns=[names[e.index]], exit_code=1, status_code=400)
    return X, names


def _random_design(table: DataTable, config: ModelConfig):
    blocks, names, sizes = [], [], []
    n = table.n_rows
    for c in config.random:
        values = table.frame[c].astype(str).to_numpy()
        levels = table.levels(c)
        index = {level: j for j, level in enumerate(levels)}
        cols = np.array([index[v] for v in values])
        blocks.append(sp.csc_matrix((np.ones(n), (np.arange(n), cols)), shape=(n, len(levels))))
        names += [f'{c}[{level}]' for level in levels]
        sizes.append(len(levels))
    if not blocks:
        return sp.csc_matrix((n, 0)), [], None
    if config.random_files is not None:
        g = config.random_files.structure('gamma')
        if g.dimension != len(names):
            raise ParseError(f'explicit G has order {g.dimension}, but {config.random} have {len(names)} levels')
    else:
        g = IidBlocksStructure(sizes, names=[f'gamma[{c}]' for c in config.random], lower=config.gamma_lower)
    return sp.csc_matrix(sp.hstack(blocks)), names, g


def _residual(n: int, config: ModelConfig):
    if config.residual == 'ar1':
        return AR1Residual(n, lower=config.phi_lower, upper=config.phi_upper)
    if config.residual == 'explicit':
        r = config.residual_files.structure('phi')
        if r.dimension != n:
            raise ParseError(f'explicit R has order {r.dimension}, but the table has {n} rows')
        return r
    return IdentityResidual(n)


def build_spec(table: DataTable, config: ModelConfig) -> ModelSpec:
    _check_columns(table, config)
    if config.residual_order:
        frame = table.frame.sort_values(config.residual_order, kind='mergesort').reset_index(drop=True)
        table = DataTable(frame=frame, categorical=table.categorical)
    y = table.numeric(config.response)
    X, fixed_names = _fixed_design(table, config)
    Z, random_names, g = _random_design(table, config)
    r = _residual(table.n_rows, config)
    spec = ModelSpec.build(y, X, Z, g, r, parameterization=config.parameterization,
                           fixed_names=fixed_names, random_names=random_names,
                           response_name=config.response)
    logger.info('model for %r: n=%d, p=%d, b=%d, parameters %s', config.response, spec.n, spec.p,
                spec.b, spec.param_names)
    return spec


def ingest(data: Source, model: Source, allow_files: bool = True) -> ModelSpec:
    """
    :param allow_files: whether explicit structures may read matrix files
    :raises ParseError: if either file is malformed
    :raises UnknownColumn: if the configuration names a missing column
    :raises RankDeficient: naming the first fixed-effect column that adds no rank
    """
    return build_spec(read_table(data), parse_model_config(model, allow_files))


def ingest_text(data: str, model: str, allow_files: bool = False) -> ModelSpec:
    return ingest(io.StringIO(data), io.StringIO(model), allow_files)
