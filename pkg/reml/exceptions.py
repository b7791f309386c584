"""
Exception hierarchy for ``reml``.

Every exception carries a stable machine-readable ``code``, the process
``exit_code`` the command line front door uses, and the HTTP
``status_code`` the fitting service answers with.
"""


class RemlException(Exception):
    code = 'reml_error'
    exit_code = 1
    status_code = 400

    def __init__(self, msg, **kwargs):
        self.exit_code = kwargs.get('exit_code', self.exit_code)
        self.status_code = kwargs.get('status_code', self.status_code)
        super().__init__(msg)


class InputError(RemlException):
    code = 'input_error'


class ParseError(InputError):
    code = 'parse_error'


class UnknownColumn(InputError):
    code = 'unknown_column'


class DimensionMismatch(InputError):
    code = 'dimension_mismatch'


class IndexOutOfRange(InputError):
    code = 'index_out_of_range'


class InadmissibleParameter(InputError):
    code = 'inadmissible_parameter'


class OracleCapExceeded(InputError):
    code = 'oracle_cap_exceeded'
    status_code = 413


class NumericalError(RemlException):
    code = 'numerical_error'
    exit_code = 3
    status_code = 422


class ZeroPivot(NumericalError):
    code = 'zero_pivot'

    def __init__(self, msg, **kwargs):
        self.index = kwargs.get('index')
        super().__init__(msg, **kwargs)


class NotPositiveDefinite(NumericalError):
    code = 'not_positive_definite'


class RankDeficient(NumericalError):
    code = 'rank_deficient'

    def __init__(self, msg, **kwargs):
        self.columns = list(kwargs.get('columns') or [])
        super().__init__(msg, **kwargs)


class SingularInformation(NumericalError):
    code = 'singular_information'


class NonConvergence(RemlException):
    """
    Raised when an estimation loop stops without meeting its convergence
    contract. The partial :class:`reml.optimizer.FitReport` is attached so
    callers can still emit it.
    """
    code = 'non_convergence'
    exit_code = 2
    status_code = 200

    def __init__(self, msg, **kwargs):
        self.report = kwargs.get('report')
        self.doc = None
        super().__init__(msg, **kwargs)


class MaxIterations(NonConvergence):
    code = 'max_iterations'


class BoundaryStall(NonConvergence):
    code = 'boundary_stall'
