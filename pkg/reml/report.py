"""
Serialized documents written by the command line tool and the service.

Every document is a pyserde dataclass; unknown fields are rejected when a
document is read back. :func:`report_schema` derives the JSON schema from the
same dataclasses, so the two cannot drift apart.
"""

import dataclasses
import json
import typing
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Dict, List, Optional, Type, TypeVar

import numpy as np
from jinja2 import Environment
from serde import serde, to_dict
from serde.json import from_json

from .model import ModelSpec
from .optimizer import FitReport, IterationRecord

SCHEMA_VERSION = '1.0'
VOLATILE_FIELDS = ('timestamp', 'elapsed_seconds')
"""Fields excluded when reports are compared for determinism."""

T = TypeVar('T')


@serde(deny_unknown_fields=True)
@dataclass
class IterationDoc:
    iteration: int
    theta: List[float]
    loglik: float
    score_norm: float
    step_scale: float
    halvings: int
    levenberg_shift: float
    fixed: List[str]


@serde(deny_unknown_fields=True)
@dataclass
class ParameterDoc:
    name: str
    estimate: float
    standard_error: Optional[float]
    score: float
    fixed: bool


@serde(deny_unknown_fields=True)
@dataclass
class EffectDoc:
    name: str
    estimate: float
    standard_error: float


@serde(deny_unknown_fields=True)
@dataclass
class FitReportDoc:
    schema_version: str
    kind: str
    algorithm: str
    converged: bool
    reason: str
    response: str
    n: int
    p: int
    b: int
    parameterization: str
    loglik: float
    loglik_components: Dict[str, float]
    parameters: List[ParameterDoc]
    information: List[List[float]]
    fixed_effects: List[EffectDoc]
    random_effects: List[EffectDoc]
    iterations: List[IterationDoc]
    timestamp: str
    elapsed_seconds: float


@serde(deny_unknown_fields=True)
@dataclass
class CheckDoc:
    name: str
    residual: float
    tolerance: float
    passed: bool


@serde(deny_unknown_fields=True)
@dataclass
class VerificationReportDoc:
    schema_version: str
    kind: str
    n: int
    p: int
    b: int
    parameter_names: List[str]
    theta: List[float]
    passed: bool
    checks: List[CheckDoc]
    timestamp: str
    elapsed_seconds: float


@serde(deny_unknown_fields=True)
@dataclass
class RouteDoc:
    route: str
    value: float
    components: Dict[str, float]


@serde(deny_unknown_fields=True)
@dataclass
class LoglikDoc:
    schema_version: str
    kind: str
    parameter_names: List[str]
    theta: List[float]
    routes: List[RouteDoc]


@serde(deny_unknown_fields=True)
@dataclass
class InfoDoc:
    schema_version: str
    kind: str
    parameter_names: List[str]
    theta: List[float]
    loglik: float
    score: List[float]
    observed: Optional[List[List[float]]]
    fisher: Optional[List[List[float]]]
    average: List[List[float]]
    splitting: Optional[List[List[float]]]


@serde(deny_unknown_fields=True)
@dataclass
class TruthDoc:
    parameter_names: List[str]
    theta: List[float]
    tau: List[float]
    seed: int


@serde(deny_unknown_fields=True)
@dataclass
class ErrorDoc:
    code: str
    message: str
    exit_code: int


def now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec='seconds')


def matrix(m: np.ndarray) -> List[List[float]]:
    return [[float(v) for v in row] for row in np.atleast_2d(m)]


def iteration_doc(record: IterationRecord) -> IterationDoc:
    return IterationDoc(**dataclasses.asdict(record))


def fit_report_doc(spec: ModelSpec, report: FitReport, elapsed_seconds: float = 0.0) -> FitReportDoc:
    parameters = [
        ParameterDoc(name=name, estimate=float(report.theta_hat[i]), standard_error=report.standard_errors[i],
                     score=float(report.score[i]), fixed=name in report.fixed_parameters)
        for i, name in enumerate(report.parameter_names)
    ]
    fixed_effects = [EffectDoc(name, float(e), float(s))
                     for name, e, s in zip(report.fixed_names, report.tau_hat, report.tau_se)]
    random_effects = [EffectDoc(name, float(e), float(s))
                      for name, e, s in zip(report.random_names, report.u_tilde, report.u_se)]
    return FitReportDoc(
        schema_version=SCHEMA_VERSION,
        kind='fit',
        algorithm=report.algorithm,
        converged=report.converged,
        reason=report.reason,
        response=spec.response_name,
        n=spec.n, p=spec.p, b=spec.b,
        parameterization=spec.parameterization.value,
        loglik=float(report.loglik),
        loglik_components={k: float(v) for k, v in report.loglik_components.items()},
        parameters=parameters,
        information=matrix(report.information),
        fixed_effects=fixed_effects,
        random_effects=random_effects,
        iterations=[iteration_doc(r) for r in report.iterations],
        timestamp=now(),
        elapsed_seconds=float(elapsed_seconds)
    )


def dumps(doc) -> str:
    return json.dumps(to_dict(doc), indent=2, allow_nan=False)


def loads(cls: Type[T], text: str) -> T:
    return from_json(cls, text)


def write_json(path: str, doc):
    with open(path, 'w') as f:
        f.write(dumps(doc) + '\n')


def without_volatile(doc) -> dict:
    """The document as a dict without its timestamp and timing fields."""
    d = to_dict(doc)
    for key in VOLATILE_FIELDS:
        d.pop(key, None)
    return d


_JSON_TYPES = {str: 'string', int: 'integer', float: 'number', bool: 'boolean'}
_DOCUMENTS = (FitReportDoc, VerificationReportDoc, LoglikDoc, InfoDoc, TruthDoc, ErrorDoc)


def _type_schema(tp) -> dict:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        inner = [a for a in args if a is not type(None)]
        return {'anyOf': [_type_schema(inner[0]), {'type': 'null'}]}
    if origin in (list, List):
        return {'type': 'array', 'items': _type_schema(args[0])}
    if origin in (dict, Dict):
        return {'type': 'object', 'additionalProperties': _type_schema(args[1])}
    if dataclasses.is_dataclass(tp):
        return {'$ref': f'#/$defs/{tp.__name__}'}
    return {'type': _JSON_TYPES[tp]}


def _object_schema(cls) -> dict:
    hints = typing.get_type_hints(cls)
    names = [f.name for f in dataclasses.fields(cls)]
    return {
        'type': 'object',
        'properties': {name: _type_schema(hints[name]) for name in names},
        'required': names,
        'additionalProperties': False,
    }


def _collect(cls, out: Dict[str, dict]):
    if cls.__name__ in out:
        return
    out[cls.__name__] = _object_schema(cls)
    for tp in typing.get_type_hints(cls).values():
        stack = [tp]
        while stack:
            t = stack.pop()
            if dataclasses.is_dataclass(t):
                _collect(t, out)
            stack.extend(typing.get_args(t))


def report_schema() -> dict:
    """
    JSON schema (draft 2020-12) of every document type. Objects do not admit
    properties beyond the ones listed.
    """
    defs: Dict[str, dict] = {}
    for cls in _DOCUMENTS:
        _collect(cls, defs)
    return {
        '$schema': 'https://json-schema.org/draft/2020-12/schema',
        '$id': f'https://reml.invalid/schema/{SCHEMA_VERSION}',
        'title': 'reml reports',
        'schema_version': SCHEMA_VERSION,
        'oneOf': [{'$ref': f'#/$defs/{cls.__name__}'} for cls in _DOCUMENTS],
        '$defs': defs,
    }


summary_template = Environment(trim_blocks=True, lstrip_blocks=True).from_string(r"""
REML fit of {{ doc.response }} ({{ doc.algorithm }}, {{ doc.parameterization }} parameterization)
n = {{ doc.n }}, p = {{ doc.p }}, b = {{ doc.b }}
{% if doc.converged %}
converged after {{ doc.iterations|length }} iterations
{% else %}
NOT converged: {{ doc.reason }} after {{ doc.iterations|length }} iterations
{% endif %}
restricted log-likelihood: {{ '%.8f'|format(doc.loglik) }}

{{ '%-24s %14s %14s %12s'|format('parameter', 'estimate', 'std. error', 'score') }}
{% for p in doc.parameters %}
{{ '%-24s %14.6g %14s %12.3e'|format(p.name, p.estimate, ('%.6g'|format(p.standard_error)) if p.standard_error is not none else '-', p.score) }}{% if p.fixed %}  (fixed at bound){% endif %}

{% endfor %}

{{ '%-24s %14s %14s'|format('fixed effect', 'estimate', 'std. error') }}
{% for e in doc.fixed_effects %}
{{ '%-24s %14.6g %14.6g'|format(e.name, e.estimate, e.standard_error) }}
{% endfor %}
{% if doc.random_effects %}

{{ doc.random_effects|length }} random effects predicted; largest |u| = {{ '%.6g'|format(doc.random_effects|map(attribute='estimate')|map('abs')|max) }}
{% endif %}
""")


def render_summary(doc: FitReportDoc) -> str:
    return summary_template.render(doc=doc).strip() + '\n'
