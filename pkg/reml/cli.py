"""
Command line interface.

Exit codes: 0 success, 1 input error, 2 non-convergence (the partial report
is still written), 3 numerical failure.
"""

import argparse
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Tuple

from serde import to_dict

from .config import Config, DevConfig, ProdConfig
from .exceptions import NonConvergence, ParseError, RemlException
from .infomat import DenseDerivatives, evaluate_fast
from .ingest import ingest
from .likelihood import loglik_ml, loglik_via_C, loglik_via_V, loglik_via_contrast
from .mme import assemble, dump_mme
from .model import ModelSpec, Parameterization, ThetaVector
from .optimizer import Algorithm, FitOptions, FitReport, IterationRecord, default_start, fit
from .report import (SCHEMA_VERSION, CheckDoc, ErrorDoc, FitReportDoc, InfoDoc, LoglikDoc, RouteDoc,
                     VerificationReportDoc, dumps, fit_report_doc, iteration_doc, matrix, now,
                     render_summary, report_schema)
from .simulate import simulate_dataset, write_dataset
from .verify import verify

logger = logging.getLogger(__name__)

EXIT_OK = 0


def parse_theta(text: Optional[str], spec: ModelSpec) -> ThetaVector:
    """
    ``θ`` from a comma separated list, or the default start when absent.
    """
    if text is None:
        return ThetaVector.from_array(spec, default_start(spec))
    try:
        values = [float(s) for s in text.split(',') if s.strip()]
    except ValueError:
        raise ParseError(f'--theta must be a comma separated list of numbers, got {text!r}')
    return ThetaVector.from_array(spec, values)


def run_fit(spec: ModelSpec, options: FitOptions) -> Tuple[FitReportDoc, FitReport]:
    """
    Fit and serialize. A non-converged fit is serialized too and the
    exception re-raised with the document attached.
    """
    started = time.perf_counter()
    try:
        report = fit(spec, options)
    except NonConvergence as e:
        if e.report is not None:
            e.doc = fit_report_doc(spec, e.report, time.perf_counter() - started)
        raise
    return fit_report_doc(spec, report, time.perf_counter() - started), report


def loglik_doc(spec: ModelSpec, theta: ThetaVector, dense_cap: int, sparse_min_order: int,
               workers: int = 1) -> LoglikDoc:
    values = [loglik_via_C(spec, theta, sparse_min_order=sparse_min_order, workers=workers)]
    if spec.n <= dense_cap:
        values += [loglik_via_V(spec, theta), loglik_via_contrast(spec, theta), loglik_ml(spec, theta)]
    routes = [RouteDoc(route=v.route.value, value=float(v.value),
                       components={k: float(c) for k, c in v.components.items()}) for v in values]
    return LoglikDoc(schema_version=SCHEMA_VERSION, kind='loglik', parameter_names=spec.param_names,
                     theta=theta.as_array().tolist(), routes=routes)


def info_doc(spec: ModelSpec, theta: ThetaVector, dense_cap: int, sparse_min_order: int,
             workers: int = 1) -> InfoDoc:
    fast = evaluate_fast(spec, theta, sparse_min_order=sparse_min_order, workers=workers)
    observed = fisher = splitting = None
    if spec.n <= dense_cap:
        bundle = DenseDerivatives(spec, theta, dense_cap=dense_cap).bundle()
        observed, fisher, splitting = matrix(bundle.observed), matrix(bundle.fisher), matrix(bundle.splitting)
    else:
        logger.warning('n=%d is above the dense cap %d; only the fast score and average information '
                       'are reported', spec.n, dense_cap)
    return InfoDoc(schema_version=SCHEMA_VERSION, kind='info', parameter_names=spec.param_names,
                   theta=theta.as_array().tolist(), loglik=float(fast.loglik.value),
                   score=fast.score.tolist(), observed=observed, fisher=fisher,
                   average=matrix(fast.average), splitting=splitting)


def verify_doc(spec: ModelSpec, theta: ThetaVector, dense_cap: int) -> VerificationReportDoc:
    started = time.perf_counter()
    checks = verify(spec, theta, dense_cap=dense_cap)
    docs = [CheckDoc(name=c.name, residual=float(c.residual), tolerance=c.tolerance, passed=c.passed)
            for c in checks]
    return VerificationReportDoc(schema_version=SCHEMA_VERSION, kind='verify', n=spec.n, p=spec.p, b=spec.b,
                                 parameter_names=spec.param_names, theta=theta.as_array().tolist(),
                                 passed=all(d.passed for d in docs), checks=docs, timestamp=now(),
                                 elapsed_seconds=time.perf_counter() - started)


def _write(text: str, out: Optional[str]):
    if out:
        with open(out, 'w') as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _emit(doc, args):
    if getattr(args, 'format', 'json') == 'text' and isinstance(doc, FitReportDoc):
        _write(render_summary(doc), args.out)
    else:
        _write(dumps(doc) + '\n', args.out)


@contextmanager
def _tracer(target: Optional[str]) -> Iterator[Optional[Callable[[IterationRecord], None]]]:
    """
    JSON lines per iteration to ``target`` (``-`` for stderr); the file is
    closed when the fit ends, converged or not.
    """
    if target is None:
        yield None
        return
    stream = sys.stderr if target == '-' else open(target, 'w')

    def trace(record: IterationRecord):
        stream.write(json.dumps(to_dict(iteration_doc(record)), allow_nan=False) + '\n')
        stream.flush()

    try:
        yield trace
    finally:
        if stream is not sys.stderr:
            stream.close()


def fit_command(args, config: Config) -> int:
    spec = ingest(args.data, args.model)
    start = parse_theta(args.theta, spec).as_array() if args.theta else None
    with _tracer(args.trace) as trace:
        options = FitOptions(
            algorithm=Algorithm(args.algorithm),
            max_iter=args.max_iter,
            gtol=args.gtol,
            ltol=args.ltol,
            start=start,
            trace=trace,
            **config.numerics
        )
        try:
            doc, report = run_fit(spec, options)
        except NonConvergence as e:
            if e.doc is not None:
                _emit(e.doc, args)
            raise
    if args.dump_mme:
        dump_mme(assemble(spec, report.theta(spec), sparse_min_order=options.sparse_min_order), args.dump_mme)
    _emit(doc, args)
    return EXIT_OK


def loglik_command(args, config: Config) -> int:
    spec = ingest(args.data, args.model)
    numerics = config.numerics
    _emit(loglik_doc(spec, parse_theta(args.theta, spec), numerics['dense_cap'],
                     numerics['sparse_min_order'], numerics['workers']), args)
    return EXIT_OK


def info_command(args, config: Config) -> int:
    spec = ingest(args.data, args.model)
    numerics = config.numerics
    _emit(info_doc(spec, parse_theta(args.theta, spec), numerics['dense_cap'],
                   numerics['sparse_min_order'], numerics['workers']), args)
    return EXIT_OK


def verify_command(args, config: Config) -> int:
    spec = ingest(args.data, args.model)
    doc = verify_doc(spec, parse_theta(args.theta, spec), config.REML_DENSE_CAP)
    _emit(doc, args)
    return EXIT_OK if doc.passed else 3


def simulate_command(args, config: Config) -> int:
    dataset = simulate_dataset(args.groups, args.per_group, args.sigma_u2, args.sigma_e2, seed=args.seed,
                               phi=args.phi, mean=args.mean,
                               parameterization=Parameterization(args.parameterization))
    write_dataset(args.out, dataset)
    return EXIT_OK


def schema_command(args, config: Config) -> int:
    _write(json.dumps(report_schema(), indent=2) + '\n', args.out)
    return EXIT_OK


def serve_command(args, config: Config) -> int:
    from .app import create_app
    app = create_app()
    app.run(host=args.host, port=args.port)
    return EXIT_OK


def _add_instance_arguments(p: argparse.ArgumentParser, with_theta: bool = True):
    p.add_argument('--data', required=True, help='CSV data table with a header row')
    p.add_argument('--model', required=True, help='model configuration file')
    if with_theta:
        p.add_argument('--theta', help='comma separated parameter values (default: starting values)')
    p.add_argument('--out', help='output file (default: standard output)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='reml', description='Variance component estimation for linear '
                                                               'mixed models by restricted maximum likelihood')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('fit', help='estimate the variance parameters')
    _add_instance_arguments(p)
    p.add_argument('--algorithm', choices=[a.value for a in Algorithm], default=Algorithm.ai.value)
    p.add_argument('--max-iter', type=int, default=100)
    p.add_argument('--gtol', type=float, default=1e-6)
    p.add_argument('--ltol', type=float, default=1e-8)
    p.add_argument('--trace', nargs='?', const='-',
                   help='stream iterations as JSON lines to this file (default: standard error)')
    p.add_argument('--dump-mme', metavar='PATH', help='write C at the estimate in Matrix Market format')
    p.add_argument('--format', choices=('json', 'text'), default='json')
    p.set_defaults(func=fit_command)

    p = sub.add_parser('loglik', help='evaluate the restricted log-likelihood by every route')
    _add_instance_arguments(p)
    p.set_defaults(func=loglik_command)

    p = sub.add_parser('info', help='score and information matrices')
    _add_instance_arguments(p)
    p.set_defaults(func=info_command)

    p = sub.add_parser('verify', help='check the likelihood and information identities')
    _add_instance_arguments(p)
    p.set_defaults(func=verify_command)

    p = sub.add_parser('simulate', help='write a simulated balanced one-way dataset')
    p.add_argument('--groups', type=int, default=8)
    p.add_argument('--per-group', type=int, default=6)
    p.add_argument('--sigma-u2', type=float, default=0.5)
    p.add_argument('--sigma-e2', type=float, default=1.0)
    p.add_argument('--phi', type=float, help='AR(1) residual correlation along the row order')
    p.add_argument('--mean', type=float, default=0.0)
    p.add_argument('--parameterization', choices=[m.value for m in Parameterization],
                   default=Parameterization.ratio.value)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--out', required=True, help='output directory')
    p.set_defaults(func=simulate_command)

    p = sub.add_parser('schema', help='print the JSON schema of the reports')
    p.add_argument('--out')
    p.set_defaults(func=schema_command)

    p = sub.add_parser('serve', help='run the fitting service in development mode')
    p.add_argument('--host', default='0.0.0.0')
    p.add_argument('--port', type=int, default=int(os.getenv('PORT', 5010)))
    p.set_defaults(func=serve_command)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if 'APPLICATION_MODE' not in os.environ:
        os.environ['APPLICATION_MODE'] = 'dev'
    config = ProdConfig() if os.environ['APPLICATION_MODE'] == 'production' else DevConfig()
    logger.info('reml %s started', args.command)
    try:
        code = args.func(args, config)
    except NonConvergence as e:
        logger.error('%s: %s', e.code, e)
        return e.exit_code
    except RemlException as e:
        logger.error('%s: %s', e.code, e)
        sys.stderr.write(dumps(ErrorDoc(code=e.code, message=str(e), exit_code=e.exit_code)) + '\n')
        return e.exit_code
    logger.info('reml %s finished with exit code %d', args.command, code)
    return code
