import logging

import numpy as np
from flask import current_app as app
from flask_restful import reqparse, abort, Resource
from serde import to_dict

from .cli import loglik_doc, run_fit
from .exceptions import NonConvergence, RemlException
from .ingest import ingest_text
from .model import ThetaVector
from .optimizer import FitOptions, default_start

logger = logging.getLogger(__name__)

parser = reqparse.RequestParser(bundle_errors=True)
parser.add_argument('data', dest='data', type=str, location='json', required=True)
parser.add_argument('model', dest='model', type=str, location='json', required=True)
parser.add_argument('theta', dest='theta', type=list, location='json', required=False)

fit_parser = parser.copy()
fit_parser.add_argument('algorithm', dest='algorithm', choices=('newton', 'fisher', 'ai'),
                        location='json', default='ai')
fit_parser.add_argument('max_iter', dest='max_iter', type=int, location='json', default=100)
fit_parser.add_argument('gtol', dest='gtol', type=float, location='json', default=1e-6)
fit_parser.add_argument('ltol', dest='ltol', type=float, location='json', default=1e-8)


def _theta_values(args, spec):
    if args.theta is None:
        return None
    try:
        return np.asarray([float(v) for v in args.theta])
    except (TypeError, ValueError):
        abort(400, message='"theta" must be a list of numbers', code='ParseError')


class ServerResource(Resource):
    """
    Resource describing the running service.
    """

    def get(self):
        return {
            'server_version': app.config.get('SERVER_VERSION')
        }


class FitListResource(Resource):
    """
    Resource representing the REML fits requested from the service. Fits run
    synchronously and are not stored.
    """

    def post(self):
        args = fit_parser.parse_args()
        numerics = app.config['NUMERICS']
        try:
            spec = ingest_text(args.data, args.model)
            options = FitOptions(algorithm=args.algorithm, max_iter=args.max_iter, gtol=args.gtol,
                                 ltol=args.ltol, start=_theta_values(args, spec), **numerics)
            logger.info(f'Fitting n={spec.n} p={spec.p} b={spec.b} with {options.algorithm.value}')
            doc, _ = run_fit(spec, options)
        except NonConvergence as e:
            logger.warning(f'Fit did not converge: {e}')
            doc = e.doc
            if doc is None:
                abort(e.status_code, message=str(e), code=e.code)
            return to_dict(doc), 200
        except RemlException as e:
            logger.error(f'Fit failed with {e.code}: {e}')
            abort(e.status_code, message=str(e), code=e.code)
        return to_dict(doc), 201


class LoglikResource(Resource):
    """
    Resource evaluating the restricted log-likelihood by every route.
    """

    def post(self):
        args = parser.parse_args()
        numerics = app.config['NUMERICS']
        try:
            spec = ingest_text(args.data, args.model)
            values = _theta_values(args, spec)
            theta = ThetaVector.from_array(spec, default_start(spec) if values is None else values)
            doc = loglik_doc(spec, theta, numerics['dense_cap'], numerics['sparse_min_order'],
                             numerics['workers'])
        except RemlException as e:
            logger.error(f'Log-likelihood failed with {e.code}: {e}')
            abort(e.status_code, message=str(e), code=e.code)
        return to_dict(doc)
