"""
Environment driven settings for the command line tool and the fitting service.
"""

import logging
from importlib.metadata import Distribution, PackageNotFoundError
from logging.config import dictConfig

from environs import Env

try:
    SERVER_VERSION = Distribution.from_name(__package__).version
except PackageNotFoundError:
    SERVER_VERSION = 'unknown'

LOG_FORMAT = ('[%(asctime)s] [%(levelname)s]'
              '[%(module)s:%(lineno)d %(process)d %(thread)d] %(message)s')


def logging_config(console_level: str, package_level: str, log_file: str, to_console: bool) -> dict:
    """
    dictConfig for the ``reml`` package logger. The file handler always
    receives everything the package logs; the console only in development.
    """
    package_handlers = ['console', 'file'] if to_console else ['file']
    return {
        'version': 1,
        'disable_existing_loggers': False,
        'formatters': {'simple': {'format': LOG_FORMAT}},
        'handlers': {
            'console': {'level': console_level, 'class': 'logging.StreamHandler', 'formatter': 'simple'},
            'file': {'level': 'DEBUG', 'class': 'logging.FileHandler', 'filename': log_file,
                     'formatter': 'simple', 'delay': True},
        },
        'loggers': {
            '': {'level': 'WARNING', 'handlers': ['console']},
            # no propagation, or records reach the root console twice
            'reml': {'level': package_level, 'handlers': package_handlers, 'propagate': False},
        }
    }


class Config:
    """
    Settings shared by every mode. Numerical options of a single fit are not
    read from the environment; they come from the command line or request.
    """
    DEBUG = False
    TESTING = False
    SERVER_VERSION = SERVER_VERSION

    def __init__(self):
        env = Env()
        env.read_env()  # a .env file is honoured too
        self.env = env

        self.REML_THREADS = max(1, env.int('REML_THREADS', 1))
        self.REML_DENSE_CAP = env.int('REML_DENSE_CAP', 2000)
        self.REML_SPARSE_MIN_ORDER = env.int('REML_SPARSE_MIN_ORDER', 50)
        self.REML_LOG_FILE = env('REML_LOG_FILE', '/tmp/reml.log')
        self.REML_LOG_LEVEL = env('REML_LOG_LEVEL', 'INFO').upper()

    @property
    def numerics(self) -> dict:
        """Keyword arguments for the fitting and evaluation routines."""
        return {
            'workers': self.REML_THREADS,
            'dense_cap': self.REML_DENSE_CAP,
            'sparse_min_order': self.REML_SPARSE_MIN_ORDER,
        }


class DevConfig(Config):
    """
    Development settings, also used by the command line tool.
    """
    ENV = 'development'
    DEBUG = True
    TESTING = True

    def __init__(self):
        super().__init__()
        dictConfig(logging_config(self.REML_LOG_LEVEL, 'DEBUG', self.REML_LOG_FILE, to_console=True))
        logging.getLogger(__name__).debug('numerics: %s', self.numerics)


class ProdConfig(Config):
    """
    Service settings; ``SECRET_KEY`` must be set.
    """
    ENV = 'production'

    def __init__(self):
        super().__init__()
        dictConfig(logging_config(self.REML_LOG_LEVEL, 'INFO', self.REML_LOG_FILE, to_console=False))
        self.SECRET_KEY = self.env('SECRET_KEY')
