"""
WSGI entry point of the fitting service, e.g. ``gunicorn reml.wsgi:application``.
"""

import os

from reml.app import create_app

os.environ.setdefault("APPLICATION_MODE", "production")

application = create_app()
