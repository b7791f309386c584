import os
from setuptools import find_packages, setup


setup(
    name             =   'reml',
    version          =   os.getenv('BUILD_VERSION', '0+unknown'),
    description      =   'Variance component estimation for linear mixed models by restricted maximum likelihood',
    author           =   'FNNDSC Developers',
    author_email     =   'dev@babymri.org',
    packages         =   find_packages(exclude=['tests', 'tests.*']),
    install_requires =   ['numpy', 'scipy', 'pandas', 'Flask', 'Flask_RESTful', 'environs',
                          'pyserde', 'jinja2'],
    entry_points     =   {'console_scripts': ['reml=reml.cli:main']},
    license          =   'MIT',
    zip_safe         =   False,
    python_requires  =   '>=3.10.2'
)
