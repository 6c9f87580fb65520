"""Certified numerical counterexamples to unique continuation for singular wave equations.

Modules: geometry, eikonal, bands, transport, interference, assembly, aads,
with ``pipeline`` and ``io`` for orchestration and report files.
"""
from importlib import resources

__version__ = "0.1.0"


def data_path(name):
    """Path of a file shipped in beamcert/data."""
    return resources.files(__name__).joinpath("data", name)
