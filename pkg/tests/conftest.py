import numpy as np
import pytest

from beamcert.bands import band_domain
from beamcert.geometry import DomainSpec, PlanarConformal, ScalarField, SingularPotential
from beamcert.pipeline import RunConfig, run_pipeline
from beamcert.transport import BandOperator, HierarchyConfig

SMALL_RES = (65, 17, 129)
_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: runs the full-resolution pipeline")


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def criteria_log():
    return _CRITERIA


def make_op(n, res=SMALL_RES, spec=None, **cfg):
    spec = spec or DomainSpec()
    band = band_domain(n, spec, res)
    return BandOperator(band, PlanarConformal([1.0]), SingularPotential(-1.0),
                        ScalarField.linear([0.0, 0.5, 0.0]), HierarchyConfig(**cfg))


@pytest.fixture(scope="session")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    cfg = RunConfig(resolution=SMALL_RES, n0=12, nmax=15, out=str(out), n_interior=20, n_near=6)
    res = run_pipeline(cfg, stages=("eikonal", "bands", "surfaces", "correction", "assembly"))
    return res


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
