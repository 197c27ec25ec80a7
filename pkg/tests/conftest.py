import pytest

from ginsim.fabric import LatencyModel, SimFabric
from ginsim.runtime import GinConfig, LocalWorld

# filled by test_acceptance; echoed once at the end of the run
CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[n])


def local_world(size=2, backend="direct", model=None, **cfg):
    fabric = SimFabric(model or LatencyModel())
    return LocalWorld(size, fabric, GinConfig(backend=backend, **cfg))


@pytest.fixture(params=["direct", "proxy"])
def backend(request):
    return request.param
