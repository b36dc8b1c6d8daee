import pytest

from dynrtm.compare import default_libraries
from dynrtm.scenario import bundled_scenario
from dynrtm.soc import load_soc
from dynrtm.space import load_space


@pytest.fixture(scope="session")
def space_params():
    return load_space()


@pytest.fixture(scope="session")
def space(space_params):
    return space_params[0]


@pytest.fixture(scope="session")
def params(space_params):
    return space_params[1]


@pytest.fixture(scope="session")
def soc():
    return load_soc()


@pytest.fixture(scope="session")
def libs(soc, space, params):
    return default_libraries(soc, space, params, seed=0)


@pytest.fixture(scope="session")
def single():
    return bundled_scenario("scenario-single")


@pytest.fixture(scope="session")
def dual():
    return bundled_scenario("scenario-dual")


# one PASS/FAIL line per acceptance criterion, printed after the run
_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, title = marker.args
    ok = _criteria.get(number, (title, True))[1] and rep.passed
    _criteria[number] = (title, ok)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok = _criteria[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}")
