import pytest

from fbsde_hjb.benchmarks import MarketParams, build_merton, build_riskmin, default_grid
from fbsde_hjb.solver import solve

MERTON = MarketParams(b=0.05, sigma=0.2, T=1.0, x0=1.0)
RISKMIN = MarketParams(b=0.2, sigma=0.4, T=1.0, x0=1.0)


@pytest.fixture(scope="session")
def merton_spec():
    return build_merton(MERTON)


@pytest.fixture(scope="session")
def merton_report(merton_spec):
    return solve(merton_spec, default_grid(merton_spec))


@pytest.fixture(scope="session")
def riskmin_spec():
    return build_riskmin(RISKMIN)


@pytest.fixture(scope="session")
def riskmin_report(riskmin_spec):
    return solve(riskmin_spec, default_grid(riskmin_spec))


class Criterion:
    """Collects the one-line summary an acceptance test reports."""

    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.detail = ""


_CRITERIA: dict[int, tuple[str, str]] = {}


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    return Criterion(*marker.args)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    crit = item.funcargs.get("criterion") if hasattr(item, "funcargs") else None
    if crit is None or rep.when != "call":
        return
    verdict = "PASS" if rep.passed else "FAIL"
    line = f"[{verdict}] criterion {crit.number:2d}: {crit.title}"
    if crit.detail:
        line += f" | {crit.detail}"
    _CRITERIA[crit.number] = (verdict, line)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[n][1])


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
