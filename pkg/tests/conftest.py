import pytest

_LINES = []


def pytest_addoption(parser):
    parser.addoption("--quick", action="store_true", help="skip slow statistical checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical check")


def pytest_collection_modifyitems(config, items):
    if not config.getoption("--quick"):
        return
    skip = pytest.mark.skip(reason="--quick")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def report():
    """Collect a result line for the end-of-run acceptance summary."""
    return _LINES.append


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
