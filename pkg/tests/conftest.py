import pytest

from vitoklab.numerics import precision

_criteria: list[tuple[str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.fixture
def f64():
    with precision("float64"):
        yield


@pytest.fixture
def measured(request):
    """Attach a short measurement string to the acceptance summary line."""
    notes: list[str] = []
    request.node.user_properties.append(("measured", notes))
    return notes.append


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    name = dict(report.user_properties).get("criterion")
    if name is None:
        return
    notes = dict(report.user_properties).get("measured") or []
    _criteria.append((name, report.outcome, "; ".join(notes)))


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, notes in _criteria:
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}" + (f"  [{notes}]" if notes else ""))
