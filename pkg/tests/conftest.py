"""Acceptance reporting: one PASS/FAIL line per criterion at the end of the run."""

import pytest

_RESULTS: dict[int, dict] = {}
_NOTES: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, name): acceptance criterion")


def pytest_runtest_logreport(report):
    num = getattr(report, "criterion", None)
    if num is None:
        return
    entry = _RESULTS.setdefault(num, {"name": report.criterion_name, "ok": True})
    if report.failed or (report.when == "call" and report.skipped):
        entry["ok"] = False


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        report.criterion, report.criterion_name = mark.args


@pytest.fixture
def note(request):
    """Attach an informational line to the running criterion's summary."""
    mark = request.node.get_closest_marker("criterion")

    def add(text):
        _NOTES.setdefault(mark.args[0], []).append(text)

    return add


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_RESULTS):
        r = _RESULTS[num]
        terminalreporter.write_line(
            f"ACCEPTANCE {num:>2} {r['name']}: {'PASS' if r['ok'] else 'FAIL'}")
        for text in _NOTES.get(num, []):
            terminalreporter.write_line(f"             {text}")
