"""Collects acceptance-criterion outcomes and prints one PASS/FAIL line per criterion."""

import pytest

_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        if report.skipped:
            verdict = "SKIP"
        else:
            verdict = "PASS" if report.passed else "FAIL"
        _RESULTS[number] = (verdict, title)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        verdict, title = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {title}")
