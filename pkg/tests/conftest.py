from collections import defaultdict

import pytest

_OUTCOMES: dict[int, list[tuple[str, bool]]] = defaultdict(list)
_TITLES: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number = marker.args[0]
    if len(marker.args) > 1:
        _TITLES[number] = marker.args[1]
    # record the call phase, or a setup failure that prevented the call
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _OUTCOMES[number].append((item.name, report.passed))


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        results = _OUTCOMES[number]
        passed = sum(ok for _, ok in results)
        status = "PASS" if passed == len(results) else "FAIL"
        line = f"criterion {number} [{status}] {_TITLES.get(number, '')}: {passed}/{len(results)} checks passed"
        failed = [name for name, ok in results if not ok]
        if failed:
            line += " (failed: " + ", ".join(failed) + ")"
        terminalreporter.write_line(line)
