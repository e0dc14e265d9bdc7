import pytest


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(n): acceptance criterion number; reported as one CRITERION n: PASS/FAIL line",
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    verdict = None
    if report.when == "call":
        verdict = "PASS" if report.passed else "FAIL"
    elif report.failed:  # crash while setting up or tearing down the test
        verdict = "FAIL"
    if verdict is None:
        return
    seen = getattr(item.config, "_criterion_lines_emitted", None)
    if seen is None:
        seen = item.config._criterion_lines_emitted = set()
    if item.nodeid in seen:
        return
    seen.add(item.nodeid)
    line = f"CRITERION {marker.args[0]}: {verdict}"
    reporter = item.config.pluginmanager.get_plugin("terminalreporter")
    if reporter is not None:
        reporter.write_line(line)
    else:
        print(line)
