import pytest

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")
    config.stash[_RESULTS] = {}


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when == "teardown":
        return report
    number, title = marker.args
    results = item.config.stash[_RESULTS]
    prev = results.get(number)
    failed = report.failed or (prev is not None and prev[0] == "FAIL")
    if report.when == "call" or report.failed:
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        results[number] = ("FAIL" if failed else "PASS", title, detail)
    return report


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[_RESULTS]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        status, title, detail = results[number]
        line = f"criterion {number:2d}  {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
