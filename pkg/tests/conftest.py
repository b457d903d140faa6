import pytest

_results: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion a test decides")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    entry = _results.setdefault(number, {"title": title, "passed": True, "details": []})
    if rep.failed:
        entry["passed"] = False
    if rep.when == "call":
        entry["details"].extend(f"{k}={v}" for k, v in item.user_properties)
        entry["duration"] = rep.duration


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_results):
        e = _results[number]
        status = "PASS" if e["passed"] else "FAIL"
        tr.write_line(f"{status}  criterion {number:>2}: {e['title']} ({e.get('duration', 0):.1f} s)")
        for d in e["details"]:
            tr.write_line(f"        {d}")
