"""One PASS/FAIL line per acceptance criterion, printed after the run."""

import pytest

_RESULTS: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.fixture
def detail(request):
    """Attach a short measurement summary to the criterion line of this test."""
    def record(text):
        request.node.user_properties.append(("detail", text))
        print(text)
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    n, title = mark.args
    details = [v for k, v in item.user_properties if k == "detail"]
    prev = _RESULTS.get(n)
    ok = rep.passed and (prev is None or prev[1])
    _RESULTS[n] = (title, ok, "; ".join(details) or (prev[2] if prev else ""))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, ok, text = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}  {text}".rstrip())
