"""Acceptance reporting: one pass/fail line per criterion at the end of the run."""

import pytest

_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def detail(request):
    """Call with a short measurement summary; it is echoed in the acceptance report."""
    def put(text: str) -> None:
        request.node.user_properties.append(("detail", text))
    return put


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        if mark is not None and rep.when == "setup" and rep.failed:
            _RESULTS[mark.args[0]] = ("FAIL", "setup error")
        return
    text = "; ".join(v for k, v in item.user_properties if k == "detail")
    if hasattr(rep, "wasxfail"):
        status = "FAIL (expected)" if rep.skipped else "PASS (unexpectedly)"
    else:
        status = "PASS" if rep.passed else "FAIL"
    _RESULTS[mark.args[0]] = (status, text)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        status, text = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {status}" + (f" | {text}" if text else ""))
