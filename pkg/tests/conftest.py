import re

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# acceptance criterion number -> (outcome, detail line)
_ACCEPTANCE: dict[int, list] = {}
_DETAILS: dict[int, str] = {}


@pytest.fixture
def report_detail(request):
    """Attach a one-line measurement summary to an acceptance criterion."""
    m = re.match(r"test_criterion_(\d+)", request.node.name)
    num = int(m.group(1)) if m else None

    def _record(text: str):
        if num is not None:
            _DETAILS[num] = text

    return _record


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    num = int(m.group(1))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE[num] = [report.outcome, report.nodeid.split("::")[-1]]


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        outcome, name = _ACCEPTANCE[num]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        detail = _DETAILS.get(num, "")
        terminalreporter.write_line(f"criterion {num:2d}: {verdict}  {name}  {detail}".rstrip())
