import pytest

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the test body sets ``rec.detail``."""

    class Rec:
        detail = ""

    rec = Rec()
    number = request.node.get_closest_marker("criterion").args[0]
    yield rec
    rep = getattr(request.node, "rep_call", None)
    ok = bool(rep and rep.passed)
    prev_ok, prev_detail = ACCEPTANCE.get(number, (True, ""))
    # a criterion spread over several tests passes only if all of them do
    ACCEPTANCE[number] = (prev_ok and ok, rec.detail or prev_detail)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
