import pytest

_RESULTS: dict[int, tuple[str, str]] = {}


class CriterionRecorder:
    """Collects one status line per acceptance criterion."""

    def __call__(self, number: int, status: str, detail: str = "") -> None:
        _RESULTS[number] = (status, detail)


@pytest.fixture(scope="session")
def criterion():
    return CriterionRecorder()


def pytest_runtest_makereport(item, call):
    number = getattr(item.function, "criterion_number", None)
    if number is None or call.when != "call":
        return
    status, detail = _RESULTS.get(number, ("", ""))
    if call.excinfo is None:
        _RESULTS[number] = ("PASS", detail)
    elif call.excinfo.errisinstance(pytest.skip.Exception):
        _RESULTS[number] = ("SKIP", detail or str(call.excinfo.value))
    else:
        _RESULTS[number] = ("FAIL", detail or call.excinfo.exconly().splitlines()[0])


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        status, detail = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {status or 'FAIL'}  {detail}")
