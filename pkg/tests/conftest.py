import contextlib

import pytest

CRITERIA = {}


class CriterionLog:
    def __init__(self, number, title):
        self.number = number
        self.title = title
        self.details = []

    def note(self, text):
        self.details.append(text)


@pytest.fixture
def criterion():
    @contextlib.contextmanager
    def track(number, title):
        log = CriterionLog(number, title)
        try:
            yield log
        except BaseException:
            CRITERIA[number] = (False, log)
            raise
        CRITERIA[number] = (True, log)

    return track


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        ok, log = CRITERIA[number]
        detail = "; ".join(log.details)
        terminalreporter.write_line(
            f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {log.title}" + (f"  ({detail})" if detail else ""))
