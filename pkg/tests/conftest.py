import pytest

_LINES: list[str] = []


class Verdict:
    """Records one pass/fail line per acceptance criterion."""

    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.checks: list[tuple[str, bool]] = []

    def check(self, label: str, ok: bool) -> bool:
        self.checks.append((label, bool(ok)))
        return bool(ok)

    @property
    def passed(self) -> bool:
        return all(ok for _, ok in self.checks)

    def line(self) -> str:
        failed = [label for label, ok in self.checks if not ok]
        status = "PASS" if self.passed else "FAIL"
        detail = "; ".join(label for label, _ in self.checks)
        extra = f"  [failed: {'; '.join(failed)}]" if failed else ""
        return f"criterion {self.number} ({self.title}): {status} -- {detail}{extra}"


@pytest.fixture
def verdict(request):
    made: list[Verdict] = []

    def make(number: int, title: str) -> Verdict:
        v = Verdict(number, title)
        made.append(v)
        return v

    yield make
    for v in made:
        line = v.line()
        _LINES.append(line)
        print(line)


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
