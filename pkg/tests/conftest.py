import pytest

CRITERIA = {
    1: "grid conformance",
    2: "Lloyd vs DP oracle",
    3: "regularizer gradient check",
    4: "compression arithmetic",
    5: "pack/unpack bijection",
    6: "hard compressor",
    7: "pipeline dynamics",
    8: "Lloyd-Max beats uniform grid",
    9: "train-demo determinism",
}

_verdicts: dict[int, str] = {}


@pytest.fixture
def acceptance(request):
    """Record one verdict line for the criterion named by the test, then assert it.

    Tests are named ``test_c<N>_...``.  ``checks`` maps a short description
    to a bool; every one must hold.  A test that raises before recording gets
    a FAIL line too.
    """
    number = int(request.node.name.split("_")[1][1:])
    _verdicts.pop(number, None)

    def record(checks: dict, detail: str = "") -> None:
        failed = [name for name, ok in checks.items() if not ok]
        line = f"[{'FAIL' if failed else 'PASS'}] {number}. {CRITERIA[number]}"
        if detail:
            line += f": {detail}"
        if failed:
            line += f"  (failed: {'; '.join(failed)})"
        _verdicts[number] = line
        print(line)
        assert not failed, line

    yield record
    _verdicts.setdefault(number, f"[FAIL] {number}. {CRITERIA[number]}: raised before a verdict")


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_verdicts):
        terminalreporter.write_line(_verdicts[number])
