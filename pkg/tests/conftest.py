"""Collects acceptance-criterion outcomes for a one-line-per-criterion summary."""

RESULTS = []


def record(index, label, passed, detail=""):
    RESULTS.append((int(index), label, bool(passed), detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for index, label, passed, detail in sorted(RESULTS):
        status = "PASS" if passed else "FAIL"
        line = f"criterion {index:02d} {status}: {label}"
        if detail:
            line = f"{line} ({detail})"
        terminalreporter.write_line(line)
