_ACCEPTANCE = []


def record_criterion(number, description, passed, detail=""):
    _ACCEPTANCE.append((number, description, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, description, passed, detail in sorted(_ACCEPTANCE):
        status = "PASS" if passed else "FAIL"
        line = f"criterion {number:>2} [{status}] {description}"
        if detail:
            line += f" -- {detail}"
        terminalreporter.write_line(line)
