ACCEPTANCE = {}
CRITERIA = 9


def record(number, title, ok, detail):
    ACCEPTANCE[number] = (title, bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, CRITERIA + 1):
        if number in ACCEPTANCE:
            title, ok, detail = ACCEPTANCE[number]
            terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}")
        else:
            terminalreporter.write_line(f"[----] {number}. not run, deselected or errored before measuring")
