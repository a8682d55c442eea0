import helpers


def pytest_terminal_summary(terminalreporter):
    if not helpers.ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(helpers.ACCEPTANCE):
        status, note = helpers.ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {status}" + (f" ({note})" if note else ""))
