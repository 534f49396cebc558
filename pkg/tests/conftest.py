CRITERIA = {}


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if name.startswith("test_criterion_"):
        num = int(name.split("_")[2])
        CRITERIA[num] = (report.outcome == "passed", name)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(CRITERIA):
        ok, name = CRITERIA[num]
        label = name.replace(f"test_criterion_{num}_", "").replace("_", " ")
        terminalreporter.write_line(
            f"criterion {num} [{'PASS' if ok else 'FAIL'}]: {label}")
