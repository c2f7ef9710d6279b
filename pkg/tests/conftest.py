import re

_CRITERION = re.compile(r"test_criterion_(\d+)")
_results: dict[int, list[tuple[bool, str]]] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    detail = "; ".join(f"{k}={v}" for k, v in report.user_properties)
    if report.when == "call" or (report.when == "setup" and not report.passed):
        # parametrized criteria collapse into one line
        param = report.nodeid.partition("[")[2].rstrip("]")
        _results.setdefault(n, []).append((report.passed, f"[{param}] {detail}" if param else detail))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        parts = _results[n]
        status = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {status}  " + " | ".join(d for _, d in parts))
