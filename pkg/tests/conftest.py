import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            number, title = mark.args
            _CRITERIA.setdefault(number, {"title": title, "outcomes": {}})
            _CRITERIA[number]["outcomes"][item.nodeid] = "not run"


def pytest_runtest_logreport(report):
    for entry in _CRITERIA.values():
        if report.nodeid in entry["outcomes"]:
            prev = entry["outcomes"][report.nodeid]
            if report.failed:
                entry["outcomes"][report.nodeid] = "failed"
            elif report.when == "call" and prev != "failed":
                entry["outcomes"][report.nodeid] = "skipped" if report.skipped else "passed"
            elif report.skipped and prev == "not run":
                entry["outcomes"][report.nodeid] = "skipped"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        states = set(entry["outcomes"].values())
        if "failed" in states:
            verdict = "FAIL"
        elif states == {"passed"}:
            verdict = "PASS"
        else:
            verdict = "INCOMPLETE"
        failed = [n.split("::")[-1] for n, s in entry["outcomes"].items() if s == "failed"]
        detail = f" ({', '.join(failed)})" if failed else ""
        terminalreporter.write_line(f"criterion {number}: {verdict}  {entry['title']}{detail}")
