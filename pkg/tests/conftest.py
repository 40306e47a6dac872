import pytest

_lines = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")
    config.stash[_lines] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if report.when != "call":
        detail = f"{report.when} error"
    verdict = "PASS" if report.passed else "FAIL"
    line = f"criterion {number:>2}  {verdict}  {title}" + (f"  ({detail})" if detail else "")
    item.config.stash[_lines][number] = line


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[_lines]
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
