"""Collects acceptance outcomes and prints one verdict line per criterion."""
import pytest

_VERDICTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "ac(number, title): acceptance criterion covered by the test")
    config.stash[_VERDICTS] = {}


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    marker = item.get_closest_marker("ac")
    if marker is None:
        return rep
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        number, title = marker.args
        entry = item.config.stash[_VERDICTS].setdefault(number, {"title": title, "status": [], "details": []})
        entry["status"].append("SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL"))
        entry["details"] += [v for k, v in rep.user_properties if k == "detail"]
    return rep


def pytest_terminal_summary(terminalreporter, config):
    verdicts = config.stash[_VERDICTS]
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(verdicts):
        entry = verdicts[number]
        status = entry["status"]
        overall = "FAIL" if "FAIL" in status else ("PASS" if "PASS" in status else "SKIP")
        if overall == "PASS" and "SKIP" in status:
            overall = "PARTIAL"
        line = f"AC{number} {overall}  {entry['title']}"
        if entry["details"]:
            line += "  [" + "; ".join(entry["details"]) + "]"
        terminalreporter.write_line(line)
