"""Per-criterion pass/fail summary for tests tagged ``@pytest.mark.criterion``."""

from collections import OrderedDict

_results = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion the test belongs to")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args[0]))
            _results.setdefault(mark.args[0], [])


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    name = props.get("criterion")
    if name is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        short = report.nodeid.split("::", 1)[-1]
        _results[name].append((short, report.passed, props.get("measured", "")))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, runs in _results.items():
        if not runs:
            continue
        failed = [r for r in runs if not r[1]]
        status = "PASS" if not failed else "FAIL"
        line = f"{status}  {name}  ({len(runs) - len(failed)}/{len(runs)} checks)"
        if failed:
            line += "  failing: " + "; ".join(f"{r[0].split('[')[-1].rstrip(']')} {r[2]}".strip() for r in failed)
        tr.write_line(line)
