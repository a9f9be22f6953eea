"""Per-criterion PASS/FAIL reporting for the acceptance suite."""

_results = {}
_titles = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            number, title = mark.args
            _titles[number] = title
            _results.setdefault(number, [])


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark and (call.when == "call" or call.excinfo is not None):
        _results[mark.args[0]].append(call.excinfo is None)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        outcomes = _results[number]
        status = "PASS" if outcomes and all(outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {_titles[number]}")
