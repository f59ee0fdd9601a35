import pytest

# criterion number -> (passed, title, detail)
_results: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    number, title = mark.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    prev = _results.get(number)
    ok = rep.passed and (prev is None or prev[0])
    _results[number] = (ok, title, detail or (prev[2] if prev else ""))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        ok, title, detail = _results[number]
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
