import pytest

_ACCEPTANCE = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    label = getattr(item.function, "criterion", None)
    if label is None or rep.when != "call":
        return
    measured = dict(item.user_properties).get("measured", "")
    _ACCEPTANCE.append((label, rep.passed, measured))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for label, ok, measured in sorted(_ACCEPTANCE, key=lambda r: int(r[0].split()[0])):
        line = f"criterion {label}: {'PASS' if ok else 'FAIL'}"
        if measured:
            line += f" ({measured})"
        tr.write_line(line)
