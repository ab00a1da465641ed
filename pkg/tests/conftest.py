import pytest

from patchantenna.materials import AntennaGeometry, build_patch_stack


@pytest.fixture(scope="session")
def geom():
    return AntennaGeometry()


@pytest.fixture(scope="session")
def patch_stack(geom):
    return build_patch_stack(geom)


_ACCEPTANCE = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None or call.when != "call":
        return
    number, label = marker.args
    ok = call.excinfo is None
    prev = _ACCEPTANCE.get(number, (label, True))
    _ACCEPTANCE[number] = (label, prev[1] and ok)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        label, ok = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number} {'PASS' if ok else 'FAIL'}: {label}")
