from __future__ import annotations

import warnings

import pytest

from lumpedhead.calibration import build_model
from lumpedhead.geometry import standard_geometry
from lumpedhead.tissue import builtin_tissues


@pytest.fixture(scope="session")
def baseline():
    return builtin_tissues("baseline")


@pytest.fixture(scope="session")
def dispersive():
    return builtin_tissues("dispersive_synthetic")


@pytest.fixture(scope="session")
def geom():
    return standard_geometry()


@pytest.fixture(scope="session")
def model(geom, baseline):
    """Full default calibration on the baseline tissues, built once per session."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_model(geom, baseline)


@pytest.fixture(scope="session")
def model_path(model, tmp_path_factory):
    p = tmp_path_factory.mktemp("model") / "model.json"
    p.write_text(model.to_json())
    return p


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request):
    """Record one PASS/FAIL line for an acceptance criterion; shown in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def report(criterion: str, ok: bool, detail: str) -> bool:
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
