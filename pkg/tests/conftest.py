from __future__ import annotations

import numpy as np
import pytest

from japs.environment import World, reference_spec


@pytest.fixture(scope="session")
def world() -> World:
    return World.generate(reference_spec())


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(2024)


CRITERIA: dict[int | str, str] = {}


@pytest.fixture(scope="session")
def record_criterion():
    """Store (and print) one PASS/FAIL line per acceptance criterion."""

    def record(key, passed: bool, detail: str) -> None:
        line = f"criterion {key}: {'PASS' if passed else 'FAIL'} | {detail}"
        CRITERIA[key] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA, key=lambda k: (int(str(k).split("-")[0]), str(k))):
        terminalreporter.write_line(CRITERIA[key])
