import time

import numpy as np
import pytest

from flocksteer.config import load_config

# circle-tracking preset data, duplicated here so tests do not depend on the YAML loader
PRESET_X = np.array([
    [6.8897, 7.1568], [1.6819, 4.4079], [4.0103, 5.8168], [6.3834, 6.7922],
    [2.4842, 6.1173], [5.8959, 1.4635], [1.0710, 4.4853],
])
PRESET_V = np.array([
    [2.8792, 1.0212], [1.7558, 0.6714], [2.2538, 0.7653], [1.5179, 2.0972],
    [2.6727, 2.8779], [1.6416, 0.4159], [0.4479, 0.7725],
])

ACCEPTANCE = {}
TIMINGS = {}


@pytest.fixture(scope="session")
def preset():
    return load_config("paper-sec5")


@pytest.fixture(scope="session")
def preset_model(preset):
    return preset.build_model()


@pytest.fixture(scope="session")
def preset_initial(preset):
    return preset.build_initial()


@pytest.fixture(scope="session")
def eps_sweep(preset_model, preset_initial):
    """Full-model runs at the three eps values plus the reduced run, shared across tests."""
    from flocksteer.reduced import compare_full_reduced

    start = time.perf_counter()
    table = compare_full_reduced(preset_initial, preset_model, [0.1, 0.01, 0.001], t_end=200.0,
                                 return_trajectories=True)
    TIMINGS["eps_sweep"] = time.perf_counter() - start
    return table


def record_acceptance(number, title, passed, detail=""):
    ACCEPTANCE[number] = (title, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[k]
        tail = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {k:2d}. {title}{tail}")
