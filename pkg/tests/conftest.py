import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from transtarec.data import TimeKey  # noqa: E402
from transtarec.model import N_HOURS, N_MONTHS, N_WEEKDAYS, ModelParams  # noqa: E402


def random_params(rng: np.random.Generator, n_users: int, n_pois: int, d: int, spread: float = 1.0) -> ModelParams:
    def normal(*shape):
        return rng.normal(scale=spread, size=shape)

    return ModelParams(
        user_emb=normal(n_users, d),
        poi_emb=normal(n_pois, d),
        month_emb=normal(N_MONTHS, d),
        weekday_emb=normal(N_WEEKDAYS, d),
        hour_emb=normal(N_HOURS, d),
        g_weight=rng.normal(scale=1.0 / np.sqrt(3 * d), size=(d, 3 * d)),
        g_bias=normal(d),
        h_weight=rng.normal(scale=1.0 / np.sqrt(3 * d), size=(d, 3 * d)),
        h_bias=normal(d),
    )


def random_time(rng: np.random.Generator) -> TimeKey:
    return TimeKey(int(rng.integers(1, 13)), int(rng.integers(0, 7)), int(rng.integers(0, 24)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240613)


_ACCEPTANCE: list[tuple[str, str]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    label = marker.args[0]
    if report.when == "call":
        _ACCEPTANCE.append((label, "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")))
    elif report.when == "setup" and report.skipped:
        _ACCEPTANCE.append((label, "SKIP"))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, status in _ACCEPTANCE:
        terminalreporter.write_line(f"{status:4s}  {label}")
