from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from netcausal.netcore import InfluenceNetwork, baseline_config, sample_hmmb_params, sample_network

settings.register_profile(
    "netcausal", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("netcausal")


def random_network(rng: np.random.Generator, n: int, max_in: int, p: float = 0.4,
                   integer: bool = True) -> InfluenceNetwork:
    """Random directed network with every in-degree at most ``max_in``."""
    src, dst, cnt = [], [], []
    for i in range(n):
        others = np.array([j for j in range(n) if j != i])
        deg = min(max_in, rng.binomial(len(others), p))
        for j in rng.choice(others, size=deg, replace=False):
            src.append(int(j))
            dst.append(i)
            cnt.append(float(rng.integers(1, 5)) if integer else float(rng.uniform(0.1, 3.0)))
    return InfluenceNetwork.from_edges(n, src, dst, cnt)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def baseline_draw():
    params = sample_hmmb_params(baseline_config(64), np.random.default_rng(7))
    return params, sample_network(params, np.random.default_rng(8))


def tiny_plan(**changes):
    """A factorial plan small enough to run in a few seconds."""
    from netcausal.factory import FactorialPlan

    settings_ = dict(
        sizes=(30,), confounders=("none", "activity"), schemes=("CR", "SR", "RCG", "RNC"),
        estimators=("NM", "DM", "BNS"), replications=2, base_seed=17, sample_count=200,
        calibration_draws=20, grouping_draws=10, max_rerandomizations=20,
    )
    settings_.update(changes)
    return FactorialPlan(**settings_)


# criterion number -> PASS/FAIL line, filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
