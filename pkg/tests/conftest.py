import sys

import numpy as np
import pytest

from mindrawdown.data import IndexSeries, PricePanel


def grw_panel(seed=7, n_assets=3, n_days=120, vol=0.012, drift=0.0004):
    """Seeded geometric random walk panel with business-day-like dates."""
    rng = np.random.default_rng(seed)
    steps = rng.normal(drift, vol, size=(n_assets, n_days))
    steps[:, 0] = 0.0
    prices = 100.0 * np.exp(np.cumsum(steps, axis=1))
    dates = [f"2019-{1 + k // 28:02d}-{1 + k % 28:02d}" for k in range(n_days)]
    assets = [f"S{i}" for i in range(n_assets)]
    panel = PricePanel.from_array(prices, assets, dates)
    index = IndexSeries(tuple(dates), prices.mean(axis=0))
    return panel, index


@pytest.fixture(scope="session")
def synthetic():
    return grw_panel()


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "VERDICTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
