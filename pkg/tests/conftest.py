import numpy as np
import pytest

from v2x_multicast.model import load_catalog
from v2x_multicast.simulator import ScenarioConfig, generate_scenario

TINY_GRID = (1, 5, 10, 15)


def tiny_instance(i):
    """Random oracle-sized instance: 2 BSs, 8 vehicles, 2 catalog types, M in 3..6."""
    rng = np.random.default_rng(1000 + i)
    cat = load_catalog()
    ks = sorted(rng.choice(len(cat), size=2, replace=False))
    msgs = tuple({"data_rate_bps": cat[k].data_rate_bps, "reliability": cat[k].reliability,
                  "weight": cat[k].weight} for k in ks)
    cfg = ScenarioConfig(n_bs=2, n_vehicles=8, messages=msgs, rb_budget=int(rng.integers(3, 7)),
                         allowed_cqi=TINY_GRID, seed=i)
    return generate_scenario(cfg, 1000 + i)


@pytest.fixture
def tiny():
    return tiny_instance


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
