"""Self-checks against reference data, Monte Carlo and hand-traced fixtures."""

from __future__ import annotations

import json
import pathlib
from dataclasses import dataclass

import numpy as np

from .channel import LinkStats, MonteCarloFading, TabulatedChannel, rician_success
from .mcs import DEFAULT_TABLE, McsTableError, compare_to_reference, load_mcs_table
from .model import BaseStation, MessageType, Scenario, Vehicle, ps_success, required_blocks
from .solvers import SOLVERS

DATA_DIR = pathlib.Path(__file__).parent / "data"
DEFAULT_MC_SIGMA = 4.0


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""


def check_mcs_table(fixture_dir) -> CheckResult:
    path = pathlib.Path(fixture_dir) / "mcs_table.csv"
    try:
        table = load_mcs_table(path)
    except (McsTableError, FileNotFoundError, ValueError) as exc:
        return CheckResult("mcs_table", False, str(exc))
    problems = compare_to_reference(table)
    if table.sinr_to_cqi(11.0) != 10:
        problems.append(f"SINR 11.0 dB maps to CQI {table.sinr_to_cqi(11.0)}, expected 10")
    return CheckResult("mcs_table", not problems, "; ".join(problems) or "16 rows match")


def simulate_blocks(rb, f, p, trials, rng) -> float:
    """Fraction of trials in which at least ``ceil(rb*f)`` of ``rb`` blocks arrive."""
    need = int(required_blocks(rb, f))
    arrived = (rng.random((trials, rb)) < p).sum(axis=1)
    return float(np.mean(arrived >= need))


def check_ps_monte_carlo(sigma=DEFAULT_MC_SIGMA, trials=200_000, seed=7) -> CheckResult:
    rng = np.random.default_rng(seed)
    cases = [(1, 1.0, 0.9), (4, 0.75, 0.8), (8, 0.5, 0.6), (12, 2 / 3, 0.85), (16, 0.9, 0.95)]
    worst, bad = 0.0, []
    for rb, f, p in cases:
        exact = ps_success(rb, f, p)
        est = simulate_blocks(rb, f, p, trials, rng)
        se = max(np.sqrt(exact * (1 - exact) / trials), 1.0 / trials)
        z = abs(est - exact) / se
        worst = max(worst, z)
        if z > sigma:
            bad.append(f"rb={rb} f={f:.3f} p={p}: {est:.5f} vs {exact:.5f} ({z:.1f} se)")
    return CheckResult("ps_vs_monte_carlo", not bad, "; ".join(bad) or f"max {worst:.2f} se")


def check_fading_monte_carlo(sigma=DEFAULT_MC_SIGMA, samples=200_000, seed=11) -> CheckResult:
    cases = [(5.0, 10.0, 1.0), (0.0, 3.0, 0.0), (12.0, 20.0, 1.0), (-5.0, -2.0, 1.0)]
    worst, bad = 0.0, []
    model = MonteCarloFading(samples, seed)
    for thr, snr, k in cases:
        exact = float(rician_success(thr, snr, k))
        est = model.success_prob(thr, LinkStats(snr, k))
        se = max(np.sqrt(exact * (1 - exact) / samples), 1.0 / samples)
        z = abs(est - exact) / se
        worst = max(worst, z)
        if z > sigma:
            bad.append(f"thr={thr} snr={snr} K={k}: {est:.5f} vs {exact:.5f} ({z:.1f} se)")
    return CheckResult("rician_vs_monte_carlo", not bad, "; ".join(bad) or f"max {worst:.2f} se")


def load_fixture(path):
    """Scenario and tabulated channel described by a fixture file."""
    fixture = json.loads(pathlib.Path(path).read_text())
    msgs = [MessageType(i, float(m["data_rate_bps"]), float(m["reliability"]), float(m["weight"]))
            for i, m in enumerate(fixture["messages"])]
    sinr = np.asarray(fixture["sinr_db"], dtype=float)
    n_bs, n_veh = sinr.shape
    scenario = Scenario(
        [BaseStation(n, (0.0, 0.0), int(fixture["budgets"][n])) for n in range(n_bs)],
        [Vehicle(v, (0.0, 10.0), 0.0, tuple(fixture["interest"][v])) for v in range(n_veh)],
        msgs)
    channel = TabulatedChannel.hard_threshold(sinr, DEFAULT_TABLE, fixture.get("success_overrides", ()))
    return fixture, scenario, channel


def check_fixture(path) -> CheckResult:
    name = f"fixture:{pathlib.Path(path).stem}"
    try:
        fixture, scenario, channel = load_fixture(path)
        res = SOLVERS[fixture["solver"]](scenario, channel)
    except Exception as exc:
        return CheckResult(name, False, f"{type(exc).__name__}: {exc}")
    exp, a = fixture["expected"], res.alloc
    bad = []
    if not np.array_equal(a.q, exp["q"]):
        bad.append(f"q {a.q.tolist()} != {exp['q']}")
    if not np.array_equal(a.rb, exp["rb"]):
        bad.append(f"rb {a.rb.tolist()} != {exp['rb']}")
    if not np.allclose(a.f, exp["f"], rtol=0, atol=1e-12):
        bad.append(f"f {a.f.tolist()} != {exp['f']}")
    if not np.array_equal(a.serving, exp["serving"]):
        bad.append(f"serving {a.serving.tolist()} != {exp['serving']}")
    if not np.isclose(res.utility, exp["utility"], rtol=1e-12):
        bad.append(f"utility {res.utility} != {exp['utility']}")
    if "iterations" in exp and res.iterations != exp["iterations"]:
        bad.append(f"iterations {res.iterations} != {exp['iterations']}")
    return CheckResult(name, not bad, "; ".join(bad) or "matches hand trace")


def run_checks(fixture_dir=None, mc_sigma=DEFAULT_MC_SIGMA) -> list[CheckResult]:
    fixture_dir = pathlib.Path(fixture_dir) if fixture_dir is not None else DATA_DIR
    results = [check_mcs_table(fixture_dir),
               check_ps_monte_carlo(mc_sigma),
               check_fading_monte_carlo(mc_sigma)]
    fixtures = sorted((fixture_dir / "fixtures").glob("*.json"))
    if not fixtures:
        results.append(CheckResult("fixtures", False, f"no fixtures under {fixture_dir / 'fixtures'}"))
    results += [check_fixture(p) for p in fixtures]
    return results
