import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import tiny_instance
from v2x_multicast.association import initial_association, refine_association
from v2x_multicast.channel import TabulatedChannel
from v2x_multicast.mcs import DEFAULT_TABLE
from v2x_multicast.model import (Allocation, BaseStation, MessageType, Scenario, Vehicle,
                                 association_matrix, check_feasibility, rb_count, rb_data_rate,
                                 system_utility)
from v2x_multicast.solvers import (SOLVERS, ExhaustiveRefused, baseline_solve, exhaustive_solve,
                                   heuristic_solve, hsca_solve, state_count)
from v2x_multicast.solvers.common import LinkTable
from v2x_multicast.solvers.heuristic import _initial_cqi
from v2x_multicast.solvers.hsca import (AugmentedVector, SmoothedObjective, finite_diff_gradient,
                                        smoothed_utility, surrogate_argmin)
from v2x_multicast.validate import DATA_DIR, load_fixture

FEC_GRID = (1.0, 0.9, 0.8, 0.75, 2 / 3, 0.5)


def world(sinr, budgets, msgs, interest=None, success=None):
    sinr = np.asarray(sinr, float)
    n_bs, n_veh = sinr.shape
    interest = interest if interest is not None else [(1,) * len(msgs)] * n_veh
    scen = Scenario([BaseStation(n, (0, 0), budgets[n]) for n in range(n_bs)],
                    [Vehicle(v, (0, 10), 0.0, tuple(interest[v])) for v in range(n_veh)],
                    [MessageType(k, *m) for k, m in enumerate(msgs)])
    ch = (TabulatedChannel(sinr, success) if success is not None
          else TabulatedChannel.hard_threshold(sinr, DEFAULT_TABLE))
    return scen, ch


def random_world(seed, n_bs=2, n_veh=3, budget=2):
    rng = np.random.default_rng(seed)
    sinr = rng.uniform(-5, 20, (n_bs, n_veh))
    base = TabulatedChannel.hard_threshold(sinr, DEFAULT_TABLE).success_matrix()
    # soften the hard thresholds so FEC matters
    p = np.where(base > 0, rng.choice([1.0, 0.97, 0.9, 0.8], size=base.shape), 0.0)
    p[..., 0] = 0
    msgs = [(600_000, 0.9, 1.0), (150_000, 0.99, 2.0)]
    interest = rng.integers(0, 2, (n_veh, 2))
    return world(sinr, [budget] * n_bs, msgs, interest.tolist(), p)


def brute_force(scen, ch, grid):
    """Every association and (CQI, RB, code rate) choice, scored by system_utility.

    Code rates come from the fixed grid plus X(q)/RB; rates with the same
    needed-block count are interchangeable, so one per count is kept.
    """
    n_bs, n_veh, n_msg = scen.n_bs, scen.n_vehicles, scen.n_messages
    options = []
    for m in scen.messages:
        opts = [(grid[-1], 0, 1.0)]
        for q in grid:
            for rb in range(1, int(scen.budgets.max()) + 1):
                by_need = {}
                for f in FEC_GRID + (min(1.0, rb_count(m.data_rate_bps, rb_data_rate(q)) / rb),):
                    if rb * rb_data_rate(q) * f >= m.data_rate_bps * (1 - 1e-9):
                        by_need.setdefault(math.ceil(rb * f - 1e-9), f)
                opts += [(q, rb, f) for f in by_need.values()]
        options.append(opts)
    best = -math.inf
    for serving in itertools.product(range(n_bs), repeat=n_veh):
        y = association_matrix(serving, n_bs)
        for combo in itertools.product(*[options[k] for _ in range(n_bs) for k in range(n_msg)]):
            rb = np.array([c[1] for c in combo]).reshape(n_bs, n_msg)
            if np.any(rb.sum(axis=1) > scen.budgets):
                continue
            q = np.array([c[0] for c in combo]).reshape(n_bs, n_msg)
            f = np.array([c[2] for c in combo]).reshape(n_bs, n_msg)
            alloc = Allocation(q, f, rb, y)
            assert check_feasibility(alloc, scen) == []
            best = max(best, system_utility(alloc, scen, ch))
    return best


@pytest.mark.parametrize("seed", range(8))
def test_exhaustive_equals_brute_force(seed):
    scen, ch = random_world(seed, n_veh=3, budget=3)
    res = exhaustive_solve(scen, ch, q_grid=(5, 10, 15))
    assert res.utility == pytest.approx(brute_force(scen, ch, (5, 10, 15)))


def test_exhaustive_single_link_two_cqis():
    # SINR 11 dB reports CQI 10: CQI 15 always fails, CQI 1 needs 40 RBs
    scen, ch = world([[11.0]], [40], [(1_000_000, 0.9, 1.0)])
    res = exhaustive_solve(scen, ch, q_grid=(1, 15))
    evals = []
    for q in (1, 15):
        rb = rb_count(1_000_000, rb_data_rate(q))
        if rb <= 40:
            evals.append(system_utility(Allocation([[q]], [[1.0]], [[rb]], [[1]]), scen, ch))
    assert res.utility == max(evals) == 1_000_000


def test_exhaustive_refuses_large():
    scen, ch = tiny_instance(0)
    n = state_count(scen)
    assert n > 2 ** 8
    with pytest.raises(ExhaustiveRefused):
        exhaustive_solve(scen, ch, state_cap=n - 1)
    blocks = scen.blocks_needed()
    want = scen.n_bs ** scen.n_vehicles
    for m in scen.budgets:
        for k in range(scen.n_messages):
            want *= 1 + sum(m - blocks[k, q] + 1 for q in scen.allowed_cqi if blocks[k, q] <= m)
    assert n == want


def test_all_solvers_agree_when_uncontended():
    scen, ch = world([[25.0, 22.0]], [10], [(400_000, 0.9, 1.0)])
    utils = {name: fn(scen, ch).utility for name, fn in SOLVERS.items()}
    assert set(utils.values()) == {800_000}


# --- baseline -----------------------------------------------------------------------

def test_baseline_zero_budget():
    scen, ch = world([[20.0, 15.0]], [0], [(100_000, 0.9, 1.0)])
    res = baseline_solve(scen, ch)
    assert res.utility == 0 and res.alloc.rb.sum() == 0


def test_baseline_matches_heuristic_without_contention():
    scen, ch = world([[9.0]], [6], [(500_000, 0.9, 1.0)])
    assert baseline_solve(scen, ch).utility == heuristic_solve(scen, ch).utility == 500_000


@pytest.mark.parametrize("name", ["baseline_1bs", "heuristic_2bs"])
def test_hand_traced_fixtures(name):
    fixture, scen, ch = load_fixture(DATA_DIR / "fixtures" / f"{name}.json")
    res = SOLVERS[fixture["solver"]](scen, ch)
    exp = fixture["expected"]
    assert res.alloc.q.tolist() == exp["q"] and res.alloc.rb.tolist() == exp["rb"]
    assert np.allclose(res.alloc.f, exp["f"]) and res.utility == exp["utility"]


# --- heuristic ----------------------------------------------------------------------

def test_heuristic_all_at_max_cqi():
    msgs = [(2_500_000, 0.9, 1.0), (100_000, 0.9999, 2.0)]
    scen, ch = world([[30.0, 28.0, 35.0]], [10], msgs)
    res = heuristic_solve(scen, ch)
    assert res.alloc.q.tolist() == [[15, 15]]
    assert res.alloc.rb.tolist() == [[3, 1]] and res.iterations == 0


def test_heuristic_exact_budget_skips_trim():
    scen, ch = world([[30.0, 28.0]], [4], [(2_500_000, 0.9, 1.0), (100_000, 0.9999, 2.0)])
    res = heuristic_solve(scen, ch)
    assert res.iterations == 0 and res.alloc.rb.sum() == 4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_heuristic_trim_count_bound(seed):
    scen, ch = tiny_instance(seed)
    res = heuristic_solve(scen, ch)
    table = LinkTable(scen, ch)
    serving = np.argmax(refine_association(initial_association(ch), ch), axis=0)
    excess = 0
    for n in range(scen.n_bs):
        members = serving == n
        total = 0
        for k in range(scen.n_messages):
            q, cnt = _initial_cqi(table, k, members, table.no_fec_counts(n, k, members))
            total += int(table.blocks[k, q]) if cnt > 0 else 0
        excess += max(0, total - int(scen.budgets[n]))
    assert res.iterations <= excess


# --- HSCA pieces --------------------------------------------------------------------

def direct_smoothed(scen, ch, q, y, c):
    """Loop-by-loop smoothed objective; fractional CQI interpolates p and efficiency."""
    p = ch.success_matrix(DEFAULT_TABLE)
    total = 0.0
    for n in range(scen.n_bs):
        for k, m in enumerate(scen.messages):
            qq = q[n, k]
            lo = min(int(math.floor(qq)), 14)
            eff = np.interp(qq, range(1, 16), DEFAULT_TABLE.efficiencies[1:])
            x = math.ceil(m.data_rate_bps / (168 * eff * 1000) - 1e-9)
            for v in range(scen.n_vehicles):
                pr = p[n, v, lo] + (p[n, v, lo + 1] - p[n, v, lo]) * (qq - lo)
                ps = scen.vehicles[v].interest[k] * y[n, v] * pr ** x
                total += m.value * 0.5 * (math.tanh(c * (ps - m.reliability)) + 1)
    return -total


@pytest.mark.parametrize("seed", range(3))
def test_smoothed_objective_matches_direct_formula(seed):
    scen, ch = tiny_instance(seed)
    rng = np.random.default_rng(seed)
    q = rng.uniform(1, 15, (scen.n_bs, scen.n_messages))
    y = rng.dirichlet(np.ones(scen.n_bs), scen.n_vehicles).T
    obj = SmoothedObjective(scen, ch, 50.0)
    x = AugmentedVector.from_arrays(q, y)
    assert smoothed_utility(x, obj) == pytest.approx(direct_smoothed(scen, ch, q, y, 50.0), rel=1e-12)


def test_smoothed_midpoint_and_saturation():
    # one vehicle with p = 0.9 at every CQI, D small enough for one RB
    success = np.zeros((1, 1, 16))
    success[..., 1:] = 0.9
    scen, ch = world([[10.0]], [5], [(20_000, 0.9, 2.0)], success=success)
    x = AugmentedVector.from_arrays([[12.0]], [[1.0]])
    assert -SmoothedObjective(scen, ch, 50.0)(x) == pytest.approx(20_000.0)
    success[..., 1:] = 0.95
    scen, ch = world([[10.0]], [5], [(20_000, 0.9, 2.0)], success=success)
    assert -SmoothedObjective(scen, ch, 1e6)(x) == pytest.approx(40_000.0)


def test_secant_gradient_equals_generic():
    scen, ch = tiny_instance(4)
    obj = SmoothedObjective(scen, ch)
    rng = np.random.default_rng(0)
    for _ in range(5):
        q0 = rng.uniform(1, 15, (2, 2))
        y0 = rng.dirichlet([1, 1], 8).T
        x0 = AugmentedVector.from_arrays(q0, y0)
        x1 = AugmentedVector.from_arrays(q0 + rng.normal(0, 0.5, q0.shape).clip(-1, 1) * (rng.random(q0.shape) < .7),
                                         rng.dirichlet([1, 1], 8).T)
        a = finite_diff_gradient(x1, x0, obj).flat
        b = obj.secant_gradient(x1, x0).flat
        assert np.allclose(a, b, rtol=1e-9, atol=1e-6)


def test_gradient_zero_where_unmoved_and_for_constant():
    x0 = AugmentedVector.from_arrays([[3.0, 4.0]], [[1.0]])
    x1 = AugmentedVector.from_arrays([[3.0, 5.0]], [[1.0]])
    g = finite_diff_gradient(x1, x0, lambda x: 7.0)
    assert np.all(g.flat == 0)
    g = finite_diff_gradient(x1, x0, lambda x: float(np.sum(x.flat ** 2)))
    assert g.flat[0] == 0 and g.flat[2] == 0 and g.flat[1] != 0


def test_gradient_tracks_central_difference():
    def toy(x):
        a, b = x.q_part
        return math.sin(a) * b + 0.3 * a * a

    x0 = AugmentedVector.from_arrays([[1.2], [2.5]], np.ones((2, 0)))
    x1 = x0.with_flat(x0.flat + [1e-3, -1e-3])
    g = finite_diff_gradient(x1, x0, toy).flat
    h = 1e-6
    central = [(toy(x0.with_flat(x0.flat + h * e)) - toy(x0.with_flat(x0.flat - h * e))) / (2 * h)
               for e in np.eye(2)]
    assert np.allclose(g, central, rtol=0.1)


def test_surrogate_positive_gradient_goes_low():
    x = AugmentedVector.from_arrays(np.full((2, 2), 8.0), [[1, 0], [0, 1]])
    g = AugmentedVector.from_arrays(np.ones((2, 2)), np.zeros((2, 2)))
    out = surrogate_argmin(g, x)
    assert np.all(out.q == 1) and np.array_equal(out.y, x.y)


def test_surrogate_zero_gradient_keeps_point():
    x = AugmentedVector.from_arrays([[4.5, 9.0]], [[0.3, 1.0]])
    out = surrogate_argmin(x.with_flat(np.zeros(4)), x)
    assert np.array_equal(out.flat, x.flat)


def test_surrogate_matches_vertex_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(20):
        g = rng.normal(size=6)
        x = AugmentedVector.from_arrays([[5.0], [9.0]], [[0.5, 0.2], [0.5, 0.8]])
        grad = x.with_flat(g)
        best, best_val = None, math.inf
        for q in itertools.product((1.0, 15.0), repeat=2):
            for picks in itertools.product(range(2), repeat=2):
                y = np.zeros((2, 2))
                y[list(picks), [0, 1]] = 1
                cand = np.concatenate([q, y.ravel()])
                if g @ cand < best_val:
                    best, best_val = cand, g @ cand
        assert np.array_equal(surrogate_argmin(grad, x).flat, best)


# --- HSCA end to end ----------------------------------------------------------------

def test_hsca_huge_epsilon_stops_after_first_iterate():
    scen, ch = tiny_instance(7)
    res = hsca_solve(scen, ch, epsilon=1e9)
    assert res.iterations <= 2 and len(res.trace) <= 3
    assert check_feasibility(res.alloc, scen) == []


def test_hsca_single_link_top_cqi():
    scen, ch = world([[25.0]], [5], [(2_500_000, 0.9, 1.0)])
    res = hsca_solve(scen, ch)
    assert res.alloc.q.tolist() == [[15]]
    assert res.alloc.rb.tolist() == [[rb_count(2_500_000, rb_data_rate(15))]]
    assert res.utility == exhaustive_solve(scen, ch).utility == 2_500_000


def test_hsca_close_to_optimum_on_desk_instance():
    utils = [(hsca_solve(*tiny_instance(i)).utility, exhaustive_solve(*tiny_instance(i)).utility)
             for i in range(5)]
    for h, e in utils:
        assert h <= e + 1e-6
    assert sum(h for h, _ in utils) >= 0.9 * sum(e for _, e in utils)


def test_hsca_without_repair_may_fall_back_but_stays_feasible():
    for i in range(6):
        scen, ch = tiny_instance(i)
        res = hsca_solve(scen, ch, repair=False, keep_best=False)
        assert check_feasibility(res.alloc, scen) == []
        if res.fallback:
            assert res.utility == heuristic_solve(scen, ch).utility


def test_hsca_rejects_bad_parameters():
    scen, ch = tiny_instance(0)
    with pytest.raises(ValueError):
        hsca_solve(scen, ch, epsilon=0)
    with pytest.raises(ValueError):
        hsca_solve(scen, ch, c_constant=-1)


# --- every solver ------------------------------------------------------------------

@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_results_feasible_and_self_consistent(seed):
    scen, ch = tiny_instance(seed)
    results = {name: fn(scen, ch) for name, fn in SOLVERS.items()}
    for res in results.values():
        assert check_feasibility(res.alloc, scen) == []
        assert res.utility == system_utility(res.alloc, scen, ch)
        assert res.utility <= results["exhaustive"].utility + 1e-6
        d = res.to_dict()
        assert d["allocation"]["q"] == res.alloc.q.tolist()
