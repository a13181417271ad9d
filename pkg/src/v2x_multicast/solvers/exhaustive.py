"""Brute-force optimum over association, CQI grid, RB counts and code rates."""

from __future__ import annotations

import itertools
import math
import time

import numpy as np

from .common import LinkTable, SolverError, build_allocation, finish

DEFAULT_STATE_CAP = 10 ** 10


class ExhaustiveRefused(SolverError):
    """The instance is too large to enumerate under the configured cap."""


def state_count(scenario, q_grid=None) -> int:
    """Number of (association, per-type CQI/RB) combinations the search covers."""
    q_grid = tuple(q_grid) if q_grid is not None else scenario.allowed_cqi
    blocks = scenario.blocks_needed()
    total = scenario.n_bs ** scenario.n_vehicles
    for m in scenario.budgets:
        for k in range(scenario.n_messages):
            opts = 1 + sum(int(m) - int(blocks[k, q]) + 1 for q in q_grid if blocks[k, q] <= m)
            total *= opts
    return total


def _knapsack(tabs, budget):
    """Exact max of sum_k tabs[k][rb_k] subject to sum rb_k <= budget."""
    best = np.zeros(budget + 1)
    picks = []
    for vals in tabs:
        vals = vals[:budget + 1]
        # cand[b, r] = best[b - r] + vals[r]
        cand = np.full((budget + 1, budget + 1), -np.inf)
        for r in range(len(vals)):
            cand[r:, r] = best[:budget + 1 - r] + vals[r]
        arg = np.argmax(cand, axis=1)
        picks.append(arg)
        best = cand[np.arange(budget + 1), arg]
    rbs, b = [], budget
    for arg in reversed(picks):
        r = int(arg[b])
        rbs.append(r)
        b -= r
    return float(best[budget]), rbs[::-1]


def exhaustive_solve(scenario, channel, q_grid=None, state_cap: int = DEFAULT_STATE_CAP):
    """Optimal allocation by enumerating every vehicle-to-BS association.

    For a fixed association the BSs decouple. For each (BS, type, CQI, RB
    count) the strongest admissible code rate is ``X(q) / RB``, which
    dominates every weaker one, so scanning RB counts covers all code rates.
    The per-BS split of RBs across types is then solved exactly by dynamic
    programming. Ties keep the first association in lexicographic order.
    """
    started = time.perf_counter()
    q_grid = tuple(sorted(q_grid)) if q_grid is not None else scenario.allowed_cqi
    states = state_count(scenario, q_grid)
    if states > state_cap:
        raise ExhaustiveRefused(f"{states:.3g} states exceed the cap of {state_cap:.3g}")
    table = LinkTable(scenario, channel)
    table.allowed = q_grid
    n_bs, n_veh, n_msg = scenario.n_bs, scenario.n_vehicles, scenario.n_messages
    budgets = [int(m) for m in table.budgets]
    # rows[n][k][q] -> [rb, v] coverage, association not applied
    rows = [[{q: table.rows(n, k, q) for q in q_grid} for k in range(n_msg)] for n in range(n_bs)]

    def per_bs(n, members):
        tabs, qs = [], []
        for k in range(n_msg):
            vals = np.zeros(table.rb_cap + 1)
            best_q = np.zeros(table.rb_cap + 1, dtype=int)
            for q in reversed(q_grid):
                cnt = table.values[k] * rows[n][k][q][:, members].sum(axis=1)
                better = cnt > vals
                vals = np.where(better, cnt, vals)
                best_q = np.where(better, q, best_q)
            tabs.append(vals)
            qs.append(best_q)
        value, rbs = _knapsack(tabs, budgets[n])
        return value, [(int(qs[k][r]), r) if r > 0 and tabs[k][r] > 0 else (None, 0)
                       for k, r in enumerate(rbs)]

    cache = {}
    best_val, best = -math.inf, None
    for serving in itertools.product(range(n_bs), repeat=n_veh):
        serving = np.array(serving)
        total, choice = 0.0, []
        for n in range(n_bs):
            members = serving == n
            key = (n, members.tobytes())
            if key not in cache:
                cache[key] = per_bs(n, members)
            val, ch = cache[key]
            total += val
            choice.append(ch)
        if total > best_val + 1e-9:
            best_val, best = total, (serving, choice)
    alloc = build_allocation(scenario, best[0], best[1])
    return finish("exhaustive", alloc, scenario, channel, started, iterations=n_bs ** n_veh)
