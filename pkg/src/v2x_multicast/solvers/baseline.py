"""Greedy RB-by-RB allocation without FEC."""

from __future__ import annotations

import time

import numpy as np

from ..association import initial_association
from .common import LinkTable, build_allocation, finish


def _best_without_fec(table: LinkTable, k, grant, counts):
    # per-RB utility at a fixed grant count ranks CQIs the same way as total
    # utility; ties go to the higher CQI
    best = (0.0, None)
    for q in reversed(table.allowed):
        need = int(table.blocks[k, q])
        if need > grant:
            continue
        val = table.values[k] * counts[q]
        if val > best[0]:
            best = (val, q)
    return best


def baseline_solve(scenario, channel):
    """Best-SINR association, then per BS hand out RBs one at a time.

    Each RB goes to the message type whose utility rises the most; when no
    type gains, RBs rotate round-robin among types with interested vehicles.
    Code rate is always 1 and each type transmits on ``X(q)`` of its granted
    RBs.
    """
    started = time.perf_counter()
    table = LinkTable(scenario, channel)
    serving = np.argmax(initial_association(channel), axis=0)
    n_msg = scenario.n_messages
    choice = []
    for n in range(scenario.n_bs):
        members = serving == n
        wanted = [k for k in range(n_msg) if np.any(table.interest[members, k])]
        counts = [table.no_fec_counts(n, k, members) for k in range(n_msg)]
        grants = [0] * n_msg
        current = [(0.0, None)] * n_msg
        turn = 0
        for _ in range(int(table.budgets[n]) if wanted else 0):
            options = {k: _best_without_fec(table, k, grants[k] + 1, counts[k]) for k in wanted}
            gains = {k: options[k][0] - current[k][0] for k in wanted}
            k_star = max(wanted, key=lambda k: (gains[k], -k))
            if gains[k_star] <= 0:
                k_star = wanted[turn % len(wanted)]
                turn += 1
            grants[k_star] += 1
            if options[k_star][0] >= current[k_star][0]:
                current[k_star] = options[k_star]
        row = []
        for k in range(n_msg):
            q = current[k][1]
            row.append((q, int(table.blocks[k, q])) if q is not None else (None, 0))
        choice.append(row)
    alloc = build_allocation(scenario, serving, choice)
    return finish("baseline", alloc, scenario, channel, started, iterations=int(scenario.budgets.sum()))
