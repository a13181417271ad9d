"""Worst-vehicle CQI selection, RB trimming and FEC fine tuning."""

from __future__ import annotations

import time

import numpy as np

from ..association import initial_association, refine_association
from .common import LinkTable, build_allocation, finish


def _no_fec_choice(table: LinkTable, k, rbs, counts):
    """CQI fitting in ``rbs`` RBs at code rate 1 serving the most vehicles."""
    best_q, best_cnt = None, 0
    for q in reversed(table.allowed):
        if table.blocks[k, q] > rbs:
            continue
        cnt = int(counts[q])
        if cnt > best_cnt:
            best_q, best_cnt = q, cnt
    return best_q, best_cnt


def _initial_cqi(table: LinkTable, k, members, counts):
    """Walk the CQI down from the top until every interested member is served.

    When no CQI serves them all, the CQI serving the most is kept; a type
    that serves nobody even then gets no RBs.
    """
    group = int(np.count_nonzero(members & table.interest[:, k]))
    if group == 0:
        return None, 0
    best_q, best_cnt = None, 0
    for q in reversed(table.allowed):
        cnt = int(counts[q])
        if cnt == group:
            return q, cnt
        if cnt > best_cnt:
            best_q, best_cnt = q, cnt
    return best_q, best_cnt


def _fine_tune(table: LinkTable, n, state, members):
    """Re-pick (CQI, RB) per type with FEC, spending the BS's leftover RBs.

    A type may only move to an equal or higher CQI, must keep every vehicle
    it already serves, and prefers more served vehicles, then fewer RBs.
    """
    residual = int(table.budgets[n]) - sum(rb for _, rb, _ in state)
    for k, (q, rb, _) in enumerate(state):
        if q is None or rb <= 0:
            continue
        keep = table.covered(n, k, q, rb) & members
        best = (int(keep.sum()), -rb, q, rb)
        hi = rb + residual
        for q2 in table.allowed:
            lo = int(table.blocks[k, q2])
            if q2 < q or lo > hi:
                continue
            cover = table.rows(n, k, q2)[lo:hi + 1] & members
            ok = ~np.any(keep & ~cover, axis=1)
            counts = np.where(ok, cover.sum(axis=1), -1)
            for i in np.flatnonzero(ok):
                cand = (int(counts[i]), -(lo + i), q2, lo + i)
                if cand > best:
                    best = cand
        cnt, _, q_new, rb_new = best
        residual -= rb_new - rb
        state[k] = (q_new, rb_new, cnt)


def heuristic_solve(scenario, channel):
    started = time.perf_counter()
    table = LinkTable(scenario, channel)
    serving = np.argmax(refine_association(initial_association(channel), channel), axis=0)
    n_bs, n_msg = scenario.n_bs, scenario.n_messages
    members = [serving == n for n in range(n_bs)]
    counts = [[table.no_fec_counts(n, k, members[n]) for k in range(n_msg)] for n in range(n_bs)]

    # state[n][k] = (q, reserved RBs, vehicles served at code rate 1)
    state = []
    for n in range(n_bs):
        row = []
        for k in range(n_msg):
            q, cnt = _initial_cqi(table, k, members[n], counts[n][k])
            row.append((q, int(table.blocks[k, q]), cnt) if cnt > 0 else (None, 0, 0))
        state.append(row)

    # trim one RB at a time from over-budget BSs, choosing the cut that newly
    # fails the fewest vehicles; a cut may force a higher CQI
    iterations = 0
    while True:
        over = [n for n in range(n_bs) if sum(s[1] for s in state[n]) > table.budgets[n]]
        if not over:
            break
        best = None
        for n in over:
            for k in range(n_msg):
                q, rb, cnt = state[n][k]
                if rb <= 0:
                    continue
                new_q, new_cnt = _no_fec_choice(table, k, rb - 1, counts[n][k])
                cand = (cnt - new_cnt, n, k, new_q, new_cnt)
                if best is None or cand[:3] < best[:3]:
                    best = cand
        _, n, k, new_q, new_cnt = best
        state[n][k] = (new_q, state[n][k][1] - 1, new_cnt)
        iterations += 1

    choice = []
    for n in range(n_bs):
        row = state[n]
        for k, (q, rb, cnt) in enumerate(row):
            if q is None or cnt == 0:
                row[k] = (None, 0, 0)
        _fine_tune(table, n, row, members[n])
        choice.append([(q, rb) if q is not None else (None, 0) for q, rb, _ in row])
    alloc = build_allocation(scenario, serving, choice)
    return finish("heuristic", alloc, scenario, channel, started, iterations=iterations)
