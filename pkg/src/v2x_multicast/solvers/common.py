from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..model import (Allocation, Scenario, association_matrix, check_feasibility,
                     ps_success_array, system_utility)


class SolverError(RuntimeError):
    pass


@dataclass
class SolverResult:
    solver: str
    alloc: Allocation
    utility: float
    iterations: int = 0
    wall_time: float = 0.0
    trace: list = field(default_factory=list)
    fallback: bool = False

    def to_dict(self) -> dict:
        return {"solver": self.solver, "utility": self.utility,
                "iterations": self.iterations, "wall_time_s": self.wall_time,
                "fallback": self.fallback, "trace": list(map(float, self.trace)),
                "allocation": self.alloc.to_dict()}


def finish(name, alloc, scenario, channel, started, **extra) -> SolverResult:
    problems = check_feasibility(alloc, scenario)
    if problems:
        raise SolverError(f"{name} produced an infeasible allocation: {problems[:3]}")
    util = system_utility(alloc, scenario, channel)
    return SolverResult(name, alloc, util, wall_time=time.perf_counter() - started, **extra)


class LinkTable:
    """Reception outcomes for discrete (CQI, RB count) choices.

    ``covered(n, k, q, rb)`` tells, for every vehicle, whether it would meet
    type k's reliability if BS n sent type k at CQI q over rb RBs using the
    strongest code that still carries the data rate (``F = X(q) / rb``).
    Association is not applied here; callers mask by membership.
    """

    def __init__(self, scenario: Scenario, channel):
        self.scenario = scenario
        self.p = channel.success_matrix(scenario.table)
        self.blocks = scenario.blocks_needed()
        self.interest = scenario.interest.astype(bool)
        self.reliability = scenario.reliabilities
        self.values = scenario.values
        self.budgets = scenario.budgets
        self.allowed = scenario.allowed_cqi
        self.rb_cap = int(self.budgets.max(initial=0))
        self._cache = {}
        # code rate 1: X(q) RBs, all must arrive -> p ** X
        with np.errstate(invalid="ignore"):
            ps = self.p[:, :, None, :] ** self.blocks[None, None, :, :]
        self.no_fec = (ps >= self.reliability[None, None, :, None]) & self.interest[None, :, :, None]
        self.no_fec[..., 0] = False

    def rows(self, n, k, q) -> np.ndarray:
        """``covered`` for rb = 0..R at once, shape ``[R + 1, V]``."""
        key = (n, k, q)
        hit = self._cache.get(key)
        if hit is None:
            need = int(self.blocks[k, q])
            rbs = np.arange(self.rb_cap + 1)[:, None]
            p = self.p[n, :, q]
            # Markov: P(Bin(rb, p) >= need) <= rb * p, so these columns never qualify
            cols = np.flatnonzero(self.interest[:, k] & (self.rb_cap * p >= self.reliability[k]))
            hit = np.zeros((self.rb_cap + 1, len(p)), dtype=bool)
            if cols.size and need <= self.rb_cap:
                sub = ps_success_array(rbs, need, p[None, cols]) >= self.reliability[k]
                hit[:, cols] = sub & (rbs >= max(need, 1))
            self._cache[key] = hit
        return hit

    def covered(self, n, k, q, rb) -> np.ndarray:
        if rb > self.rb_cap:
            need = int(self.blocks[k, q])
            hit = ps_success_array(rb, need, self.p[n, :, q]) >= self.reliability[k]
            return hit & self.interest[:, k]
        return self.rows(n, k, q)[rb]

    def count(self, n, k, q, rb, members) -> int:
        return int(np.count_nonzero(self.covered(n, k, q, rb) & members))

    def value(self, n, k, q, rb, members) -> float:
        return self.values[k] * self.count(n, k, q, rb, members)

    def no_fec_count(self, n, k, q, members) -> int:
        """Vehicles served at CQI q with code rate 1 (RB = X(q))."""
        return int(np.count_nonzero(self.no_fec[n, :, k, q] & members))

    def no_fec_counts(self, n, k, members) -> np.ndarray:
        """``no_fec_count`` for every CQI 0..15 at once."""
        return np.count_nonzero(self.no_fec[n, :, k, :] & members[:, None], axis=0)

    def best_for_rbs(self, n, k, rb, members, min_q=None):
        """Best (value, q) using exactly ``rb`` RBs with FEC; ties prefer higher CQI."""
        best = (0.0, None)
        for q in reversed(self.allowed):
            if min_q is not None and q < min_q:
                continue
            if self.blocks[k, q] > rb:
                continue
            val = self.value(n, k, q, rb, members)
            if val > best[0]:
                best = (val, q)
        return best


def build_allocation(scenario: Scenario, serving, choice) -> Allocation:
    """``choice[n][k] = (q, rb)``; ``F`` is set to ``X(q) / rb``."""
    n_bs, n_msg = scenario.n_bs, scenario.n_messages
    blocks = scenario.blocks_needed()
    top = max(scenario.allowed_cqi)
    q = np.full((n_bs, n_msg), top, dtype=int)
    f = np.ones((n_bs, n_msg))
    rb = np.zeros((n_bs, n_msg), dtype=int)
    for n in range(n_bs):
        for k in range(n_msg):
            cq, crb = choice[n][k]
            if cq is None or crb <= 0:
                continue
            q[n, k], rb[n, k] = cq, crb
            f[n, k] = min(1.0, blocks[k, cq] / crb)
    return Allocation(q, f, rb, association_matrix(serving, n_bs))
