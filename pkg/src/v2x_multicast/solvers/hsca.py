"""Hyperbolic-tangent smoothing with iterated linear surrogates."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from ..association import initial_association, refine_association
from ..mcs import MAX_CQI, MIN_CQI
from ..model import RE_PER_RB, _CEIL_EPS
from .common import LinkTable, build_allocation, finish
from .heuristic import heuristic_solve

START_CQI = 10.0


@dataclass(frozen=True)
class AugmentedVector:
    """Relaxed decision point: ``q_part`` is Q flattened ``[N*K]``, ``y_part`` is y ``[N*V]``."""
    q_part: np.ndarray
    y_part: np.ndarray
    n_bs: int

    def __post_init__(self):
        object.__setattr__(self, "q_part", np.asarray(self.q_part, dtype=float).ravel())
        object.__setattr__(self, "y_part", np.asarray(self.y_part, dtype=float).ravel())

    @classmethod
    def from_arrays(cls, q, y):
        q, y = np.asarray(q, float), np.asarray(y, float)
        return cls(q.ravel(), y.ravel(), q.shape[0])

    @property
    def q(self) -> np.ndarray:
        return self.q_part.reshape(self.n_bs, -1)

    @property
    def y(self) -> np.ndarray:
        return self.y_part.reshape(self.n_bs, -1)

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.q_part, self.y_part])

    def with_flat(self, flat) -> "AugmentedVector":
        flat = np.asarray(flat, dtype=float)
        return AugmentedVector(flat[:self.q_part.size], flat[self.q_part.size:], self.n_bs)

    def distance_sq(self, other) -> float:
        return float(np.sum((self.flat - other.flat) ** 2))


class SmoothedObjective:
    """Negated tanh-smoothed system utility over relaxed (Q, y).

    Each (n, v, k) contributes ``a_k D_k (tanh(C (w y p^X(Q) - P_k)) + 1) / 2``
    where ``X(Q)`` is the code-rate-1 RB count. At fractional Q both the
    per-RB success probability and the spectral efficiency are interpolated
    linearly between neighbouring CQIs.
    """

    def __init__(self, scenario, channel, c_constant: float = 50.0):
        if not c_constant > 0:
            raise ValueError("c_constant must be positive")
        self.c_constant = float(c_constant)
        self.slots_per_second = scenario.slots_per_second
        self.scenario = scenario
        self.table = scenario.table
        self.p = channel.success_matrix(scenario.table)
        self.w = scenario.interest.astype(float)
        self.reliability = scenario.reliabilities
        self.values = scenario.values
        self.rates = scenario.data_rates

    def blocks(self, q) -> np.ndarray:
        """``X`` at (possibly fractional) CQI ``q[n, k]``."""
        eff = np.interp(q, np.arange(MIN_CQI, MAX_CQI + 1), self.table.efficiencies[1:])
        rd = RE_PER_RB * eff * self.slots_per_second
        return np.ceil(self.rates[None, :] / rd - _CEIL_EPS)

    def rb_success(self, q) -> np.ndarray:
        """Per-RB success ``p[n, v, k]`` at CQI ``q[n, k]``."""
        q = np.clip(q, MIN_CQI, MAX_CQI)
        lo = np.minimum(np.floor(q).astype(int), MAX_CQI - 1)
        frac = q - lo
        n_bs, n_veh = self.p.shape[:2]
        nn = np.arange(n_bs)[:, None, None]
        vv = np.arange(n_veh)[None, :, None]
        p_lo = self.p[nn, vv, lo[:, None, :]]
        p_hi = self.p[nn, vv, lo[:, None, :] + 1]
        return p_lo + (p_hi - p_lo) * frac[:, None, :]

    def terms(self, q, y) -> np.ndarray:
        """Smoothed utility ``[n, v, k]`` (positive; the objective is minus the sum)."""
        ps = self.rb_success(q) ** self.blocks(q)[:, None, :]
        arg = self.w[None, :, :] * np.asarray(y, float)[:, :, None] * ps - self.reliability
        return self.values * 0.5 * (np.tanh(self.c_constant * arg) + 1.0)

    def __call__(self, x: AugmentedVector) -> float:
        return -float(self.terms(x.q, x.y).sum())

    def budget_ok(self, x: AugmentedVector, active) -> bool:
        used = np.where(active, self.blocks(x.q), 0).sum(axis=1)
        return bool(np.all(used <= self.scenario.budgets))

    def secant_gradient(self, x_t: AugmentedVector, x_prev: AugmentedVector) -> AugmentedVector:
        """Same result as ``finite_diff_gradient`` using the objective's separability.

        Q[n, k] only enters terms (n, :, k) and y[n, v] only terms (n, v, :),
        so every single-coordinate replacement is evaluated in one pass.
        """
        base = self.terms(x_prev.q, x_prev.y)
        dq = x_t.q - x_prev.q
        dy = x_t.y - x_prev.y
        swap_q = self.terms(x_t.q, x_prev.y)
        swap_y = self.terms(x_prev.q, x_t.y)
        num_q = -(swap_q - base).sum(axis=1)
        num_y = -(swap_y - base).sum(axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            gq = np.where(dq != 0, num_q / np.where(dq != 0, dq, 1), 0.0)
            gy = np.where(dy != 0, num_y / np.where(dy != 0, dy, 1), 0.0)
        return AugmentedVector.from_arrays(gq, gy)


def smoothed_utility(x: AugmentedVector, obj: SmoothedObjective) -> float:
    return obj(x)


def finite_diff_gradient(x_t: AugmentedVector, x_prev: AugmentedVector, objective) -> AugmentedVector:
    """Secant slope along each coordinate that moved between two iterates.

    Coordinate j gets ``(U(x_prev with j set to x_t[j]) - U(x_prev)) / (x_t[j] - x_prev[j])``;
    coordinates that did not move get 0.
    """
    a, b = x_prev.flat, x_t.flat
    base = objective(x_prev)
    grad = np.zeros_like(a)
    for j in np.flatnonzero(a != b):
        probe = a.copy()
        probe[j] = b[j]
        grad[j] = (objective(x_prev.with_flat(probe)) - base) / (b[j] - a[j])
    return x_prev.with_flat(grad)


def surrogate_argmin(gradient: AugmentedVector, x: AugmentedVector,
                     q_bounds=(MIN_CQI, MAX_CQI)) -> AugmentedVector:
    """Minimise ``<gradient, x'>`` over the CQI box times the per-vehicle simplices.

    Zero gradient entries keep the current value; a vehicle keeps its
    current vertex unless another BS has a strictly smaller entry.
    """
    lo, hi = q_bounds
    gq = gradient.q_part
    q = np.where(gq > 0, lo, np.where(gq < 0, hi, x.q_part))
    gy, y = gradient.y, x.y
    new_y = y.copy()
    for v in range(y.shape[1]):
        col = gy[:, v]
        if np.all(col == 0):
            continue
        cur = int(np.argmax(y[:, v]))
        best = int(np.argmin(col))
        pick = cur if col[cur] <= col[best] and np.isclose(y[cur, v], 1.0) else best
        new_y[:, v] = 0.0
        new_y[pick, v] = 1.0
    return AugmentedVector.from_arrays(q.reshape(x.q.shape), new_y)


def _round_cqi(q, allowed, up=False):
    grid = np.asarray(allowed, dtype=float)
    if up:
        idx = np.minimum(np.searchsorted(grid, q - 1e-12, side="left"), len(grid) - 1)
        return grid[idx].astype(int)
    return grid[np.argmin(np.abs(q[..., None] - grid), axis=-1)].astype(int)


def _value_table(table: LinkTable, n, k, members):
    """Best utility and matching CQI for exactly rb RBs, rb = 0..R; ties prefer higher CQI."""
    rb_cap = table.rb_cap
    best_val = np.zeros(rb_cap + 1)
    best_q = np.zeros(rb_cap + 1, dtype=int)
    for q in reversed(table.allowed):
        vals = table.values[k] * (table.rows(n, k, q) & members).sum(axis=1)
        better = vals > best_val
        best_val = np.where(better, vals, best_val)
        best_q = np.where(better, q, best_q)
    return best_val, best_q


def residual_pass(table: LinkTable, n, members, state, tabs=None):
    """Hand leftover RBs of BS n to the type with the best utility gain per RB.

    ``state[k] = (q, rb)``. A move may grant several RBs at once and re-pick
    the CQI; the code rate is the strongest the data rate allows. Stops when
    no move gains.
    """
    budget = int(table.budgets[n])
    n_msg = len(state)
    if tabs is None:
        tabs = [_value_table(table, n, k, members) for k in range(n_msg)]
    current = [table.value(n, k, q, rb, members) if q is not None and rb > 0 else 0.0
               for k, (q, rb) in enumerate(state)]
    moves = 0
    while True:
        left = budget - sum(rb for _, rb in state)
        best = None
        for k, (q, rb) in enumerate(state):
            vals, qs = tabs[k]
            top = min(rb + left, len(vals) - 1)
            if top <= rb:
                continue
            extra = np.arange(1, top - rb + 1)
            gain = vals[rb + 1:top + 1] - current[k]
            rate = gain / extra
            j = int(np.argmax(rate))
            if gain[j] <= 0:
                continue
            cand = (rate[j], -extra[j], -k)
            if best is None or cand > best[0]:
                best = (cand, k, rb + extra[j], int(qs[rb + extra[j]]), vals[rb + extra[j]])
        if best is None:
            return moves
        _, k, rb_new, q_new, val = best
        state[k] = (q_new, int(rb_new))
        current[k] = val
        moves += 1


def _rounded_state(table: LinkTable, n, members, active, q_row):
    """Round one BS's relaxed CQIs to ``[(q, rb)]``; may exceed the budget."""
    blocks, ks = table.blocks, np.arange(len(q_row))
    qn = _round_cqi(q_row, table.allowed)
    if np.where(active, blocks[ks, qn], 0).sum() > table.budgets[n]:
        qn = _round_cqi(q_row, table.allowed, up=True)
    state = []
    for k, q in enumerate(qn):
        rb = int(blocks[k, q])
        if active[k] and table.count(n, k, int(q), rb, members) > 0:
            state.append((int(q), rb))
        else:
            state.append((None, 0))
    return state


def _bs_value(table: LinkTable, n, members, state):
    return sum(table.value(n, k, q, rb, members) for k, (q, rb) in enumerate(state) if q is not None)


def hsca_solve(scenario, channel, c_constant: float = 50.0, epsilon: float = 1e-3,
               max_iters: int = 200, step_size: float = 0.1, keep_best: bool = True,
               repair: bool = True):
    """Relaxed CQI descent on the smoothed objective, rounding, then a residual-RB pass.

    Iterates start from the refined association with every CQI at 10 and
    then 9. Each step moves a fraction ``step_size`` toward the linear
    surrogate's minimiser and stops once the move is below ``epsilon`` or the
    next iterate would break an RB budget. With ``keep_best`` every BS keeps
    the rounded iterate along the path that scores best after the residual
    pass; otherwise only the final iterate is rounded. With ``repair`` a
    rounded point may drop some of its per-type assignments before the
    residual pass refills the freed RBs; without it a rounding that overruns
    a budget falls back to the heuristic.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not 0 < step_size <= 1:
        raise ValueError("step_size must lie in (0, 1]")
    started = time.perf_counter()
    obj = SmoothedObjective(scenario, channel, c_constant)
    table = LinkTable(scenario, channel)
    y0 = refine_association(initial_association(channel), channel)
    serving = np.argmax(y0, axis=0)
    n_bs, n_msg = scenario.n_bs, scenario.n_messages
    members = [serving == n for n in range(n_bs)]
    active = np.array([[np.any(members[n] & table.interest[:, k]) for k in range(n_msg)]
                       for n in range(n_bs)])

    x_prev = AugmentedVector.from_arrays(np.full((n_bs, n_msg), START_CQI), y0)
    x_t = AugmentedVector.from_arrays(np.full((n_bs, n_msg), START_CQI - 1), y0)
    trace = [-obj(x_prev), -obj(x_t)]
    path = [x_prev]
    iterations = 1
    if obj.budget_ok(x_t, active):
        path.append(x_t)
        while iterations < max_iters:
            grad = obj.secant_gradient(x_t, x_prev)
            target = surrogate_argmin(grad, x_t)
            x_next = x_t.with_flat(x_t.flat + step_size * (target.flat - x_t.flat))
            if not obj.budget_ok(x_next, active):
                break
            iterations += 1
            moved = x_next.distance_sq(x_t)
            x_prev, x_t = x_t, x_next
            path.append(x_t)
            trace.append(-obj(x_t))
            if moved <= epsilon:
                break
    if not keep_best:
        path = path[-1:]

    choice = []
    for n in range(n_bs):
        tabs = [_value_table(table, n, k, members[n]) for k in range(n_msg)]
        best, seen = None, set()
        for x in reversed(path):
            rounded = _rounded_state(table, n, members[n], active[n], x.q[n])
            used = [k for k, (q, _) in enumerate(rounded) if q is not None]
            # the rounded point may tie RBs to types that earn little per RB;
            # with repair, any subset of its assignments may be released first
            options = itertools.product((True, False), repeat=len(used)) if repair else [(True,) * len(used)]
            for keep in options:
                state = list(rounded)
                for k, kept in zip(used, keep):
                    if not kept:
                        state[k] = (None, 0)
                key = tuple(state)
                if key in seen or sum(rb for _, rb in state) > table.budgets[n]:
                    continue
                seen.add(key)
                residual_pass(table, n, members[n], state, tabs)
                val = _bs_value(table, n, members[n], state)
                if best is None or val > best[0]:
                    best = (val, state)
        if best is None:
            res = heuristic_solve(scenario, channel)
            res.solver, res.fallback, res.trace = "hsca", True, trace
            res.iterations = iterations
            res.wall_time = time.perf_counter() - started
            return res
        choice.append(best[1])
    alloc = build_allocation(scenario, serving, choice)
    return finish("hsca", alloc, scenario, channel, started, iterations=iterations, trace=trace)
