"""Decision variables, data rates, reception probability and utility."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.special import bdtrc

from .mcs import DEFAULT_TABLE, MAX_CQI, MIN_CQI, McsTable

SUBCARRIERS_PER_RB = 12
SYMBOLS_PER_SLOT = 14
RE_PER_RB = SUBCARRIERS_PER_RB * SYMBOLS_PER_SLOT
DEFAULT_SLOTS_PER_SECOND = 1000  # 15 kHz SCS, 1 ms slots

# guards ceil() against products like 3 * (2/3) landing a hair above an integer
_CEIL_EPS = 1e-9
# relative slack tolerated when checking RB * RD * F >= D
_RATE_RTOL = 1e-9


class NoTransmissionError(ValueError):
    pass


@dataclass(frozen=True)
class MessageType:
    index: int
    data_rate_bps: float
    reliability: float
    weight: float

    def __post_init__(self):
        if self.data_rate_bps <= 0:
            raise ValueError("data rate must be positive")
        if not 0.0 < self.reliability < 1.0:
            raise ValueError("reliability must lie in (0, 1)")
        if self.weight < 0:
            raise ValueError("weight must be >= 0")

    @property
    def value(self) -> float:
        return self.weight * self.data_rate_bps


@dataclass(frozen=True)
class BaseStation:
    index: int
    position: tuple
    rb_budget: int

    def __post_init__(self):
        if self.rb_budget < 0:
            raise ValueError("RB budget must be >= 0")


@dataclass(frozen=True)
class Vehicle:
    index: int
    position: tuple
    speed_kmh: float
    interest: tuple

    def __post_init__(self):
        if any(w not in (0, 1) for w in self.interest):
            raise ValueError("interest flags must be 0 or 1")


def _catalog_json():
    return json.loads((resources.files("v2x_multicast") / "data" / "messages.json").read_text())


def load_catalog(path=None) -> tuple[MessageType, ...]:
    data = json.loads(open(path).read()) if path else _catalog_json()
    return tuple(MessageType(**m) for m in data["catalog"])


def catalog_level(level: int, path=None) -> tuple[MessageType, ...]:
    """The default catalog with data rates replaced by one of the five levels."""
    data = json.loads(open(path).read()) if path else _catalog_json()
    rates = data["data_rate_levels"][str(level)]
    return tuple(MessageType(m["index"], float(r), m["reliability"], m["weight"])
                 for m, r in zip(data["catalog"], rates))


DEFAULT_CATALOG = load_catalog()


@dataclass(frozen=True, eq=False)
class Scenario:
    base_stations: tuple
    vehicles: tuple
    messages: tuple
    slots_per_second: int = DEFAULT_SLOTS_PER_SECOND
    allowed_cqi: tuple = tuple(range(MIN_CQI, MAX_CQI + 1))
    table: McsTable = DEFAULT_TABLE

    def __post_init__(self):
        object.__setattr__(self, "base_stations", tuple(self.base_stations))
        object.__setattr__(self, "vehicles", tuple(self.vehicles))
        object.__setattr__(self, "messages", tuple(self.messages))
        object.__setattr__(self, "allowed_cqi", tuple(sorted(set(self.allowed_cqi))))
        if not self.allowed_cqi or not all(MIN_CQI <= q <= MAX_CQI for q in self.allowed_cqi):
            raise ValueError("allowed CQIs must lie in 1..15")
        for v in self.vehicles:
            if len(v.interest) != len(self.messages):
                raise ValueError(f"vehicle {v.index} interest has wrong length")

    @property
    def n_bs(self):
        return len(self.base_stations)

    @property
    def n_vehicles(self):
        return len(self.vehicles)

    @property
    def n_messages(self):
        return len(self.messages)

    @property
    def interest(self) -> np.ndarray:
        """``w[v, k]``."""
        return np.array([v.interest for v in self.vehicles], dtype=int).reshape(
            self.n_vehicles, self.n_messages)

    @property
    def budgets(self) -> np.ndarray:
        return np.array([b.rb_budget for b in self.base_stations], dtype=int)

    @property
    def data_rates(self) -> np.ndarray:
        return np.array([m.data_rate_bps for m in self.messages], dtype=float)

    @property
    def reliabilities(self) -> np.ndarray:
        return np.array([m.reliability for m in self.messages], dtype=float)

    @property
    def values(self) -> np.ndarray:
        """``a_k * D_k`` per message type."""
        return np.array([m.value for m in self.messages], dtype=float)

    def blocks_needed(self) -> np.ndarray:
        """``X[k, q]``: RBs needed at code rate 1 for each type and integer CQI (q = 0 -> 0)."""
        rd = rb_data_rate(np.arange(1, MAX_CQI + 1), self.table, self.slots_per_second)
        x = np.zeros((self.n_messages, MAX_CQI + 1), dtype=int)
        x[:, 1:] = np.ceil(self.data_rates[:, None] / rd[None, :] - _CEIL_EPS).astype(int)
        return x


@dataclass(frozen=True, eq=False)
class Allocation:
    """``q``, ``f``, ``rb`` are ``[bs, message]``; ``y`` is ``[bs, vehicle]``."""
    q: np.ndarray
    f: np.ndarray
    rb: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        for name, dtype in (("q", int), ("f", float), ("rb", int), ("y", int)):
            arr = np.array(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def serving(self) -> np.ndarray:
        """Serving BS of each vehicle."""
        return np.argmax(self.y, axis=0)

    def to_dict(self) -> dict:
        return {"q": self.q.tolist(), "f": self.f.tolist(),
                "rb": self.rb.tolist(), "y": self.y.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["q"], d["f"], d["rb"], d["y"])

    def with_y(self, y):
        return Allocation(self.q, self.f, self.rb, y)

    def __eq__(self, other):
        return (isinstance(other, Allocation) and np.array_equal(self.q, other.q)
                and np.array_equal(self.f, other.f) and np.array_equal(self.rb, other.rb)
                and np.array_equal(self.y, other.y))


def association_matrix(serving, n_bs: int) -> np.ndarray:
    serving = np.asarray(serving, dtype=int)
    y = np.zeros((n_bs, len(serving)), dtype=int)
    y[serving, np.arange(len(serving))] = 1
    return y


def rb_data_rate(q, table: McsTable = DEFAULT_TABLE,
                 slots_per_second: int = DEFAULT_SLOTS_PER_SECOND):
    """Bits per second carried by one RB position granted in every slot."""
    q_arr = np.asarray(q)
    if np.any(q_arr <= 0):
        raise NoTransmissionError("CQI 0 means no transmission")
    return RE_PER_RB * table.efficiency(q) * slots_per_second


def rb_count(d_k: float, rd: float, f: float = 1.0) -> int:
    """Smallest RB count meeting ``RB * rd * f >= d_k``."""
    if rd <= 0 or not 0.0 < f <= 1.0:
        raise ValueError("rd must be positive and f in (0, 1]")
    return max(0, math.ceil(d_k / (rd * f) - _CEIL_EPS))


def required_blocks(rb, f):
    """Blocks a receiver must collect: ``ceil(RB * F)``."""
    return np.ceil(np.asarray(rb) * np.asarray(f) - _CEIL_EPS).astype(int)


def binomial_terms(rb: int, p: float) -> np.ndarray:
    """``C(rb, i) p^i (1-p)^(rb-i)`` for i = 0..rb, built in log space."""
    i = np.arange(rb + 1)
    if p <= 0.0 or p >= 1.0:
        out = np.zeros(rb + 1)
        out[0 if p <= 0.0 else rb] = 1.0
        return out
    log_c = (math.lgamma(rb + 1) - np.array([math.lgamma(k + 1) for k in i])
             - np.array([math.lgamma(rb - k + 1) for k in i]))
    return np.exp(log_c + i * math.log(p) + (rb - i) * math.log1p(-p))


def ps_success(rb: int, f: float, p: float) -> float:
    """Probability at least ``ceil(rb*f)`` of ``rb`` independent RBs arrive."""
    if rb < 1:
        raise ValueError("rb must be >= 1")
    if not 0.0 < f <= 1.0 or not 0.0 <= p <= 1.0:
        raise ValueError("need f in (0, 1] and p in [0, 1]")
    need = int(required_blocks(rb, f))
    if need >= rb:
        return p ** rb
    return float(min(1.0, binomial_terms(rb, p)[need:].sum()))


def ps_success_array(rb, need, p):
    """Vectorised tail probability ``P(Binomial(rb, p) >= need)``; 0 where rb == 0."""
    rb, need, p = np.asarray(rb), np.asarray(need), np.asarray(p, dtype=float)
    with np.errstate(invalid="ignore"):
        tail = bdtrc(np.maximum(need - 1, 0), np.maximum(rb, 1), p)
        out = np.where(need >= rb, p ** rb, tail)
    return np.where(rb <= 0, 0.0, np.clip(out, 0.0, 1.0))


def utility(ps: float, msg: MessageType) -> float:
    return msg.value if ps >= msg.reliability else 0.0


def success_probabilities(alloc: Allocation, scenario: Scenario, channel) -> np.ndarray:
    """``PS[n, v, k]`` including the interest and association gates."""
    p_table = channel.success_matrix(scenario.table)
    n_bs, n_veh = channel.shape
    p = p_table[np.arange(n_bs)[:, None, None], np.arange(n_veh)[None, :, None],
                alloc.q[:, None, :]]
    need = required_blocks(alloc.rb, alloc.f)
    ps = ps_success_array(alloc.rb[:, None, :], need[:, None, :], p)
    return ps * scenario.interest[None, :, :] * alloc.y[:, :, None]


def satisfied(alloc: Allocation, scenario: Scenario, channel) -> np.ndarray:
    """``[v, k]``: vehicle is interested and meets the reliability target."""
    ps = success_probabilities(alloc, scenario, channel)
    ok = (ps >= scenario.reliabilities[None, None, :]) & (alloc.rb[:, None, :] > 0)
    ok &= (alloc.y[:, :, None] == 1) & (scenario.interest[None, :, :] == 1)
    return ok.any(axis=0)


def system_utility(alloc: Allocation, scenario: Scenario, channel) -> float:
    return float((satisfied(alloc, scenario, channel) * scenario.values[None, :]).sum())


@dataclass(frozen=True)
class Violation:
    constraint: str
    indices: tuple
    slack: float


def check_feasibility(alloc: Allocation, scenario: Scenario) -> list[Violation]:
    """Every broken constraint among RB budget, data rate and unique association."""
    out = []
    n_bs, n_msg = scenario.n_bs, scenario.n_messages
    if alloc.q.shape != (n_bs, n_msg) or alloc.y.shape != (n_bs, scenario.n_vehicles):
        return [Violation("shape", (alloc.q.shape, alloc.y.shape), math.nan)]
    budgets = scenario.budgets
    for n in range(n_bs):
        slack = budgets[n] - int(alloc.rb[n].sum())
        if slack < 0:
            out.append(Violation("rb_budget", (n,), float(slack)))
    rb, q, f = alloc.rb, alloc.q, alloc.f
    sent = rb > 0
    in_domain = (q >= MIN_CQI) & (q <= MAX_CQI) & (f > 0.0) & (f <= 1.0)
    eff = scenario.table.efficiencies[np.clip(q, 0, MAX_CQI)]
    delivered = rb * RE_PER_RB * eff * scenario.slots_per_second * f
    short = delivered < scenario.data_rates[None, :] * (1.0 - _RATE_RTOL)
    for n, k in zip(*np.nonzero((rb < 0) | (sent & (~in_domain | short)))):
        n, k = int(n), int(k)
        if rb[n, k] < 0:
            out.append(Violation("rb_nonnegative", (n, k), float(rb[n, k])))
        elif not in_domain[n, k]:
            out.append(Violation("domain", (n, k), math.nan))
        else:
            out.append(Violation("data_rate", (n, k), float(delivered[n, k] - scenario.data_rates[k])))
    if not np.isin(alloc.y, (0, 1)).all():
        out.append(Violation("association_binary", (), math.nan))
    for v, s in enumerate(alloc.y.sum(axis=0)):
        if s != 1:
            out.append(Violation("association", (v,), float(s - 1)))
    return out


def empty_allocation(scenario: Scenario, y) -> Allocation:
    shape = (scenario.n_bs, scenario.n_messages)
    return Allocation(np.full(shape, max(scenario.allowed_cqi)), np.ones(shape),
                      np.zeros(shape, dtype=int), y)
