"""Scenario generation, highway mobility and the replication engine."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import pathlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import yaml

from . import __version__
from .channel import ChannelParams, realize_channel, update_channel
from .mcs import MAX_CQI, MIN_CQI, load_mcs_table
from .model import (BaseStation, MessageType, Scenario, Vehicle, association_matrix,
                    catalog_level, load_catalog, satisfied)
from .solvers import DEFAULT_STATE_CAP, SOLVERS, ExhaustiveRefused, state_count

KMH_TO_MS = 1000.0 / 3600.0
Z95 = 1.96
SWEEP_AXES = {
    "rb_budget": "rb_budget",
    "vehicles": "n_vehicles",
    "radius": "cell_radius_m",
    "speed": "speed_band_kmh",
    "data_rate_level": "data_rate_level",
}


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class ScenarioConfig:
    n_bs: int = 5
    deployment: str = "fixed"
    cell_radius_m: float = 500.0
    # BS spacing; None means two radii
    spacing_m: float | None = None
    lateral_offset_m: float = 10.0
    n_vehicles: int = 50
    speed_band_kmh: tuple = (90.0, 110.0)
    # 0 -> the reference catalog, 1..5 -> the data-rate levels
    data_rate_level: int = 0
    messages: tuple | None = None
    interest_probability: float = 1.0
    rb_budget: int = 30
    slots: int = 100
    resolve_period: int = 100
    slot_seconds: float = 1e-3
    replications: int = 20
    seed: int = 0
    allowed_cqi: tuple | None = None
    # MCS table CSV; None means the packaged copy
    mcs_table: str | None = None
    channel: ChannelParams = ChannelParams()
    solver_options: dict = field(default_factory=dict)

    def __post_init__(self):
        problems = validate_config(self)
        if problems:
            raise ConfigError(problems)

    @property
    def spacing(self) -> float:
        return self.spacing_m if self.spacing_m is not None else 2.0 * self.cell_radius_m

    @property
    def highway(self) -> tuple[float, float]:
        """Segment ``[start, end)`` vehicles drive on (wraps around)."""
        start = -self.spacing / 2.0
        return start, start + self.n_bs * self.spacing

    def message_types(self) -> tuple:
        if self.messages is not None:
            return tuple(MessageType(i, float(m["data_rate_bps"]), float(m["reliability"]),
                                     float(m["weight"])) for i, m in enumerate(self.messages))
        if self.data_rate_level:
            return catalog_level(self.data_rate_level)
        return load_catalog()

    def override(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def with_axis(self, axis: str, value) -> "ScenarioConfig":
        """Config at one sweep point; ``speed`` sets the band to value +/- 10 km/h."""
        if axis not in SWEEP_AXES:
            raise ConfigError([f"sweep axis: unknown axis {axis!r}"])
        if axis == "speed":
            return self.override(speed_band_kmh=(float(value) - 10.0, float(value) + 10.0))
        name = SWEEP_AXES[axis]
        cast = float if name == "cell_radius_m" else int
        return self.override(**{name: cast(value)})

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["speed_band_kmh"] = list(self.speed_band_kmh)
        d["allowed_cqi"] = list(self.allowed_cqi) if self.allowed_cqi is not None else None
        d["messages"] = [dict(m) for m in self.messages] if self.messages is not None else None
        return d


def validate_config(cfg: ScenarioConfig) -> list[str]:
    p = []
    for name in ("n_bs", "n_vehicles", "slots", "resolve_period", "replications"):
        val = getattr(cfg, name)
        if not isinstance(val, (int, np.integer)) or isinstance(val, bool) or val < 1:
            p.append(f"{name}: must be an integer >= 1, got {val!r}")
    if not isinstance(cfg.rb_budget, (int, np.integer)) or cfg.rb_budget < 0:
        p.append(f"rb_budget: must be an integer >= 0, got {cfg.rb_budget!r}")
    if cfg.deployment not in ("fixed", "binomial"):
        p.append(f"deployment: must be 'fixed' or 'binomial', got {cfg.deployment!r}")
    if not cfg.cell_radius_m > 0:
        p.append(f"cell_radius_m: must be positive, got {cfg.cell_radius_m!r}")
    if cfg.spacing_m is not None and not cfg.spacing_m > 0:
        p.append(f"spacing_m: must be positive, got {cfg.spacing_m!r}")
    if not cfg.lateral_offset_m > 0:
        p.append("lateral_offset_m: must be positive")
    band = tuple(cfg.speed_band_kmh)
    if len(band) != 2 or band[0] < 0 or band[1] < band[0]:
        p.append(f"speed_band_kmh: need [low, high] with 0 <= low <= high, got {list(band)}")
    if cfg.data_rate_level not in range(0, 6):
        p.append(f"data_rate_level: must be 0..5, got {cfg.data_rate_level!r}")
    if not 0.0 <= cfg.interest_probability <= 1.0:
        p.append("interest_probability: must lie in [0, 1]")
    if not cfg.slot_seconds > 0:
        p.append("slot_seconds: must be positive")
    if cfg.allowed_cqi is not None:
        if not cfg.allowed_cqi or not all(MIN_CQI <= int(q) <= MAX_CQI for q in cfg.allowed_cqi):
            p.append("allowed_cqi: must be a nonempty subset of 1..15")
    if not isinstance(cfg.channel, ChannelParams):
        p.append("channel: must be a mapping of channel parameters")
    unknown = set(cfg.solver_options) - set(SOLVERS)
    if unknown:
        p.append(f"solver_options: unknown solver(s) {sorted(unknown)}")
    return p


def config_from_dict(raw: dict) -> ScenarioConfig:
    """Build a config from nested plain data, reporting every bad field at once."""
    raw = dict(raw or {})
    known = {f.name for f in dataclasses.fields(ScenarioConfig)}
    problems = [f"{k}: unknown field" for k in raw if k not in known]
    chan = raw.pop("channel", None) or {}
    chan_fields = {f.name for f in dataclasses.fields(ChannelParams)}
    problems += [f"channel.{k}: unknown field" for k in chan if k not in chan_fields]
    raw = {k: v for k, v in raw.items() if k in known}
    chan = {k: v for k, v in chan.items() if k in chan_fields}
    for key in ("speed_band_kmh", "allowed_cqi", "messages"):
        if isinstance(raw.get(key), (list, tuple)):
            raw[key] = tuple(raw[key])
    try:
        cfg = ScenarioConfig(**raw, channel=ChannelParams(**chan))
    except ConfigError as exc:
        problems += exc.problems
    except (TypeError, ValueError) as exc:
        problems.append(f"<config>: {exc}")
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError([f"<file>: not valid YAML ({exc})"]) from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(["<file>: top level must be a mapping"])
    return config_from_dict(raw)


# --- scenario generation and mobility -------------------------------------------

@dataclass(frozen=True)
class SimState:
    scenario: Scenario
    channel: object
    serving: np.ndarray
    segment: tuple
    handoffs: int = 0


def _wrap(x, segment):
    start, end = segment
    return start + np.mod(np.asarray(x) - start, end - start)


def bs_positions(config: ScenarioConfig, rng) -> np.ndarray:
    if config.deployment == "fixed":
        xs = np.arange(config.n_bs) * config.spacing
    else:
        start, end = config.highway
        xs = rng.uniform(start, end, size=config.n_bs)
    return np.column_stack([xs, np.zeros(config.n_bs)])


@lru_cache(maxsize=8)
def mcs_table_for(path):
    """Parsed MCS table, shared across replications so channel caches stay warm."""
    return load_mcs_table(path)


def generate_scenario(config: ScenarioConfig, seed: int):
    """Scenario plus its channel realization, fully determined by ``seed``."""
    rng = np.random.default_rng(seed)
    bs_xy = bs_positions(config, rng)
    start, end = config.highway
    vx = rng.uniform(start, end, size=config.n_vehicles)
    speeds = rng.uniform(*config.speed_band_kmh, size=config.n_vehicles)
    messages = config.message_types()
    interest = rng.random((config.n_vehicles, len(messages))) < config.interest_probability
    veh_xy = np.column_stack([vx, np.full(config.n_vehicles, config.lateral_offset_m)])
    channel = realize_channel(bs_xy, veh_xy, config.channel, rng)
    extra = {"allowed_cqi": tuple(config.allowed_cqi)} if config.allowed_cqi else {}
    scenario = Scenario(
        [BaseStation(n, tuple(bs_xy[n]), config.rb_budget) for n in range(config.n_bs)],
        [Vehicle(v, tuple(veh_xy[v]), float(speeds[v]), tuple(int(i) for i in interest[v]))
         for v in range(config.n_vehicles)],
        messages, table=mcs_table_for(config.mcs_table), **extra)
    return scenario, channel


def initial_state(config: ScenarioConfig, seed: int) -> SimState:
    scenario, channel = generate_scenario(config, seed)
    return SimState(scenario, channel, np.argmax(channel.sinr_db, axis=0), config.highway)


def _xy(items):
    return np.array([it.position for it in items], dtype=float)


def step_mobility(state: SimState, dt_slots: int, slot_seconds: float = 1e-3) -> SimState:
    """Advance vehicles ``dt_slots`` slots, recompute SINRs and hand off where needed.

    A vehicle is handed to its best-SINR BS once its serving BS stops being
    the best; otherwise it stays put.
    """
    sc = state.scenario
    dt = dt_slots * slot_seconds
    vehicles = []
    for v in sc.vehicles:
        x = float(_wrap(v.position[0] + v.speed_kmh * KMH_TO_MS * dt, state.segment))
        vehicles.append(dataclasses.replace(v, position=(x, v.position[1])))
    scenario = dataclasses.replace(sc, vehicles=vehicles)
    channel = update_channel(state.channel, _xy(sc.base_stations), _xy(vehicles))
    sinr = channel.sinr_db
    cols = np.arange(sc.n_vehicles)
    best = np.argmax(sinr, axis=0)
    stale = sinr[state.serving, cols] < sinr[best, cols]
    serving = np.where(stale, best, state.serving)
    return SimState(scenario, channel, serving, state.segment, state.handoffs + int(stale.sum()))


# --- replications -----------------------------------------------------------------

@dataclass
class ReplicationOutcome:
    replication: int
    solver: str
    utility: float = float("nan")
    throughput: np.ndarray | None = None
    runtime_ms: float = float("nan")
    error: str | None = None


def run_replication(config: ScenarioConfig, replication: int, solvers) -> list[ReplicationOutcome]:
    """One replication, every solver seeing the same trajectory."""
    seed = config.seed + replication
    state = initial_state(config, seed)
    n_msg = state.scenario.n_messages
    values = state.scenario.values
    totals = {s: [0.0, np.zeros(n_msg), 0.0, 0] for s in solvers}
    allocs = dict.fromkeys(solvers)
    serving = dict.fromkeys(solvers)
    errors = {}
    n_bs = state.scenario.n_bs
    best_prev = np.argmax(state.channel.sinr_db, axis=0)
    for slot in range(config.slots):
        flipped = np.zeros(state.scenario.n_vehicles, dtype=bool)
        if slot:
            state = step_mobility(state, 1, config.slot_seconds)
            best_now = np.argmax(state.channel.sinr_db, axis=0)
            flipped = best_now != best_prev
            best_prev = best_now
        for name in solvers:
            if name in errors:
                continue
            if slot % config.resolve_period == 0:
                opts = config.solver_options.get(name, {})
                try:
                    res = SOLVERS[name](state.scenario, state.channel, **opts)
                except Exception as exc:  # recorded and excluded, never dropped silently
                    errors[name] = f"{type(exc).__name__}: {exc}"
                    continue
                allocs[name] = res.alloc
                serving[name] = res.alloc.serving.copy()
                totals[name][2] += res.wall_time * 1e3
                totals[name][3] += 1
            elif flipped.any():
                # between re-solves a vehicle hands off when its best BS changes
                serving[name][flipped] = best_prev[flipped]
            alloc = allocs[name].with_y(association_matrix(serving[name], n_bs))
            ok = satisfied(alloc, state.scenario, state.channel)
            thr = ok.sum(axis=0)
            totals[name][0] += float(thr @ values)
            totals[name][1] += thr
    out = []
    for name in solvers:
        if name in errors:
            out.append(ReplicationOutcome(replication, name, error=errors[name]))
            continue
        util, thr, ms, solves = totals[name]
        out.append(ReplicationOutcome(replication, name, util / config.slots,
                                      thr / config.slots, ms / solves))
    return out


def _replication_job(args):
    return run_replication(*args)


@dataclass
class PointSummary:
    sweep_value: object
    solver: str
    mean_utility: float
    ci95: float
    throughput: np.ndarray
    mean_runtime_ms: float
    n: int


@dataclass
class CampaignResult:
    config: ScenarioConfig
    solvers: tuple
    sweep_axis: str | None
    sweep_values: list
    summaries: list
    outcomes: dict  # sweep value -> list[ReplicationOutcome]
    failures: list

    def summary(self, sweep_value, solver) -> PointSummary:
        for s in self.summaries:
            if s.sweep_value == sweep_value and s.solver == solver:
                return s
        raise KeyError((sweep_value, solver))

    def utilities(self, sweep_value, solver) -> dict:
        """Per-replication utilities that succeeded, keyed by replication index."""
        return {o.replication: o.utility for o in self.outcomes[sweep_value]
                if o.solver == solver and o.error is None}

    @property
    def ok(self) -> bool:
        return not self.failures


def mean_ci(samples) -> tuple[float, float]:
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        return float("nan"), float("nan")
    if x.size == 1:
        return float(x[0]), 0.0
    return float(x.mean()), float(Z95 * x.std(ddof=1) / np.sqrt(x.size))


def check_exhaustive(config: ScenarioConfig, solvers):
    """Refuse the exhaustive oracle up front when the instance is too large."""
    if "exhaustive" not in solvers:
        return
    opts = config.solver_options.get("exhaustive", {})
    cap = opts.get("state_cap", DEFAULT_STATE_CAP)
    scenario, _ = generate_scenario(config, config.seed)
    states = state_count(scenario, opts.get("q_grid"))
    if states > cap:
        raise ExhaustiveRefused(
            f"exhaustive search needs {states:.3g} states at this scale (cap {cap:.3g})")


def run_campaign(config: ScenarioConfig, solvers=("heuristic",), sweep_axis=None,
                 sweep_values=None, jobs: int = 1) -> CampaignResult:
    """Replicate every sweep point for every solver and aggregate.

    Replication ``r`` uses seed ``config.seed + r`` at every sweep point, so
    solvers and sweep points are paired by construction.
    """
    solvers = tuple(solvers)
    for s in solvers:
        if s not in SOLVERS:
            raise ConfigError([f"solver: unknown solver {s!r}"])
    points = [(None, config)] if sweep_axis is None else [
        (v, config.with_axis(sweep_axis, v)) for v in sweep_values]
    for _, cfg in points:
        check_exhaustive(cfg, solvers)
    tasks = [(cfg, r, solvers) for _, cfg in points for r in range(cfg.replications)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_replication_job, tasks))
    else:
        results = [_replication_job(t) for t in tasks]

    outcomes, summaries, failures = {}, [], []
    it = iter(results)
    for value, cfg in points:
        rows = [o for _ in range(cfg.replications) for o in next(it)]
        outcomes[value] = rows
        for name in solvers:
            good = [o for o in rows if o.solver == name and o.error is None]
            failures += [{"sweep_value": value, "solver": name, "replication": o.replication,
                          "error": o.error} for o in rows if o.solver == name and o.error]
            mean, ci = mean_ci([o.utility for o in good])
            thr = (np.mean([o.throughput for o in good], axis=0) if good
                   else np.full(len(cfg.message_types()), np.nan))
            runtime = float(np.mean([o.runtime_ms for o in good])) if good else float("nan")
            summaries.append(PointSummary(value, name, mean, ci, thr, runtime, len(good)))
    return CampaignResult(config, solvers, sweep_axis, [v for v, _ in points],
                          summaries, outcomes, failures)


def paired_differences(result: CampaignResult, baseline: str) -> list[dict]:
    """Per sweep point, mean and 95% CI of ``utility(solver) - utility(baseline)``."""
    out = []
    for value in result.sweep_values:
        ref = result.utilities(value, baseline)
        for name in result.solvers:
            if name == baseline:
                continue
            other = result.utilities(value, name)
            common = sorted(set(ref) & set(other))
            mean, ci = mean_ci([other[r] - ref[r] for r in common])
            out.append({"sweep_value": value, "solver": name, "reference": baseline,
                        "mean_diff": mean, "ci95": ci, "n": len(common)})
    return out


# --- output -------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return "nan" if np.isnan(x) else f"{float(x):.6f}"
    return str(x)


def summary_csv(result: CampaignResult, timing: bool = True) -> str:
    n_msg = len(result.config.message_types())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sweep_value", "solver", "mean_utility", "ci95"]
               + [f"throughput_type_{k + 1}" for k in range(n_msg)] + ["mean_runtime_ms"])
    for s in result.summaries:
        w.writerow([_fmt(s.sweep_value), s.solver, _fmt(s.mean_utility), _fmt(s.ci95)]
                   + [_fmt(float(t)) for t in s.throughput]
                   + [_fmt(s.mean_runtime_ms) if timing else ""])
    return buf.getvalue()


def paired_csv(result: CampaignResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sweep_value", "replication", "solver", "utility", "error"])
    for value in result.sweep_values:
        for o in result.outcomes[value]:
            w.writerow([_fmt(value), o.replication, o.solver, _fmt(o.utility), o.error or ""])
    return buf.getvalue()


def paired_diff_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sweep_value", "solver", "reference", "mean_diff", "ci95", "n"])
    for r in rows:
        w.writerow([_fmt(r["sweep_value"]), r["solver"], r["reference"],
                    _fmt(r["mean_diff"]), _fmt(r["ci95"]), r["n"]])
    return buf.getvalue()


def manifest(result: CampaignResult, command: str, extra=None) -> dict:
    return {
        "version": __version__,
        "command": command,
        "seed": result.config.seed,
        "seed_rule": "replication r uses seed + r",
        "config": result.config.to_dict(),
        "solvers": list(result.solvers),
        "sweep_axis": result.sweep_axis,
        "sweep_values": result.sweep_values,
        "failures": result.failures,
        **(extra or {}),
    }


def write_outputs(result: CampaignResult, out_dir, command: str = "run",
                  timing: bool = True, paired_reference: str | None = None, extra=None) -> dict:
    """Write the summary CSV and manifest (plus paired tables when asked)."""
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"summary": out / "summary.csv", "manifest": out / "manifest.json"}
    paths["summary"].write_text(summary_csv(result, timing))
    if paired_reference is not None:
        paths["paired"] = out / "paired.csv"
        paths["paired"].write_text(paired_csv(result))
        paths["paired_diff"] = out / "paired_diff.csv"
        paths["paired_diff"].write_text(paired_diff_csv(paired_differences(result, paired_reference)))
    paths["manifest"].write_text(json.dumps(manifest(result, command, extra), indent=2, sort_keys=True,
                                            default=str) + "\n")
    return paths
