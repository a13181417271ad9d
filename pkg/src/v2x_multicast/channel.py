"""Propagation, fading and per-RB success probability."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import chndtr


class ChannelDomainError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelParams:
    carrier_ghz: float = 5.9
    tx_power_dbm: float = 23.0
    antenna_gain_dbi: float = 1.0
    shadowing_sigma_db: float = 8.2
    rician_k: float = 1.0
    noise_density_dbm_hz: float = -174.0
    # noise is referred to one RB (12 x 15 kHz); see README for the rationale
    bandwidth_hz: float = 180e3
    interferer_count_L: int = 0
    los_probability: float = 0.5
    shadowing: bool = True
    mc_samples: int = 20000

    def __post_init__(self):
        for name in ("carrier_ghz", "tx_power_dbm", "antenna_gain_dbi",
                     "shadowing_sigma_db", "noise_density_dbm_hz", "bandwidth_hz"):
            if not math.isfinite(getattr(self, name)):
                raise ChannelDomainError(f"{name} must be finite")
        if self.rician_k < 0:
            raise ChannelDomainError("rician_k must be >= 0")
        if self.interferer_count_L < 0:
            raise ChannelDomainError("interferer_count_L must be >= 0")
        if self.bandwidth_hz <= 0 or self.carrier_ghz <= 0:
            raise ChannelDomainError("bandwidth and carrier must be positive")
        if not 0.0 <= self.los_probability <= 1.0:
            raise ChannelDomainError("los_probability must be in [0, 1]")

    @property
    def noise_dbm(self) -> float:
        return self.noise_density_dbm_hz + 10 * math.log10(self.bandwidth_hz)


def db_to_lin(x):
    return np.power(10.0, np.asarray(x, dtype=float) / 10.0)


def lin_to_db(x):
    return 10.0 * np.log10(x)


def path_loss_db(distance_m, carrier_ghz: float):
    """UMi street-canyon loss, ``f_c`` in GHz and ``d`` in metres."""
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0) or carrier_ghz <= 0:
        raise ChannelDomainError("distance and carrier frequency must be positive")
    out = 32.4 + 20.0 * np.log10(carrier_ghz) + 31.9 * np.log10(d)
    return out.item() if out.ndim == 0 else out


def received_power_dbm(distance_m, params: ChannelParams, shadowing_db=0.0):
    return (params.tx_power_dbm + params.antenna_gain_dbi
            - path_loss_db(distance_m, params.carrier_ghz) - shadowing_db)


def _position(obj):
    return np.asarray(getattr(obj, "position", obj), dtype=float)


def mean_sinr_db(bs, vehicle, params: ChannelParams, interferers=(),
                 shadowing_db: float = 0.0, interferer_shadowing_db=None) -> float:
    """Mean SINR in dB of the ``bs`` -> ``vehicle`` link.

    ``bs``, ``vehicle`` and each interferer may be objects with a ``position``
    attribute or bare coordinates.
    """
    v = _position(vehicle)
    signal = db_to_lin(received_power_dbm(np.linalg.norm(_position(bs) - v),
                                          params, shadowing_db))
    denom = db_to_lin(params.noise_dbm)
    if interferer_shadowing_db is None:
        interferer_shadowing_db = [0.0] * len(interferers)
    for other, sh in zip(interferers, interferer_shadowing_db):
        denom += db_to_lin(received_power_dbm(np.linalg.norm(_position(other) - v),
                                              params, sh))
    return float(lin_to_db(signal / denom))


def marcum_q(a, b):
    """First-order Marcum Q function ``Q1(a, b)``.

    Evaluated as the survival function of a noncentral chi-square variable
    with two degrees of freedom and noncentrality ``a**2`` at ``b**2``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a < 0) or np.any(b < 0) or not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ChannelDomainError("marcum_q needs finite, non-negative arguments")
    out = np.clip(1.0 - chndtr(b * b, 2.0, a * a), 0.0, 1.0)
    out = np.where(b == 0, 1.0, out)
    return out.item() if out.ndim == 0 else out


def rician_success(threshold_db, mean_snr_db, k_factor):
    """P(instantaneous SNR >= threshold) for a Rician channel, no interferers.

    Vectorised over all three arguments. ``threshold_db=-inf`` gives 1.
    """
    k = np.asarray(k_factor, dtype=float)
    if np.any(k < 0):
        raise ChannelDomainError("Rician K must be >= 0")
    ratio = db_to_lin(np.asarray(threshold_db, dtype=float) - np.asarray(mean_snr_db, dtype=float))
    b2 = 2.0 * (1.0 + k) * ratio
    out = 1.0 - chndtr(b2, 2.0, 2.0 * k * np.ones_like(b2))
    out = np.clip(np.where(b2 == 0, 1.0, out), 0.0, 1.0)
    return out.item() if out.ndim == 0 else out


@dataclass(frozen=True)
class LinkStats:
    """Per-link statistics needed for the per-RB success probability.

    Interferer powers are given relative to the noise floor (INR, dB).
    """
    mean_snr_db: float
    k_factor: float = 1.0
    interferer_inr_db: tuple = ()
    interferer_k: float = 0.0

    @property
    def interferer_count(self) -> int:
        return len(self.interferer_inr_db)


class FadingModel:
    """Maps a protection ratio and link statistics to a per-RB success probability."""

    def success_prob(self, threshold_db: float, link: LinkStats) -> float:
        raise NotImplementedError


class MarcumFading(FadingModel):
    """Closed form for a Rician desired signal and no interferers."""

    def success_prob(self, threshold_db, link):
        if link.interferer_count:
            raise ChannelDomainError("MarcumFading handles L = 0 only; use MonteCarloFading")
        return float(rician_success(threshold_db, link.mean_snr_db, link.k_factor))


@dataclass
class MonteCarloFading(FadingModel):
    """Sampled SINR with Rician/Rayleigh interferers (any L)."""
    samples: int = 20000
    seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed)

    @staticmethod
    def _power_gain(rng, k, size):
        # unit-mean |h|^2 with LOS fraction k/(1+k)
        los = math.sqrt(k / (1.0 + k))
        sigma = math.sqrt(1.0 / (2.0 * (1.0 + k)))
        re = los + sigma * rng.standard_normal(size)
        im = sigma * rng.standard_normal(size)
        return re * re + im * im

    def success_prob(self, threshold_db, link):
        if link.k_factor < 0 or link.interferer_k < 0:
            raise ChannelDomainError("Rician K must be >= 0")
        if threshold_db == -math.inf:
            return 1.0
        n = self.samples
        signal = db_to_lin(link.mean_snr_db) * self._power_gain(self._rng, link.k_factor, n)
        denom = np.ones(n)
        for inr in link.interferer_inr_db:
            denom += db_to_lin(inr) * self._power_gain(self._rng, link.interferer_k, n)
        return float(np.mean(signal / denom >= db_to_lin(threshold_db)))


def rb_success_prob(sinr_threshold_db: float, link: LinkStats,
                    model: FadingModel | None = None) -> float:
    """Probability one RB sent at the given threshold is received by the link."""
    if math.isnan(sinr_threshold_db):
        raise ChannelDomainError("threshold is NaN")
    if model is None:
        model = MarcumFading() if link.interferer_count == 0 else MonteCarloFading()
    return model.success_prob(sinr_threshold_db, link)


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """Frozen per-link state for one replication.

    ``sinr_db`` is the mean SINR matrix indexed ``[bs, vehicle]``; shadowing
    and the LOS/NLOS draw are fixed per link for the whole replication.
    ``interferer_inr_db`` (``[bs, vehicle, L]``) is only set when the
    parameters ask for co-channel interferers.
    """
    sinr_db: np.ndarray
    shadowing_db: np.ndarray
    k_factor: np.ndarray
    params: ChannelParams = ChannelParams()
    interferer_inr_db: np.ndarray | None = None
    seed: int = 0
    success_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("sinr_db", "shadowing_db", "k_factor"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.sinr_db.shape == self.shadowing_db.shape == self.k_factor.shape):
            raise ChannelDomainError("channel matrices must share one shape")
        if not np.all(np.isfinite(self.sinr_db)):
            raise ChannelDomainError("SINR matrix has non-finite entries")

    @property
    def shape(self):
        return self.sinr_db.shape

    def link(self, n: int, v: int) -> LinkStats:
        inr = () if self.interferer_inr_db is None else tuple(self.interferer_inr_db[n, v])
        snr = self.sinr_db[n, v]
        if inr:
            snr = float(lin_to_db(db_to_lin(snr) * (1.0 + db_to_lin(np.array(inr)).sum())))
        return LinkStats(float(snr), float(self.k_factor[n, v]), inr)

    def success_matrix(self, table) -> np.ndarray:
        """``p[n, v, q]`` for every integer CQI ``q`` in 0..15 (q = 0 gives 0)."""
        key = id(table)
        if key not in self.success_cache:
            thr = table.thresholds_db[1:]
            if self.interferer_inr_db is None:
                p = rician_success(thr[None, None, :], self.sinr_db[:, :, None],
                                   self.k_factor[:, :, None])
            else:
                p = self._sampled_success(thr)
            full = np.zeros(self.shape + (len(thr) + 1,))
            full[:, :, 1:] = p
            full.setflags(write=False)
            self.success_cache[key] = full
        return self.success_cache[key]

    def _sampled_success(self, thr):
        # common random numbers across thresholds keep p monotone in CQI
        rng = np.random.default_rng(self.seed)
        n_bs, n_veh = self.shape
        m = self.params.mc_samples
        out = np.empty((n_bs, n_veh, len(thr)))
        thr_lin = db_to_lin(thr)
        for n in range(n_bs):
            for v in range(n_veh):
                link = self.link(n, v)
                sig = db_to_lin(link.mean_snr_db) * MonteCarloFading._power_gain(rng, link.k_factor, m)
                den = np.ones(m)
                for inr in link.interferer_inr_db:
                    den += db_to_lin(inr) * MonteCarloFading._power_gain(rng, link.interferer_k, m)
                sinr = np.sort(sig / den)
                out[n, v] = 1.0 - np.searchsorted(sinr, thr_lin, side="left") / m
        return out


def _distances(bs_xy, veh_xy):
    return np.linalg.norm(bs_xy[:, None, :] - veh_xy[None, :, :], axis=-1)


def _link_state(bs_xy, veh_xy, params: ChannelParams, shadowing_db):
    """Mean SINR matrix and, for L > 0, the INRs of the L strongest other BSs."""
    rx = db_to_lin(received_power_dbm(_distances(bs_xy, veh_xy), params, shadowing_db))
    noise = db_to_lin(params.noise_dbm)
    L = min(params.interferer_count_L, len(bs_xy) - 1)
    if L <= 0:
        return lin_to_db(rx / noise), None
    n_bs = len(bs_xy)
    inr = np.empty(rx.shape + (L,))
    for n in range(n_bs):
        others = np.delete(rx, n, axis=0) / noise
        inr[n] = lin_to_db(-np.sort(-others, axis=0)[:L].T)
    sinr = lin_to_db(rx / (noise * (1.0 + db_to_lin(inr).sum(axis=-1))))
    return sinr, inr


def sinr_matrix(bs_xy, veh_xy, params: ChannelParams, shadowing_db):
    """Mean SINR (dB) for every BS/vehicle pair."""
    return _link_state(np.asarray(bs_xy, float), np.asarray(veh_xy, float),
                       params, shadowing_db)[0]


def realize_channel(bs_xy, veh_xy, params: ChannelParams,
                    rng: np.random.Generator) -> ChannelRealization:
    """Draw shadowing and LOS/NLOS once per link and compute mean SINRs."""
    bs_xy = np.asarray(bs_xy, dtype=float)
    veh_xy = np.asarray(veh_xy, dtype=float)
    shape = (len(bs_xy), len(veh_xy))
    shadow = rng.normal(0.0, params.shadowing_sigma_db, size=shape)
    if not params.shadowing:
        shadow = np.zeros(shape)
    los = rng.random(shape) < params.los_probability
    k = np.where(los, params.rician_k, 0.0)
    seed = int(rng.integers(2**31))
    sinr, inr = _link_state(bs_xy, veh_xy, params, shadow)
    return ChannelRealization(sinr, shadow, k, params, inr, seed)


def update_channel(channel: ChannelRealization, bs_xy, veh_xy) -> ChannelRealization:
    """Recompute mean SINRs for new positions, keeping the frozen per-link draws."""
    sinr, inr = _link_state(np.asarray(bs_xy, float), np.asarray(veh_xy, float),
                            channel.params, channel.shadowing_db)
    return replace(channel, sinr_db=sinr, interferer_inr_db=inr, success_cache={})


class TabulatedChannel:
    """A channel given directly by its SINR matrix and per-RB success table.

    ``success[n, v, q]`` covers q = 0..15. Used for hand-checked fixtures
    where the fading model would only obscure the arithmetic.
    """

    def __init__(self, sinr_db, success):
        self.sinr_db = np.asarray(sinr_db, dtype=float)
        self._success = np.asarray(success, dtype=float)
        if self._success.shape != self.sinr_db.shape + (16,):
            raise ChannelDomainError("success table must be [bs, vehicle, 16]")
        if np.any((self._success < 0) | (self._success > 1)):
            raise ChannelDomainError("success probabilities must lie in [0, 1]")

    @property
    def shape(self):
        return self.sinr_db.shape

    def success_matrix(self, table=None) -> np.ndarray:
        return self._success

    @classmethod
    def hard_threshold(cls, sinr_db, table, overrides=()):
        """p = 1 up to each link's reported CQI and 0 above, then explicit overrides."""
        sinr = np.asarray(sinr_db, dtype=float)
        cqi = table.sinr_to_cqi_array(sinr)
        q = np.arange(16)
        p = ((q[None, None, :] <= cqi[:, :, None]) & (q > 0)).astype(float)
        for n, v, qq, val in overrides:
            p[n, v, qq] = val
        return cls(sinr, p)
