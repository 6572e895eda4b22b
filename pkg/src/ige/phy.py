"""Superposed received power, RSSI sampling and receiver nonlinearities.

Concurrent senders transmitting the same packet produce a beating pattern:
the instantaneous received power oscillates around the sum of the
individually received powers with one sinusoid per sender pair.  An RSSI
trace samples that pattern and then passes through the receiver effects
(saturation, AGC overshoot, 1 dB quantization, floor clamp).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError


def dbm_to_mw(dbm):
    return np.power(10.0, np.asarray(dbm, dtype=float) / 10.0) if np.ndim(dbm) else 10.0 ** (float(dbm) / 10.0)


def mw_to_dbm(mw):
    if np.ndim(mw):
        return 10.0 * np.log10(np.asarray(mw, dtype=float))
    if mw <= 0:
        raise InvalidInputError(f"power must be positive, got {mw} mW")
    return 10.0 * math.log10(mw)


@dataclass(frozen=True)
class PowerLevel:
    """A power value carried in dBm."""

    dbm: float

    def __post_init__(self):
        if not math.isfinite(self.dbm):
            raise InvalidInputError(f"power level must be finite, got {self.dbm}")

    @classmethod
    def from_mw(cls, mw: float) -> "PowerLevel":
        return cls(mw_to_dbm(mw))

    @property
    def mw(self) -> float:
        return dbm_to_mw(self.dbm)


class DataPattern(enum.Enum):
    SAME_AS_OTHERS = "same"
    ALL_ONES = "ones"
    ALL_ZEROS = "zeros"
    WHITENED = "whitened"


@dataclass(frozen=True)
class OvershootModel:
    """Stochastic AGC overshoot.

    Short overshoots start at beating peaks with probability ``short_prob``
    each and lift ``short_duration_samples`` samples by ``short_gain_db``.
    A long overshoot hits a trace with probability ``long_prob`` and lifts a
    window of ``long_duration`` beating cycles by ``long_gain_db``.
    """

    short_prob: float = 0.0
    short_gain_db: float = 3.0
    short_duration_samples: int = 3
    long_prob: float = 0.0
    long_gain_db: float = 3.0
    long_duration: float = 0.6

    def __post_init__(self):
        for p in (self.short_prob, self.long_prob):
            if not 0.0 <= p <= 1.0:
                raise InvalidInputError(f"overshoot probability out of [0, 1]: {p}")
        if self.short_duration_samples <= 0 or self.long_duration <= 0:
            raise InvalidInputError("overshoot durations must be positive")

    @property
    def enabled(self) -> bool:
        return self.short_prob > 0 or self.long_prob > 0

    @property
    def headroom_db(self) -> float:
        return max(self.short_gain_db, self.long_gain_db, 0.0) if self.enabled else 0.0


NO_OVERSHOOT = OvershootModel()


@dataclass(frozen=True)
class PhyConfig:
    modulation_index: float = 0.5
    symbol_time: float = 1e-6
    sampling_period: float = 1e-6
    samples_per_packet: int = 1200
    rx_floor_dbm: float = -90.0
    rx_ceiling_dbm: float = -20.0
    rssi_quantum_db: float = 1.0
    tx_accuracy_db: float = 1.0
    rx_accuracy_db: float = 2.0
    jitter_db: float = 0.2
    # cross-term factor applied to the ultra-fast (different-data) beating;
    # 1.0 disables the AGC over-reaction
    agc_factor: float = 0.8
    saturate: bool = True
    quantize: bool = True
    clamp_floor: bool = True

    def __post_init__(self):
        if self.sampling_period <= 0 or self.symbol_time <= 0:
            raise InvalidInputError("sampling_period and symbol_time must be positive")
        if self.rx_floor_dbm >= self.rx_ceiling_dbm:
            raise InvalidInputError("rx_floor_dbm must be below rx_ceiling_dbm")
        if self.rssi_quantum_db <= 0:
            raise InvalidInputError("rssi_quantum_db must be positive")
        if self.samples_per_packet < 1:
            raise InvalidInputError("samples_per_packet must be >= 1")
        if not 0.0 <= self.agc_factor <= 1.0:
            raise InvalidInputError("agc_factor must lie in [0, 1]")

    @classmethod
    def mode_2m(cls, **kw) -> "PhyConfig":
        return cls(symbol_time=0.5e-6, **kw)

    def ideal(self) -> "PhyConfig":
        """Same timing, every receiver imperfection switched off."""
        return replace(self, agc_factor=1.0, saturate=False, quantize=False,
                       clamp_floor=False, jitter_db=0.0,
                       tx_accuracy_db=0.0, rx_accuracy_db=0.0)


@dataclass(frozen=True)
class SenderState:
    gain: float
    tx_power_mw: float
    cfo_hz: float = 0.0
    initial_phase_rad: float = 0.0
    sync_delay_s: float = 0.0
    data_pattern: DataPattern = DataPattern.SAME_AS_OTHERS

    def __post_init__(self):
        if not 0.0 < self.gain <= 1.0:
            raise InvalidInputError(f"gain must lie in (0, 1], got {self.gain}")
        if not self.tx_power_mw > 0:
            raise InvalidInputError(f"tx power must be positive, got {self.tx_power_mw}")

    @property
    def rx_power_mw(self) -> float:
        return self.gain * self.tx_power_mw


@dataclass
class RssiTrace:
    samples: np.ndarray  # quantized dBm
    sampling_period: float
    # linear power before receiver effects, kept for diagnostics
    ideal_mw: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.samples)


# frequency sign of the constant-phase-slope payloads: phi(t) = +-pi t / (2 T)
_SLOPE = {DataPattern.ALL_ONES: 1, DataPattern.ALL_ZEROS: -1}


def _different_data(k: SenderState, l: SenderState, config: PhyConfig) -> bool:
    pk, pl = k.data_pattern, l.data_pattern
    if pk == DataPattern.WHITENED and pl == DataPattern.WHITENED:
        return abs(k.sync_delay_s - l.sync_delay_s) >= config.symbol_time
    coherent = {DataPattern.SAME_AS_OTHERS, DataPattern.WHITENED}
    if pk in coherent and pl in coherent:
        return False
    return pk != pl


def effective_beat_frequency(k: SenderState, l: SenderState, config: PhyConfig) -> float:
    """Beat frequency of pair (k, l) in Hz, signed as f_k - f_l."""
    df = k.cfo_hz - l.cfo_hz
    if not _different_data(k, l, config):
        return df
    half_rate = 1.0 / (2.0 * config.symbol_time)
    sk, sl = _SLOPE.get(k.data_pattern), _SLOPE.get(l.data_pattern)
    if sk is not None and sl is not None:
        return df + (sk - sl) / 2.0 * half_rate
    return df + half_rate


def sync_attenuation(delay_delta_s: float, config: PhyConfig) -> float:
    """Coherent fraction of a pair's cross term given their sync error."""
    if delay_delta_s < 0:
        raise InvalidInputError("delay difference must be non-negative")
    half = config.symbol_time / 2.0
    if delay_delta_s <= half:
        return 1.0
    if delay_delta_s >= config.symbol_time:
        return 0.0
    return 1.0 - (delay_delta_s - half) / half


def _pair_terms(senders, config):
    """Per pair: amplitude, coherent beat, fast beat, coherent fraction, phase."""
    rows = []
    for a in range(len(senders)):
        for b in range(a + 1, len(senders)):
            k, l = senders[a], senders[b]
            amp = 2.0 * math.sqrt(k.rx_power_mw * l.rx_power_mw)
            phase = k.initial_phase_rad - l.initial_phase_rad
            if _different_data(k, l, config):
                w = 0.0
                fast = effective_beat_frequency(k, l, config)
            else:
                w = sync_attenuation(abs(k.sync_delay_s - l.sync_delay_s), config)
                # desynchronised remainder behaves like whitened different data
                fast = k.cfo_hz - l.cfo_hz + 1.0 / (2.0 * config.symbol_time)
            rows.append((amp, k.cfo_hz - l.cfo_hz, fast, w, phase))
    return np.array(rows, dtype=float).reshape(-1, 5)


def _superposed_power(senders, t, config: PhyConfig) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    base = sum(s.rx_power_mw for s in senders)
    out = np.full(t.shape, base, dtype=float)
    if len(senders) < 2:
        return out
    terms = _pair_terms(senders, config)
    g = config.agc_factor
    for amp, df, fast, w, phase in terms:
        if w > 0:
            out += w * amp * np.cos(2 * np.pi * df * t + phase)
        if w < 1:
            # AGC cannot follow ultra-fast beating: damped cross term plus a
            # constant loss of the suppressed share
            out += (1 - w) * amp * (g * np.cos(2 * np.pi * fast * t + phase) - (1 - g))
    return np.maximum(out, 0.0)


def instantaneous_power(senders, t, config: PhyConfig | None = None):
    """Received power in mW at time(s) ``t`` (seconds)."""
    if not senders:
        raise InvalidInputError("at least one sender is required")
    config = config or PhyConfig()
    out = _superposed_power(list(senders), t, config)
    return float(out) if out.ndim == 0 else out


def sample_times(config: PhyConfig, n: int | None = None) -> np.ndarray:
    n = config.samples_per_packet if n is None else n
    return np.arange(1, n + 1, dtype=float) * config.sampling_period


def quantize_dbm(x, quantum: float):
    """Round to the quantum grid, halves away from zero."""
    q = np.asarray(x, dtype=float) / quantum
    return np.sign(q) * np.floor(np.abs(q) + 0.5) * quantum


def _inject_overshoot(dbm: np.ndarray, mw: np.ndarray, overshoot: OvershootModel,
                      beat_hz: float, config: PhyConfig, rng: np.random.Generator):
    n = dbm.shape[-1]
    flat = dbm.reshape(-1, n)
    shape_mw = mw.reshape(-1, n)
    for row, p in zip(flat, shape_mw):
        if overshoot.short_prob > 0:
            # local maxima of the beating envelope
            peaks = np.flatnonzero((p[1:-1] > p[:-2]) & (p[1:-1] >= p[2:])) + 1
            hit = peaks[rng.random(len(peaks)) < overshoot.short_prob]
            for start in hit:
                row[start:start + overshoot.short_duration_samples] += overshoot.short_gain_db
        if overshoot.long_prob > 0 and rng.random() < overshoot.long_prob:
            cycle = n if beat_hz == 0 else 1.0 / abs(beat_hz) / config.sampling_period
            width = max(1, int(round(overshoot.long_duration * cycle)))
            start = int(rng.integers(0, max(1, n - width + 1)))
            row[start:start + width] += overshoot.long_gain_db
    return flat.reshape(dbm.shape)


def receiver_pipeline(power_mw: np.ndarray, config: PhyConfig,
                      overshoot: OvershootModel = NO_OVERSHOOT,
                      rng: np.random.Generator | None = None,
                      beat_hz: float = 0.0) -> np.ndarray:
    """Turn linear instantaneous power into RSSI samples (dBm).

    Order: saturation, overshoot, quantization, floor clamp.
    """
    tiny = dbm_to_mw(config.rx_floor_dbm - 60.0)
    dbm = 10.0 * np.log10(np.maximum(power_mw, tiny))
    if config.saturate:
        dbm = np.minimum(dbm, config.rx_ceiling_dbm)
    if overshoot.enabled:
        if rng is None:
            raise InvalidInputError("overshoot injection needs an rng")
        dbm = _inject_overshoot(dbm.copy(), power_mw, overshoot, beat_hz, config, rng)
    if config.quantize:
        dbm = quantize_dbm(dbm, config.rssi_quantum_db)
    if config.clamp_floor:
        dbm = np.maximum(dbm, config.rx_floor_dbm)
    return dbm


def sample_trace(senders, config: PhyConfig | None = None,
                 overshoot: OvershootModel = NO_OVERSHOOT, rng_seed=None) -> RssiTrace:
    if not senders:
        raise InvalidInputError("at least one sender is required")
    config = config or PhyConfig()
    senders = list(senders)
    rng = np.random.default_rng(rng_seed)
    mw = _superposed_power(senders, sample_times(config), config)
    beat = 0.0
    if len(senders) > 1:
        beat = max((abs(s.cfo_hz - senders[0].cfo_hz) for s in senders[1:]), default=0.0)
    dbm = receiver_pipeline(mw, config, overshoot, rng, beat)
    return RssiTrace(dbm, config.sampling_period, mw)


def cfo_rotations(cfo_hz, config: PhyConfig) -> np.ndarray:
    """exp(j 2 pi f t) over the sample grid, one row per frequency offset."""
    return np.exp(2j * np.pi * np.outer(np.asarray(cfo_hz, dtype=float), sample_times(config)))


def coherent_traces(amplitudes: np.ndarray, cfo_hz: np.ndarray, config: PhyConfig,
                    overshoot: OvershootModel = NO_OVERSHOOT,
                    rng: np.random.Generator | None = None,
                    rotations: np.ndarray | None = None) -> np.ndarray:
    """RSSI traces for many listeners of one synchronised same-data slot.

    ``amplitudes[r, k]`` is the complex baseband amplitude of sender k at
    listener r (sqrt of received mW times the link phase).  With full
    coherence the pairwise beating sum collapses to |sum_k a_k e^{j w_k t}|^2,
    which costs O(listeners * senders * samples) instead of pairs.
    ``rotations`` may carry precomputed ``cfo_rotations(cfo_hz, config)``.
    Returns an array of dBm samples shaped (listeners, samples).
    """
    rot = cfo_rotations(cfo_hz, config) if rotations is None else rotations
    mw = np.abs(np.asarray(amplitudes) @ rot) ** 2
    beat = float(np.ptp(cfo_hz)) if len(cfo_hz) > 1 else 0.0
    return receiver_pipeline(mw, config, overshoot, rng, beat)


def mean_power(trace) -> float:
    """Mean received power in mW (averaged in the linear domain)."""
    samples = trace.samples if isinstance(trace, RssiTrace) else np.asarray(trace, dtype=float)
    if samples.size == 0:
        raise InvalidInputError("cannot average an empty trace")
    return float(np.mean(np.power(10.0, samples / 10.0)))


def power_ratio(measured_sum_mw: float, individuals_mw) -> float:
    individuals = [_as_mw(p) for p in individuals_mw]
    if not individuals:
        raise InvalidInputError("need at least one individual power")
    if any(p <= 0 for p in individuals):
        raise InvalidInputError("individual powers must be positive")
    return _as_mw(measured_sum_mw) / sum(individuals)


def _as_mw(p) -> float:
    return p.mw if isinstance(p, PowerLevel) else float(p)


@dataclass(frozen=True)
class LinearityTrial:
    individual_mw: tuple  # each sender measured alone
    superposed_mw: float
    beat_hz: float

    @property
    def ratio(self) -> float:
        return power_ratio(self.superposed_mw, self.individual_mw)


def linearity_trial(rx_dbm, config: PhyConfig, rng: np.random.Generator,
                    beat_cycle_s=(200e-6, 400e-6), overshoot: OvershootModel = NO_OVERSHOOT,
                    patterns=None, max_sync_error_s: float = 0.0) -> LinearityTrial:
    """Measure senders alone and together, as a power-ratio experiment does.

    CFOs form a ladder: consecutive senders are separated by a beat period
    uniform in ``beat_cycle_s``, so no pair beats slower than its upper end.
    Phases are uniform.
    """
    rx_mw = [dbm_to_mw(p) for p in rx_dbm]
    if len(rx_mw) < 2:
        raise InvalidInputError("a linearity trial needs at least two senders")
    patterns = patterns or [DataPattern.SAME_AS_OTHERS] * len(rx_mw)
    steps = [1.0 / rng.uniform(*beat_cycle_s) for _ in rx_mw[1:]]
    cfo = list(rng.choice((-1.0, 1.0)) * np.cumsum([0.0, *steps]))
    senders = [SenderState(min(p, 1.0), 1.0, f, rng.uniform(0, 2 * np.pi),
                           rng.uniform(0, max_sync_error_s), d)
               for p, f, d in zip(rx_mw, cfo, patterns)]
    seeds = rng.integers(0, 2**63, len(senders) + 1)
    alone = tuple(mean_power(sample_trace([s], config, overshoot, int(q))) for s, q in zip(senders, seeds))
    both = mean_power(sample_trace(senders, config, overshoot, int(seeds[-1])))
    return LinearityTrial(alone, both, float(abs(cfo[1] - cfo[0])))
