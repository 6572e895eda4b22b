"""Concurrent flooding rounds with embedded interference graph estimation.

A round starts with the initiator transmitting; every node rebroadcasts for
``n_tx`` consecutive slots after its first reception.  During an IGE process
one node per hop perturbs its power each round, listeners record mean RSS in
every slot, and slot-to-slot differences isolate each hop's contribution.
"""
from __future__ import annotations

import enum
import functools
import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import estimator, linkmodel, phy, powerctrl
from .errors import InvalidInputError, RankError, SchedulingError
from .linkmodel import CaptureConfig, InterferenceGraph, Topology

NEVER = -2
_TX, _LISTEN = 2, 1  # plain ints of Mode for hot loops


class Mode(enum.IntEnum):
    IDLE = 0
    LISTEN = 1
    TRANSMIT = 2


class Scheme(enum.Enum):
    OPTIMIZED_FLOODING = "optimized"
    FLOODING_PLUS_IGE = "flooding+ige"
    RANDOM_POWER = "random"
    FIXED_POWER = "fixed"


@dataclass(frozen=True)
class RoundConfig:
    n_tx: int = 4
    total_hops: int = 3
    update_interval_rounds: int = 50
    ige_rounds: int = 1

    def __post_init__(self):
        if self.n_tx < 1 or self.total_hops < 0:
            raise InvalidInputError("n_tx must be >= 1 and total_hops >= 0")

    @property
    def slots_per_round(self) -> int:
        return self.n_tx + 2 * self.total_hops

    @classmethod
    def for_topology(cls, topology: Topology, n_tx: int = 4, update_interval_rounds: int = 50):
        sizes = [len(topology.hop(i)) for i in range(topology.depth)]
        return cls(n_tx, topology.depth, update_interval_rounds, max(sizes, default=1))


@dataclass
class Network:
    """Ground truth plus per-device imperfections.

    ``rss_model`` is ``"trace"`` (sampled beating through the receiver
    pipeline) or ``"additive"`` (exact sum of contributions, for oracles).
    """

    topology: Topology
    graph: InterferenceGraph
    phy_config: phy.PhyConfig = field(default_factory=phy.PhyConfig)
    capture: CaptureConfig = field(default_factory=CaptureConfig)
    tx_offset_db: np.ndarray | None = None
    rx_offset_db: np.ndarray | None = None
    cfo_hz: np.ndarray | None = None
    link_phase: np.ndarray | None = None
    max_sync_error_s: float = 0.25e-6
    overshoot: phy.OvershootModel = phy.NO_OVERSHOOT
    rss_model: str = "trace"

    def __post_init__(self):
        n = self.graph.n
        if self.topology.n != n:
            raise InvalidInputError("topology and graph sizes differ")
        zeros = np.zeros(n)
        self.tx_offset_db = zeros if self.tx_offset_db is None else np.asarray(self.tx_offset_db, float)
        self.rx_offset_db = zeros if self.rx_offset_db is None else np.asarray(self.rx_offset_db, float)
        self.cfo_hz = zeros if self.cfo_hz is None else np.asarray(self.cfo_hz, float)
        self.link_phase = np.zeros((n, n)) if self.link_phase is None else np.asarray(self.link_phase, float)
        if self.rss_model not in ("trace", "additive"):
            raise InvalidInputError(f"unknown rss_model {self.rss_model!r}")

    @functools.cached_property
    def rotations(self) -> np.ndarray:
        return phy.cfo_rotations(self.cfo_hz, self.phy_config)

    @classmethod
    def build(cls, topology, graph, phy_config=None, capture=None, seed=None,
              cfo_range_hz=(2.5e3, 5e3), **kw) -> "Network":
        """Draw device offsets, CFOs and link phases from ``seed``."""
        phy_config = phy_config or phy.PhyConfig()
        rng = np.random.default_rng(seed)
        n = graph.n
        tx = rng.uniform(-phy_config.tx_accuracy_db, phy_config.tx_accuracy_db, n)
        rx = rng.uniform(-phy_config.rx_accuracy_db, phy_config.rx_accuracy_db, n)
        cfo = rng.choice([-1.0, 1.0], n) * rng.uniform(*cfo_range_hz, n)
        phase = rng.uniform(0, 2 * np.pi, (n, n))
        return cls(topology, graph, phy_config, capture or CaptureConfig(), tx, rx, cfo, phase, **kw)

    def actual_tx_mw(self, powers_mw) -> np.ndarray:
        return np.asarray(powers_mw, float) * np.power(10.0, self.tx_offset_db / 10.0)


@dataclass
class CommGraph:
    modes: np.ndarray  # slots x nodes, Mode values
    rss_dbm: np.ndarray  # slots x nodes, nan where nothing was recorded
    rx_slot: np.ndarray  # -1 for the initiator, NEVER if not reached
    tx_power_mw: np.ndarray  # nominal per-node power of this round
    valid_rx_slots: int = 0
    receptions: int = 0

    @property
    def n_slots(self) -> int:
        return self.modes.shape[0]

    def transmitters(self, s: int) -> np.ndarray:
        if s < 0:
            return np.array([], dtype=int)
        return np.flatnonzero(self.modes[s] == _TX)

    @functools.cached_property
    def growth(self) -> list[tuple[int, ...] | None]:
        """Per slot, the nodes that joined when the transmitter set strictly
        grew from the previous slot (None otherwise)."""
        out, prev = [], set()
        for s in range(self.n_slots):
            cur = set(np.flatnonzero(self.modes[s] == _TX).tolist())
            out.append(tuple(sorted(cur - prev)) if cur and prev < cur else None)
            prev = cur
        return out

    @property
    def complete(self) -> bool:
        return bool(np.all(self.rx_slot != NEVER))

    @property
    def latency(self) -> int | None:
        return int(self.rx_slot.max()) + 1 if self.complete else None


def _measure(net: Network, tx: np.ndarray, listeners: np.ndarray, actual_mw: np.ndarray,
             rng: np.random.Generator) -> np.ndarray:
    """Mean RSS (dBm) at each listener for one slot."""
    cfg = net.phy_config
    contrib = actual_mw[tx][:, None] * net.graph.gains[np.ix_(tx, listeners)]  # T x L
    lin = np.power(10.0, net.rx_offset_db[listeners] / 10.0)
    if cfg.jitter_db > 0:
        lin = lin * np.power(10.0, rng.normal(0.0, cfg.jitter_db, len(listeners)) / 10.0)
    if net.rss_model == "additive":
        mw = contrib.sum(axis=0) * lin
        with np.errstate(divide="ignore"):  # zero-power relays in IGE rounds
            return 10.0 * np.log10(mw)
    phases = rng.uniform(0, 2 * np.pi, len(tx))
    delays = rng.uniform(0, net.max_sync_error_s, len(tx))
    if len(tx) > 1 and np.ptp(delays) > cfg.symbol_time / 2:
        out = np.empty(len(listeners))
        for c, r in enumerate(listeners):
            senders = [phy.SenderState(net.graph.gains[k, r], actual_mw[k] * lin[c], net.cfo_hz[k],
                                       phases[a] + net.link_phase[k, r], delays[a])
                       for a, k in enumerate(tx)]
            out[c] = phy.mw_to_dbm(phy.mean_power(phy.sample_trace(senders, cfg, net.overshoot, rng)))
        return out
    amp = np.sqrt(contrib.T * lin[:, None]) * np.exp(1j * (phases[None, :] + net.link_phase[np.ix_(tx, listeners)].T))
    traces = phy.coherent_traces(amp, net.cfo_hz[tx], cfg, net.overshoot, rng, net.rotations[tx])
    return 10.0 * np.log10(np.mean(np.power(10.0, traces / 10.0), axis=1))


def run_round(net: Network, powers_mw, rng: np.random.Generator, n_tx: int = 4,
              measure: bool = True, n_slots: int | None = None) -> CommGraph:
    topo = net.topology
    n = topo.n
    S = n_slots or (n_tx + 2 * topo.depth)
    init = topo.initiator
    powers_mw = np.asarray(powers_mw, float)
    actual = net.actual_tx_mw(powers_mw)
    modes = np.full((S, n), Mode.LISTEN, dtype=np.int8)
    rss = np.full((S, n), np.nan)
    rx_slot = np.full(n, NEVER)
    rx_slot[init] = -1
    valid = got = 0
    for s in range(S):
        heard = rx_slot != NEVER
        tx = np.flatnonzero(heard & (rx_slot < s) & (s <= rx_slot + n_tx))
        modes[s, tx] = _TX
        if init not in tx:
            modes[s, init] = Mode.IDLE
        if len(tx) == 0:
            continue
        listeners = np.flatnonzero(modes[s] == _LISTEN)
        waiting = listeners[rx_slot[listeners] == NEVER]
        if len(waiting):
            contrib = (actual[tx][:, None] * net.graph.gains[np.ix_(tx, waiting)]).T
            p = linkmodel.success_probability(contrib, net.capture, same_data=True)
            ok = rng.random(len(waiting)) < p
            rx_slot[waiting[ok]] = s
            valid += len(waiting)
            got += int(ok.sum())
        if measure and len(listeners):
            rss[s, listeners] = _measure(net, tx, listeners, actual, rng)
    return CommGraph(modes, rss, rx_slot, powers_mw.copy(), valid, got)


def decouple_cross_hop(rss_slot_prev: float, rss_slot_cur: float):
    """Power (mW) added between two slots; returns (power, clamped_flag)."""
    if rss_slot_prev < 0 or rss_slot_cur < 0:
        raise InvalidInputError("received powers must be non-negative")
    diff = rss_slot_cur - rss_slot_prev
    return (diff, False) if diff >= 0 else (0.0, True)


@dataclass
class AdjustmentPlan:
    nodes: list[int]
    base: np.ndarray
    deltas: np.ndarray

    def powers_in_round(self, k: int) -> dict[int, float]:
        out = dict(zip(self.nodes, self.base))
        if k < len(self.nodes):
            out[self.nodes[k]] = self.base[k] + self.deltas[k]
        return out


def candidate_adjustments(base: float, power_set, min_adjust_mw: float) -> list[float]:
    """In-set moves of magnitude >= min_adjust_mw, smallest first (upward on ties)."""
    moves = [p - base for p in power_set if abs(p - base) >= min_adjust_mw * (1 - 1e-12)]
    return sorted(moves, key=lambda d: (abs(d), -d))


def pick_adjustment(base: float, power_set, min_adjust_mw: float) -> float | None:
    moves = candidate_adjustments(base, power_set, min_adjust_mw)
    return moves[0] if moves else None


def adjustable_powers(power_set, min_adjust_mw: float) -> list[float]:
    return [p for p in power_set if pick_adjustment(p, power_set, min_adjust_mw) is not None]


def build_ige_schedule(hops, base_powers, min_adjust_mw: float, power_set,
                       resolve_singular: bool = False) -> list[AdjustmentPlan]:
    """Sequential adjustment plan for each hop; node k of a hop moves in round k.

    ``hops`` lists node ids per hop, ``base_powers`` maps node -> mW.  A
    singular hop raises unless ``resolve_singular`` is set, in which case
    later nodes fall back to their next preferred moves until the hop's
    matrix is invertible.
    """
    if min_adjust_mw <= 0:
        raise InvalidInputError("min_adjust_mw must be positive")
    power_set = sorted(power_set)
    plans = []
    for nodes in hops:
        nodes = list(nodes)
        base = np.array([base_powers[k] for k in nodes], float)
        cands = []
        for k, b in zip(nodes, base):
            if not any(math.isclose(b, p, rel_tol=1e-9) for p in power_set):
                raise SchedulingError(f"base power of node {k} is not in the power set", k)
            c = candidate_adjustments(b, power_set, min_adjust_mw)
            if not c:
                raise SchedulingError(f"no in-set adjustment >= {min_adjust_mw} mW for node {k}", k)
            cands.append(c)
        options = itertools.product(*cands) if resolve_singular else [[c[0] for c in cands]]
        for deltas in options:
            deltas = np.array(deltas)
            if estimator.full_rank_condition(base, deltas) is not estimator.RankVerdict.SINGULAR:
                break
        else:
            raise SchedulingError(f"adjustments for hop {nodes} give a singular power matrix")
        plans.append(AdjustmentPlan(nodes, base, deltas))
    return plans


def round_powers(n: int, plans: list[AdjustmentPlan], k: int) -> np.ndarray:
    p = np.zeros(n)
    for plan in plans:
        for node, mw in plan.powers_in_round(k).items():
            p[node] = mw
    return p


def increments(cg: CommGraph, receiver: int, hop_of,
               prior=None) -> list[tuple[int, dict[int, float], float, bool]]:
    """Decoupled per-slot measurements at one receiver.

    Yields (lowest new hop, {new upstream sender: nominal mW}, decoupled mW,
    clamped) for every slot whose transmitter set strictly grows from the
    previous slot by at least one node upstream of ``receiver``.  Newcomers
    that are not upstream (relays that decoded early) are removed with the
    ``prior`` gain matrix; without a prior such slots are skipped.
    """
    out = []
    my_hop = hop_of[receiver]
    modes, rss = cg.modes[:, receiver], cg.rss_dbm[:, receiver]
    for s, new in enumerate(cg.growth):
        if new is None or modes[s] != _LISTEN or np.isnan(rss[s]):
            continue
        if s > 0 and (cg.modes[s - 1] == _TX).any():
            if modes[s - 1] != _LISTEN or np.isnan(rss[s - 1]):
                continue
            prev_mw = 10.0 ** (rss[s - 1] / 10.0)
        else:
            prev_mw = 0.0
        up = [k for k in new if hop_of[k] < my_hop]
        stray = [k for k in new if hop_of[k] >= my_hop]
        if not up or (stray and prior is None):
            continue
        val, clamped = decouple_cross_hop(prev_mw, 10.0 ** (rss[s] / 10.0))
        if stray:
            val -= sum(prior[k, receiver] * cg.tx_power_mw[k] for k in stray)
            if val < 0:
                val, clamped = 0.0, True
        out.append((min(hop_of[k] for k in up), {k: float(cg.tx_power_mw[k]) for k in up}, val, clamped))
    return out


@dataclass
class IgeOutcome:
    graph: InterferenceGraph
    success: bool
    rounds: list[CommGraph]
    estimates: list[tuple] = field(default_factory=list)  # (rx, tx, gain, censored, kappa, residual)
    rank_failures: list[int] = field(default_factory=list)  # receivers left undetermined


def realized_power_matrix(rounds: list[CommGraph], nodes: list[int], first_slot: int) -> np.ndarray:
    """Transmit powers of one hop in its first slot, one row per round.

    A node that had not received by then contributes 0 in that round.
    """
    return np.array([[cg.tx_power_mw[k] if cg.modes[first_slot, k] == _TX else 0.0
                      for k in nodes] for cg in rounds])


def observed_hops(rounds: list[CommGraph], topology: Topology) -> list[int]:
    """Relay cohort of each node: its most common reception slot + 1.

    Nodes that decode an upstream hop directly start relaying early, and
    nodes behind weak links start late, so the slot a node joins in, not
    its tree depth, decides which transmitters it is decoupled with.
    Unreached nodes keep their tree hop; labels are compacted to stay
    contiguous.
    """
    raw = list(topology.hop_of)
    if rounds:
        slots = np.array([cg.rx_slot for cg in rounds])
        for k in range(topology.n):
            seen = slots[:, k][slots[:, k] != NEVER]
            if len(seen):
                vals, counts = np.unique(seen + 1, return_counts=True)
                raw[k] = int(vals[np.argmax(counts)])
    order = {h: i for i, h in enumerate(sorted(set(raw)))}
    return [order[h] for h in raw]


def run_ige_process(net: Network, base_powers, prev_graph: InterferenceGraph, rng: np.random.Generator,
                    min_adjust_mw: float, power_set, n_tx: int = 4, bounds=None,
                    hop_of=None) -> IgeOutcome:
    """One measurement process.

    ``hop_of`` assigns each node a relay cohort (tree hops by default);
    cohort i is expected to start transmitting in slot i.  Success means
    every cohort's realized transmit power matrix has full rank; otherwise
    the previous graph is returned untouched.  On success, receivers whose
    own equation set is still rank deficient (missed rounds) keep their
    previous gains and are listed in ``rank_failures``.
    """
    topo = net.topology
    hop_of = list(topo.hop_of if hop_of is None else hop_of)
    hops = [[k for k in range(topo.n) if hop_of[k] == i] for i in range(max(hop_of))]
    plans = build_ige_schedule(hops, base_powers, min_adjust_mw, power_set, resolve_singular=True)
    n_r = max(len(h) for h in hops)
    if bounds is None:
        bounds = estimator.gain_bounds(power_set, net.phy_config.rx_floor_dbm, net.phy_config.rx_ceiling_dbm)
    rows: dict[int, list] = {}
    rounds = []
    for k in range(n_r):
        cg = run_round(net, round_powers(topo.n, plans, k), rng, n_tx, measure=True)
        rounds.append(cg)
        for r in range(topo.n):
            if hop_of[r] == 0 or cg.rx_slot[r] == NEVER:
                continue  # a node that never got the packet reports nothing
            rows.setdefault(r, []).extend(
                (e, v) for _, e, v, _ in increments(cg, r, hop_of, prev_graph.gains))
    success = all(estimator.numerical_rank(realized_power_matrix(rounds, nodes, i)) == len(nodes)
                  for i, nodes in enumerate(hops))
    if not success:
        return IgeOutcome(prev_graph, False, rounds)
    gains = prev_graph.gains.copy()
    estimates, failures = [], []
    for r in range(topo.n):
        if hop_of[r] == 0:
            continue
        # one system per receiver over every upstream node; the per-hop
        # adjustment blocks sit on its diagonal
        senders = [k for k in range(topo.n) if hop_of[k] < hop_of[r]]
        eqs = rows.get(r, [])
        A = np.array([[e.get(s, 0.0) for s in senders] for e, _ in eqs]).reshape(-1, len(senders))
        y = np.array([v for _, v in eqs])
        try:
            est = estimator.estimate_gains(A, y, bounds)
        except (RankError, InvalidInputError):
            failures.append(r)
            continue
        gains[senders, r] = est.gains
        _, cen = estimator.gain_error_db(est, np.ones(len(senders)))
        estimates += [(r, s, g, c, est.condition_number, est.residual_norm)
                      for s, g, c in zip(senders, est.gains, cen)]
    return IgeOutcome(InterferenceGraph(gains), True, rounds, estimates, failures)


def bootstrap_point_to_point(net: Network, rng: np.random.Generator, ref_power_mw: float = 1.0,
                             bounds=None) -> InterferenceGraph:
    """Each node transmits alone once; every other node records RSS."""
    n = net.graph.n
    actual = net.actual_tx_mw(np.full(n, ref_power_mw))
    gains = np.ones((n, n))
    for k in range(n):
        listeners = np.array([j for j in range(n) if j != k])
        rss = _measure(net, np.array([k]), listeners, actual, rng)
        gains[k, listeners] = np.power(10.0, rss / 10.0) / ref_power_mw
    if bounds is not None:
        gains = np.clip(gains, *bounds)
    return InterferenceGraph(np.clip(gains, 1e-15, 1.0))


def reporting_overhead(n_s: int, n_r: int, b: int, hop_sizes):
    """Bits and slots spent reporting measurements.

    ``hop_sizes`` lists n_1..n_d; the initiator (n_0 = 1) is implicit.
    Returns (O_our, O_other, T_our, T_other).
    """
    if n_s < 1 or n_r < 1 or b < 1 or not hop_sizes or min(hop_sizes) < 1:
        raise InvalidInputError("all overhead inputs must be positive")
    slot_bits = (n_s - 1).bit_length()
    rss_bits = (b - 1).bit_length()
    sizes = list(hop_sizes)
    o_our = slot_bits * n_r * sum(sizes) + rss_bits * n_r * sum(i * s for i, s in enumerate(sizes, 1))
    with_init = [1] + sizes
    o_other = rss_bits * sum(with_init[i] * sum(with_init[:i]) for i in range(1, len(with_init)))
    return o_our, o_other, 0, sum(with_init)


@dataclass
class MeasurementReport:
    node: int
    hop: int
    rx_slots: list[int]
    rss_readings: list[int]  # quantized dBm, hop readings per round

    def bits(self, n_s: int, b: int) -> int:
        return len(self.rx_slots) * (n_s - 1).bit_length() + len(self.rss_readings) * (b - 1).bit_length()


def measurement_reports(rounds: list[CommGraph], topology: Topology) -> list[MeasurementReport]:
    """What each node sends back after an IGE process: one reception slot per
    round and one RSS reading per upstream hop per round."""
    reports = []
    for node in range(topology.n):
        h = topology.hop_of[node]
        if h == 0:
            continue
        slots, readings = [], []
        for cg in rounds:
            slots.append(int(cg.rx_slot[node]))
            incs = {hop: val for hop, _, val, _ in increments(cg, node, topology.hop_of)}
            for i in range(h):
                v = incs.get(i, 0.0)
                readings.append(int(round(10 * math.log10(v))) if v > 0 else -128)
        reports.append(MeasurementReport(node, h, slots, readings))
    return reports


@dataclass
class CampaignMetrics:
    scheme: str
    rounds: int
    per_slot_per: float
    e2e_per: float
    latency_slots: list[int]
    coverage_by_slot: list[float]
    ige_success_rate: float | None = None
    ige_processes: int = 0
    consecutive_ige_failures: int = 0
    records: list[dict] = field(default_factory=list, repr=False)

    @property
    def mean_latency(self) -> float:
        return float(np.mean(self.latency_slots)) if self.latency_slots else math.nan

    def summary(self) -> dict:
        return {"scheme": self.scheme, "rounds": self.rounds, "per_slot_per": self.per_slot_per,
                "e2e_per": self.e2e_per, "mean_latency_slots": self.mean_latency,
                "coverage_by_slot": self.coverage_by_slot, "ige_success_rate": self.ige_success_rate,
                "ige_processes": self.ige_processes,
                "consecutive_ige_failures": self.consecutive_ige_failures}


@dataclass(frozen=True)
class ProtocolConfig:
    n_tx: int = 4
    update_interval_rounds: int = 50
    min_adjust_mw: float = 0.4
    power_set_dbm: tuple = (-20.0, -16.0, -8.0, -4.0, 0.0)
    fixed_power_dbm: float = 0.0
    bootstrap_power_dbm: float = 0.0
    average_estimates: bool = True  # static channels: pool every estimate per link

    @property
    def power_set_mw(self) -> list[float]:
        return [10.0 ** (p / 10.0) for p in self.power_set_dbm]


class GainAverager:
    """Running per-link mean, in dB, of every estimate seen so far."""

    def __init__(self, graph: InterferenceGraph):
        off = ~np.eye(graph.n, dtype=bool)
        self.sum_db = np.where(off, 10.0 * np.log10(np.where(off, graph.gains, 1.0)), 0.0)
        self.count = off.astype(float)

    def update(self, estimates) -> InterferenceGraph:
        for r, s, g, *_ in estimates:
            self.sum_db[s, r] += 10.0 * math.log10(g)
            self.count[s, r] += 1
        mean = np.where(self.count > 0, self.sum_db / np.maximum(self.count, 1), 0.0)
        return InterferenceGraph(np.power(10.0, mean / 10.0))


class _Tally:
    def __init__(self, n_slots, n_nodes, scheme):
        self.cov = np.zeros(n_slots)
        self.valid = self.got = self.failed = self.count = 0
        self.lat: list[int] = []
        self.n_nodes = n_nodes
        self.records = []
        self.scheme = scheme

    def add(self, cg: CommGraph, round_index: int, phase: str):
        self.count += 1
        self.valid += cg.valid_rx_slots
        self.got += cg.receptions
        others = cg.rx_slot[cg.rx_slot != -1]
        for s in range(len(self.cov)):
            self.cov[s] += np.count_nonzero((others >= 0) & (others <= s)) / max(len(others), 1)
        if cg.complete:
            self.lat.append(cg.latency)
        else:
            self.failed += 1
        self.records.append({"scheme": self.scheme, "round": round_index, "phase": phase,
                             "complete": int(cg.complete), "latency_slots": cg.latency,
                             "rx_slots": [int(x) for x in cg.rx_slot]})

    def metrics(self, **kw) -> CampaignMetrics:
        c = max(self.count, 1)
        per = 1.0 - self.got / self.valid if self.valid else 0.0
        return CampaignMetrics(self.scheme, self.count, per, self.failed / c, self.lat,
                               list(self.cov / c), records=self.records, **kw)


def run_campaign(net: Network, scheme, rounds: int, config: ProtocolConfig = ProtocolConfig(),
                 seed=0) -> CampaignMetrics:
    """Measure ``rounds`` flooding rounds of one scheme.

    Optimized flooding counts only flooding-alone rounds; Flooding+IGE
    counts only rounds inside IGE processes.
    """
    scheme = Scheme(scheme) if not isinstance(scheme, Scheme) else scheme
    if rounds < 1:
        raise InvalidInputError("rounds must be >= 1")
    topo = net.topology
    rng = np.random.default_rng(seed)
    n_slots = config.n_tx + 2 * topo.depth
    tally = _Tally(n_slots, topo.n, scheme.value)
    pset = config.power_set_mw
    if scheme is Scheme.FIXED_POWER:
        p = np.full(topo.n, 10.0 ** (config.fixed_power_dbm / 10.0))
        for k in range(rounds):
            tally.add(run_round(net, p, rng, config.n_tx, measure=False), k, "flood")
        return tally.metrics()
    if scheme is Scheme.RANDOM_POWER:
        for k in range(rounds):
            p = rng.choice(pset, topo.n)
            tally.add(run_round(net, p, rng, config.n_tx, measure=False), k, "flood")
        return tally.metrics()

    bounds = estimator.gain_bounds(pset, net.phy_config.rx_floor_dbm, net.phy_config.rx_ceiling_dbm)
    graph = bootstrap_point_to_point(net, rng, 10.0 ** (config.bootstrap_power_dbm / 10.0), bounds)
    allowed = adjustable_powers(pset, config.min_adjust_mw)
    plan = powerctrl.allocate_multihop(graph, topo, allowed, net.capture.noise_mw)
    averager = GainAverager(graph) if config.average_estimates else None
    processes = successes = run_fail = worst_run = 0
    k = 0
    while tally.count < rounds:
        # flooding-alone period; its reception slots define the relay cohorts
        p = np.array([plan.powers[i] for i in range(topo.n)])
        window = []
        for _ in range(config.update_interval_rounds):
            cg = run_round(net, p, rng, config.n_tx, measure=False)
            window.append(cg)
            if scheme is Scheme.OPTIMIZED_FLOODING and tally.count < rounds:
                tally.add(cg, k, "flood")
            k += 1
        if tally.count >= rounds:
            break
        out = run_ige_process(net, plan.powers, graph, rng, config.min_adjust_mw, pset,
                              config.n_tx, bounds, observed_hops(window, topo))
        processes += 1
        successes += out.success
        run_fail = 0 if out.success else run_fail + 1
        worst_run = max(worst_run, run_fail)
        for cg in out.rounds:
            if scheme is Scheme.FLOODING_PLUS_IGE and tally.count < rounds:
                tally.add(cg, k, "ige")
            k += 1
        if not out.success:
            continue
        graph = averager.update(out.estimates) if averager else out.graph
        plan = powerctrl.allocate_multihop(graph, topo, allowed, net.capture.noise_mw)
    processes = max(processes, 1)
    return tally.metrics(ige_success_rate=successes / processes, ige_processes=processes,
                         consecutive_ige_failures=worst_run)


@dataclass
class IgeStudy:
    min_adjust_mw: float
    processes: int
    successes: int
    errors_db: np.ndarray  # per estimated link, censored links excluded
    censored: int
    kappas: np.ndarray  # condition number of the system behind each error

    @property
    def success_rate(self) -> float:
        return self.successes / self.processes

    @property
    def median_error_db(self) -> float:
        return float(np.median(self.errors_db)) if len(self.errors_db) else math.nan


def run_ige_study(net: Network, min_adjust_mw: float, processes: int,
                  config: ProtocolConfig = ProtocolConfig(), seed=0) -> IgeStudy:
    """Repeat IGE processes on a fixed plan and score every estimate
    against the ground truth (flooding-alone rounds do not affect this)."""
    rng = np.random.default_rng(seed)
    pset = config.power_set_mw
    bounds = estimator.gain_bounds(pset, net.phy_config.rx_floor_dbm, net.phy_config.rx_ceiling_dbm)
    graph = bootstrap_point_to_point(net, rng, 10.0 ** (config.bootstrap_power_dbm / 10.0), bounds)
    allowed = adjustable_powers(pset, min_adjust_mw)
    if not allowed:
        raise SchedulingError(f"no power in the set admits an adjustment of {min_adjust_mw} mW")
    plan = powerctrl.allocate_multihop(graph, net.topology, allowed, net.capture.noise_mw)
    p = np.array([plan.powers[i] for i in range(net.topology.n)])
    window = [run_round(net, p, rng, config.n_tx, measure=False)
              for _ in range(config.update_interval_rounds)]
    hop_of = observed_hops(window, net.topology)
    ok, errs, kap, cen = 0, [], [], 0
    truth = net.graph.gains
    for _ in range(processes):
        out = run_ige_process(net, plan.powers, graph, rng, min_adjust_mw, pset, config.n_tx,
                              bounds, hop_of)
        ok += out.success
        for r, s, g, c, kappa, _ in out.estimates:
            if c:
                cen += 1
                continue
            errs.append(abs(10.0 * math.log10(g / truth[s, r])))
            kap.append(kappa)
    return IgeStudy(min_adjust_mw, processes, ok, np.array(errs), cen, np.array(kap))


def estimate_graph(net: Network, config: ProtocolConfig = ProtocolConfig(), processes: int = 1,
                   seed=0) -> InterferenceGraph:
    """Bootstrap, then refine with IGE processes alongside flooding.

    Links no process can see keep their bootstrap value.
    """
    rng = np.random.default_rng(seed)
    pset = config.power_set_mw
    bounds = estimator.gain_bounds(pset, net.phy_config.rx_floor_dbm, net.phy_config.rx_ceiling_dbm)
    graph = bootstrap_point_to_point(net, rng, 10.0 ** (config.bootstrap_power_dbm / 10.0), bounds)
    averager = GainAverager(graph)
    allowed = adjustable_powers(pset, config.min_adjust_mw)
    for _ in range(processes):
        plan = powerctrl.allocate_multihop(graph, net.topology, allowed, net.capture.noise_mw)
        p = np.array([plan.powers[i] for i in range(net.topology.n)])
        window = [run_round(net, p, rng, config.n_tx, measure=False)
                  for _ in range(config.update_interval_rounds)]
        out = run_ige_process(net, plan.powers, graph, rng, config.min_adjust_mw, pset, config.n_tx,
                              bounds, observed_hops(window, net.topology))
        if out.success:
            graph = averager.update(out.estimates)
    return graph
