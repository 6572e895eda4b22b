"""Downstream uses of an estimated interference graph: link grouping for
channel allocation, tree convergecast and adaptive frequency hopping."""
from __future__ import annotations

import collections
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AllocationError, InvalidInputError
from .linkmodel import CaptureConfig, InterferenceGraph, Topology, receive_outcome

N_CHANNELS = 37


@dataclass(frozen=True)
class LinkGroup:
    members: tuple  # directed (tx, rx) links, sorted
    sinr_floor_db: float

    def __len__(self):
        return len(self.members)


def link_sinr_db(graph: InterferenceGraph, links, tx_powers, noise_mw: float) -> np.ndarray:
    """SINR of every link when all of ``links`` transmit at once.

    A link whose receiver is also transmitting, or that shares a node with
    another member, gets -inf.
    """
    g = graph.gains if hasattr(graph, "gains") else np.asarray(graph)
    p = _powers(tx_powers, g.shape[0])
    links = list(links)
    out = np.empty(len(links))
    for a, (t, r) in enumerate(links):
        others = [l for b, l in enumerate(links) if b != a]
        if any(set(o) & {t, r} for o in others):
            out[a] = -math.inf
            continue
        interf = sum(g[o[0], r] * p[o[0]] for o in others)
        out[a] = 10.0 * math.log10(g[t, r] * p[t] / (interf + noise_mw))
    return out


def _powers(tx_powers, n):
    if np.isscalar(tx_powers):
        return np.full(n, float(tx_powers))
    if isinstance(tx_powers, dict):
        return np.array([tx_powers[k] for k in range(n)], dtype=float)
    return np.asarray(tx_powers, dtype=float)


def is_admissible(graph, links, sinr_floor_db, tx_powers, noise_mw) -> bool:
    # a lone link is always admissible: there is nothing to share a channel with
    if len(links) <= 1:
        return True
    return bool(np.all(link_sinr_db(graph, links, tx_powers, noise_mw) >= sinr_floor_db))


def _largest_group(graph, links, floor, p, noise):
    """Include-first depth-first search; admissibility is hereditary, so an
    inadmissible partial set is never extended.  Only strictly larger groups
    replace the incumbent, which keeps the lexicographically first one."""
    best: list = []
    chosen: list = []

    def dfs(i):
        nonlocal best
        if len(chosen) + len(links) - i <= len(best):
            return
        if i == len(links):
            best = list(chosen)
            return
        chosen.append(links[i])
        if is_admissible(graph, chosen, floor, p, noise):
            dfs(i + 1)
        chosen.pop()
        dfs(i + 1)

    dfs(0)
    return best


def group_links(graph: InterferenceGraph, links, sinr_floor_db: float = 10.0,
                tx_powers=1.0, noise_mw: float = 1e-10) -> list[LinkGroup]:
    """Greedy partition: take the largest admissible group of the remaining
    links, then repeat until every link is grouped."""
    links = [tuple(map(int, l)) for l in links]
    n = graph.n if hasattr(graph, "n") else len(graph)
    if len(set(links)) != len(links):
        raise InvalidInputError("duplicate links")
    for t, r in links:
        if not (0 <= t < n and 0 <= r < n) or t == r:
            raise InvalidInputError(f"invalid link ({t}, {r})")
    p = _powers(tx_powers, n)
    left = sorted(links)
    groups = []
    while left:
        best = _largest_group(graph, left, sinr_floor_db, p, noise_mw)
        groups.append(LinkGroup(tuple(best), sinr_floor_db))
        left = [l for l in left if l not in best]
    return groups


def allocate_channels(groups, total_channels: int = N_CHANNELS) -> list[list[int]]:
    """Contiguous even split; the first ``total % len(groups)`` groups get one extra."""
    k = len(groups)
    if k == 0:
        raise AllocationError("no groups to allocate")
    if total_channels < k:
        raise AllocationError(f"{k} groups exceed {total_channels} channels")
    base, extra = divmod(total_channels, k)
    out, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        out.append(list(range(start, start + size)))
        start += size
    return out


def _link_channels(groups, total_channels):
    alloc = allocate_channels(groups, total_channels)
    return {l: alloc[i] for i, g in enumerate(groups) for l in g.members}


# -- convergecast ----------------------------------------------------------

class ConvergecastScheme(enum.Enum):
    BASELINE = "baseline"
    IGE_BASED = "ige"


def convergecast_schedule(tree: Topology) -> list[list[tuple[int, int]]]:
    """Slots of concurrent (child, parent) links.

    Hops drain farthest first; within a hop every parent polls its k-th child
    in slot k, children in index order.
    """
    parent = tree.parent_of()
    slots = []
    for h in range(tree.depth, 0, -1):
        parents = sorted({parent[c] for c in tree.hop(h) if c in parent})
        kids = {q: sorted(c for c in tree.children.get(q, []) if tree.hop_of[c] == h) for q in parents}
        for k in range(max((len(v) for v in kids.values()), default=0)):
            slots.append([(kids[q][k], q) for q in parents if k < len(kids[q])])
    return slots


def tree_links(tree: Topology) -> list[tuple[int, int]]:
    return [l for slot in convergecast_schedule(tree) for l in slot]


@dataclass
class ConvergecastResult:
    scheme: str
    success_prob: float
    collected_fraction: np.ndarray  # per trial, non-root nodes delivered / total
    groups: list = field(default_factory=list)

    def mean_fraction_failed(self) -> float:
        f = self.collected_fraction[self.collected_fraction < 1.0]
        return float(f.mean()) if len(f) else math.nan


def simulate_convergecast(tree: Topology, scheme, truth: InterferenceGraph, channels: int = N_CHANNELS,
                          trials: int = 10_000, seed=0, estimate: InterferenceGraph | None = None,
                          tx_power_mw: float = 1.0, sinr_floor_db: float = 10.0,
                          capture: CaptureConfig = CaptureConfig()) -> ConvergecastResult:
    """Tree data collection without retransmission.

    A child's packet carries its whole subtree, so a lost link loses every
    node below it.  Concurrent links on the same channel interfere through
    ``truth``; IgeBased groups links on ``estimate`` (default ``truth``) and
    hops only within its group's channels.
    """
    scheme = ConvergecastScheme(scheme) if not isinstance(scheme, ConvergecastScheme) else scheme
    rng = np.random.default_rng(seed)
    slots = convergecast_schedule(tree)
    g = truth.gains
    groups = []
    if scheme is ConvergecastScheme.IGE_BASED:
        groups = group_links(estimate if estimate is not None else truth, tree_links(tree), sinr_floor_db, tx_power_mw, capture.noise_mw)
        pool = _link_channels(groups, channels)
    else:
        pool = collections.defaultdict(lambda: list(range(channels)))
    root = tree.initiator
    others = tree.n - 1
    frac = np.empty(trials)
    for t in range(trials):
        # data[v] = set of nodes whose readings v holds
        data = {v: {v} for v in range(tree.n)}
        for slot in slots:
            chans = [pool[l][rng.integers(len(pool[l]))] for l in slot]
            for a, (c, q) in enumerate(slot):
                contrib = {c: g[c, q] * tx_power_mw}
                for b, (c2, _) in enumerate(slot):
                    if b != a and chans[b] == chans[a]:
                        contrib[c2] = g[c2, q] * tx_power_mw
                out = receive_outcome(contrib, False, capture, rng)
                if out.received and out.dominant_sender == c:
                    data[q] |= data[c]
        frac[t] = (len(data[root]) - 1) / others
    return ConvergecastResult(scheme.value, float(np.mean(frac == 1.0)), frac, groups)


# -- point-to-point adaptive frequency hopping -----------------------------

class AfhScheme(enum.Enum):
    TRADITIONAL = "traditional"
    IGE_ASSISTED = "ige"


@dataclass(frozen=True)
class AfhConfig:
    window: int = 20
    exclusion_threshold: float = 0.5
    min_samples: int = 20  # outcomes needed before a channel can be judged
    min_channels: int = 2


class ChannelMap:
    """Per-pair usable channels with a bounded loss window per channel."""

    def __init__(self, initial, config: AfhConfig = AfhConfig()):
        if not initial:
            raise InvalidInputError("initial channel map is empty")
        self.initial = list(initial)
        self.config = config
        self.resets = 0
        self._reset()

    def _reset(self):
        self.available = list(self.initial)
        self.stats = {c: collections.deque(maxlen=self.config.window) for c in self.initial}

    def loss_rate(self, ch) -> float:
        w = self.stats[ch]
        return sum(w) / len(w) if w else 0.0

    def pick(self, rng) -> int:
        return self.available[rng.integers(len(self.available))]

    def record(self, ch, lost: bool) -> bool:
        """Log one outcome; returns True when the map was reset."""
        w = self.stats[ch]
        w.append(1 if lost else 0)
        cfg = self.config
        if len(w) >= cfg.min_samples and self.loss_rate(ch) > cfg.exclusion_threshold:
            self.available.remove(ch)
            if len(self.available) < cfg.min_channels:
                self.resets += 1
                self._reset()
                return True
        return False


def default_pairs(tree: Topology) -> list[tuple[int, int]]:
    """Each hop-2 node paired with the hop-3 node in the same row."""
    h2, h3 = tree.hop(2), tree.hop(3)
    return list(zip(h2, h3))


@dataclass
class P2pResult:
    scheme: str
    pdr: np.ndarray  # per pair
    loss_trace: np.ndarray  # rounds x pairs, cumulative lost packets
    resets: list[tuple[int, int]]  # (round, pair index)
    groups: list = field(default_factory=list)

    @property
    def worst_pdr(self) -> float:
        return float(self.pdr.min())


def simulate_p2p_afh(pairs, scheme, truth: InterferenceGraph, initial_map_size: int = 12,
                     rounds: int = 2000, config: AfhConfig = AfhConfig(), seed=0,
                     estimate: InterferenceGraph | None = None, tx_power_mw: float = 1.0,
                     sinr_floor_db: float = 10.0,
                     capture: CaptureConfig = CaptureConfig()) -> P2pResult:
    """Every pair sends one packet per round on a channel drawn from its map.

    Traditional pairs all start from channels 0..map_size-1; IgeAssisted
    pairs start from their group's share of those channels.
    """
    scheme = AfhScheme(scheme) if not isinstance(scheme, AfhScheme) else scheme
    pairs = [tuple(map(int, p)) for p in pairs]
    nodes = [v for p in pairs for v in p]
    if len(set(nodes)) != len(nodes):
        raise InvalidInputError("pairs must use disjoint nodes")
    if initial_map_size < 1 or rounds < 1:
        raise InvalidInputError("map size and rounds must be positive")
    rng = np.random.default_rng(seed)
    g = truth.gains
    groups = []
    if scheme is AfhScheme.IGE_ASSISTED:
        groups = group_links(estimate if estimate is not None else truth, pairs, sinr_floor_db, tx_power_mw, capture.noise_mw)
        own = _link_channels(groups, initial_map_size)
        maps = [ChannelMap(own[p], config) for p in pairs]
    else:
        maps = [ChannelMap(range(initial_map_size), config) for _ in pairs]
    lost = np.zeros((rounds, len(pairs)), dtype=np.int64)
    resets = []
    for k in range(rounds):
        chans = [m.pick(rng) for m in maps]
        for a, (t, r) in enumerate(pairs):
            contrib = {t: g[t, r] * tx_power_mw}
            for b, (t2, _) in enumerate(pairs):
                if b != a and chans[b] == chans[a]:
                    contrib[t2] = g[t2, r] * tx_power_mw
            out = receive_outcome(contrib, False, capture, rng)
            miss = not (out.received and out.dominant_sender == t)
            lost[k, a] = miss
            if maps[a].record(chans[a], miss):
                resets.append((k, a))
    trace = np.cumsum(lost, axis=0)
    return P2pResult(scheme.value, 1.0 - trace[-1] / rounds, trace, resets, groups)
