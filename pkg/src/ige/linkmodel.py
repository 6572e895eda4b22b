"""Topologies, ground-truth channel gains and capture-based packet reception."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


class Layout(enum.Enum):
    GRID = "grid"
    LINE = "line"
    TESTBED19 = "testbed19"


@dataclass
class InterferenceGraph:
    """Linear channel gains; ``gains[i, j]`` is sender i -> receiver j."""

    gains: np.ndarray

    def __post_init__(self):
        g = np.array(self.gains, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise InvalidInputError("gain matrix must be square")
        off = ~np.eye(len(g), dtype=bool)
        if not np.all(np.isfinite(g[off])) or np.any(g[off] <= 0) or np.any(g[off] > 1):
            raise InvalidInputError("off-diagonal gains must be finite and in (0, 1]")
        np.fill_diagonal(g, 0.0)
        self.gains = g

    @property
    def n(self) -> int:
        return len(self.gains)

    def gain_db(self, i: int, j: int) -> float:
        return 10.0 * math.log10(self.gains[i, j])

    def copy(self) -> "InterferenceGraph":
        return InterferenceGraph(self.gains.copy())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_i", "node_j", "gain_db"])
            for i in range(self.n):
                for j in range(self.n):
                    if i != j:
                        w.writerow([i, j, f"{self.gain_db(i, j):.6f}"])

    @classmethod
    def from_csv(cls, path) -> "InterferenceGraph":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        n = 1 + max(max(int(r["node_i"]), int(r["node_j"])) for r in rows)
        g = np.ones((n, n))
        for r in rows:
            g[int(r["node_i"]), int(r["node_j"])] = 10.0 ** (float(r["gain_db"]) / 10.0)
        return cls(g)

    def to_dict(self) -> dict:
        return {"gains_db": [[0.0 if i == j else round(self.gain_db(i, j), 9)
                              for j in range(self.n)] for i in range(self.n)]}

    @classmethod
    def from_dict(cls, d: dict) -> "InterferenceGraph":
        g = np.power(10.0, np.asarray(d["gains_db"], dtype=float) / 10.0)
        return cls(g)


@dataclass
class Topology:
    positions: np.ndarray
    hop_of: list[int]
    children: dict[int, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        hops = sorted(set(self.hop_of))
        if hops != list(range(len(hops))) or self.hop_of.count(0) != 1:
            raise InvalidInputError("hop indices must be contiguous with a single initiator at hop 0")

    @property
    def n(self) -> int:
        return len(self.hop_of)

    @property
    def initiator(self) -> int:
        return self.hop_of.index(0)

    @property
    def depth(self) -> int:
        return max(self.hop_of)

    def hop(self, i: int) -> list[int]:
        return [k for k, h in enumerate(self.hop_of) if h == i]

    def hop_sizes(self) -> list[int]:
        """Sizes of hops 1..d (the initiator excluded)."""
        return [len(self.hop(i)) for i in range(1, self.depth + 1)]

    def parent_of(self) -> dict[int, int]:
        return {c: p for p, cs in self.children.items() for c in cs}

    def to_dict(self) -> dict:
        return {"positions": self.positions.tolist(), "hop_of": list(self.hop_of),
                "children": {str(k): v for k, v in self.children.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "Topology":
        return cls(np.asarray(d["positions"]), list(d["hop_of"]),
                   {int(k): list(v) for k, v in d.get("children", {}).items()})


def _testbed19(hop_spacing: float, row_spacing: float, initiator_offset: float):
    # three aligned rows of six nodes; initiator centred in front of hop 1
    pos = [(hop_spacing - initiator_offset, 2.5 * row_spacing)]
    hop_of = [0]
    for h in (1, 2, 3):
        for j in range(6):
            pos.append((h * hop_spacing, j * row_spacing))
            hop_of.append(h)
    children = {0: list(range(1, 7))}
    for i in range(1, 13):
        if i % 2 == 0:
            children[i] = [i + 5, i + 6]
    return np.array(pos), hop_of, children


def _line(n: int, spacing: float):
    pos = np.array([(k * spacing, 0.0) for k in range(n)])
    return pos, list(range(n)), {k: [k + 1] for k in range(n - 1)}


def _grid(side: int, spacing: float):
    pos, hop_of = [], []
    for r in range(side):
        for c in range(side):
            pos.append((c * spacing, r * spacing))
            hop_of.append(max(r, c))
    # the corner node is the only hop-0 node; ring k around it is hop k
    children: dict[int, list[int]] = {}
    for k in range(1, side * side):
        r, c = divmod(k, side)
        pr, pc = (r - 1, c) if r > c else (r, c - 1) if c > r else (r - 1, c - 1)
        children.setdefault(pr * side + pc, []).append(k)
    return np.array(pos), hop_of, children


# Testbed19 calibration: one-hop links near -75 dB, rows close enough that
# neighbouring senders collide at equal power, about half the nodes with two
# incoming links within 3 dB of each other.
TESTBED19_DEFAULTS = {"path_loss_exponent": 5.0, "shadowing_sigma_db": 2.0,
                      "hop_spacing": 8.0, "row_spacing": 2.4, "initiator_offset": 8.0}


def generate_topology(layout, path_loss_exponent: float | None = None,
                      ref_gain_db_at_1m: float = -30.0, shadowing_sigma_db: float | None = None,
                      seed=None, *, n: int = 3, spacing: float = 1.0,
                      hop_spacing: float = TESTBED19_DEFAULTS["hop_spacing"],
                      row_spacing: float = TESTBED19_DEFAULTS["row_spacing"],
                      initiator_offset: float = TESTBED19_DEFAULTS["initiator_offset"]):
    """Place nodes and derive log-distance gains with symmetric shadowing.

    ``n`` is the node count for ``Line`` and the side length for ``Grid``.
    Unset exponent/shadowing fall back to 3.0 / 0 dB, or to the calibrated
    values for ``Testbed19``.  Gains are clipped to (0, 1].
    """
    try:
        layout = Layout(layout) if not isinstance(layout, Layout) else layout
    except ValueError:
        raise InvalidInputError(f"unknown layout {layout!r}") from None
    tb = layout is Layout.TESTBED19
    if path_loss_exponent is None:
        path_loss_exponent = TESTBED19_DEFAULTS["path_loss_exponent"] if tb else 3.0
    if shadowing_sigma_db is None:
        shadowing_sigma_db = TESTBED19_DEFAULTS["shadowing_sigma_db"] if tb else 0.0
    if not 1.5 <= path_loss_exponent <= 6:
        raise InvalidInputError("path-loss exponent must lie in [1.5, 6]")
    if layout is Layout.TESTBED19:
        pos, hop_of, children = _testbed19(hop_spacing, row_spacing, initiator_offset)
    elif layout is Layout.LINE:
        pos, hop_of, children = _line(n, spacing)
    else:
        pos, hop_of, children = _grid(n, spacing)
    topo = Topology(pos, hop_of, children)
    return topo, gains_from_positions(pos, path_loss_exponent, ref_gain_db_at_1m,
                                      shadowing_sigma_db, seed)


def gains_from_positions(pos, exponent, ref_gain_db, sigma_db, seed=None) -> InterferenceGraph:
    pos = np.asarray(pos, dtype=float)
    n = len(pos)
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    np.fill_diagonal(dist, 1.0)
    db = ref_gain_db - 10.0 * exponent * np.log10(dist)
    if sigma_db > 0:
        rng = np.random.default_rng(seed)
        shadow = np.triu(rng.normal(0.0, sigma_db, (n, n)), 1)
        db = db + shadow + shadow.T
    db = np.minimum(db, 0.0)
    g = np.power(10.0, db / 10.0)
    np.fill_diagonal(g, 0.0)
    return InterferenceGraph(g)


def channel_similarity(graph: InterferenceGraph, node: int, senders=None) -> float:
    """dB gap between the two strongest links into ``node``."""
    senders = [k for k in range(graph.n) if k != node] if senders is None else list(senders)
    if len(senders) < 2:
        raise InvalidInputError(f"node {node} needs at least two incoming links")
    g = np.sort(graph.gains[senders, node])[::-1]
    return 10.0 * math.log10(g[0] / g[1])


@dataclass(frozen=True)
class CaptureConfig:
    delta_cap_db: float = 3.0
    logistic_width_db: float = 1.0
    noise_floor_dbm: float = -100.0
    snr_min_db: float = 5.0
    diff_data_penalty_db: float = 3.0

    def __post_init__(self):
        if self.logistic_width_db <= 0:
            raise InvalidInputError("logistic width must be positive")

    @property
    def noise_mw(self) -> float:
        return 10.0 ** (self.noise_floor_dbm / 10.0)


@dataclass(frozen=True)
class PacketOutcome:
    received: bool
    dominant_sender: int | None
    power_delta_db: float
    probability: float


def _logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def power_delta_db(contributions_mw, noise_mw: float):
    """Strongest contribution over everything else plus noise, in dB.

    ``contributions_mw`` may be 1-D (one receiver) or 2-D (rows = receivers).
    Returns (delta_db, argmax index); lowest index wins ties.
    """
    c = np.asarray(contributions_mw, dtype=float)
    idx = np.argmax(c, axis=-1)
    top = np.take_along_axis(c, np.expand_dims(idx, -1), -1)[..., 0]
    rest = c.sum(axis=-1) - top
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(top / (rest + noise_mw)), idx


def success_probability(contributions_mw, capture: CaptureConfig, same_data: bool = True):
    """Reception probability for one (1-D) or many (2-D) receivers."""
    c = np.asarray(contributions_mw, dtype=float)
    delta, _ = power_delta_db(c, capture.noise_mw)
    single = np.count_nonzero(c > 0, axis=-1) <= 1
    cap = capture.delta_cap_db + (0.0 if same_data else capture.diff_data_penalty_db)
    thresh = np.where(single, capture.snr_min_db, cap)
    return _logistic((delta - thresh) / capture.logistic_width_db)


def receive_outcome(rx_contributions: dict, same_data: bool, capture: CaptureConfig,
                    rng: np.random.Generator) -> PacketOutcome:
    """Sample one packet reception; contributions map sender -> mW."""
    if not rx_contributions:
        raise InvalidInputError("no transmitters contribute to this reception")
    ids = sorted(rx_contributions)
    c = np.array([float(getattr(rx_contributions[k], "mw", rx_contributions[k])) for k in ids])
    delta, idx = power_delta_db(c, capture.noise_mw)
    p = float(success_probability(c, capture, same_data))
    ok = bool(rng.random() < p)
    return PacketOutcome(ok, ids[int(idx)] if ok else None, float(delta), p)
