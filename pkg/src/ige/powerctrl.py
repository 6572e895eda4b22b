"""Per-hop transmit power allocation maximising the minimum power delta.

For a set of senders S, receivers M and fixed interferers I, pick one power
per sender from a discrete set so that every receiver has a dominant sender
whose received power exceeds the sum of all other contributions plus noise
by as much as possible (max-min over receivers, in dB).
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

TIE_DB = 1e-9


@dataclass
class AllocationProblem:
    senders: list[int]
    receivers: list[int]
    gains: np.ndarray  # gains[i, j]: node i -> node j, full network matrix
    power_set: list[float]  # mW, ascending
    interferers: dict[int, float] = field(default_factory=dict)  # id -> fixed mW
    noise_floor_mw: float = 1e-10

    def __post_init__(self):
        self.senders = sorted(self.senders)
        self.receivers = sorted(self.receivers)
        self.power_set = sorted(float(p) for p in self.power_set)
        if not self.power_set:
            raise InvalidInputError("power set is empty")
        if not self.senders:
            raise InvalidInputError("need at least one sender")
        if set(self.senders) & set(self.interferers):
            raise InvalidInputError("senders and interferers overlap")
        g = np.asarray(self.gains, dtype=float)
        need = [(i, j) for j in self.receivers for i in (*self.senders, *self.interferers)
                if i != j and not (g[i, j] >= 0 and np.isfinite(g[i, j]))]
        if need:
            raise InvalidInputError(f"missing gains for pairs {need}")
        self.gains = g

    def _rx_gains(self):
        """Sender x receiver gain block and fixed interference per receiver."""
        H = self.gains[np.ix_(self.senders, self.receivers)].copy()
        for a, s in enumerate(self.senders):
            for b, r in enumerate(self.receivers):
                if s == r:
                    H[a, b] = 0.0
        fixed = np.full(len(self.receivers), self.noise_floor_mw)
        for i, p in self.interferers.items():
            for b, r in enumerate(self.receivers):
                if i != r:
                    fixed[b] += self.gains[i, r] * p
        return H, fixed


@dataclass
class AllocationResult:
    assignment: dict[int, float]
    delta_db: float
    dominant_of: dict[int, int]
    nodes_explored: int = 0
    cuts: int = 0


def _deltas(H, fixed, powers):
    """Per-receiver (best delta dB, dominant sender index)."""
    contrib = H * np.asarray(powers)[:, None]
    total = contrib.sum(axis=0) + fixed
    with np.errstate(divide="ignore"):
        ratio = contrib / (total - contrib)
    best = np.argmax(ratio, axis=0)
    val = ratio[best, np.arange(ratio.shape[1])]
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(val), best


def receiver_delta(problem: AllocationProblem, assignment: dict, receiver: int):
    """(delta_db, dominant sender id) at one receiver for a full assignment."""
    if receiver not in problem.receivers:
        raise InvalidInputError(f"{receiver} is not a receiver of this problem")
    missing = [s for s in problem.senders if s not in assignment]
    if missing:
        raise InvalidInputError(f"assignment lacks senders {missing}")
    H, fixed = problem._rx_gains()
    b = problem.receivers.index(receiver)
    d, best = _deltas(H[:, [b]], fixed[[b]], [assignment[s] for s in problem.senders])
    return float(d[0]), problem.senders[int(best[0])]


def _objective(H, fixed, powers):
    if H.shape[1] == 0:
        return math.inf
    d, _ = _deltas(H, fixed, powers)
    return float(np.min(d))


def _better(val, key, best_val, best_key):
    if val > best_val + TIE_DB:
        return True
    return abs(val - best_val) <= TIE_DB and key < best_key


def _result(problem, H, fixed, key):
    powers = [problem.power_set[k] for k in key]
    d, best = _deltas(H, fixed, powers) if H.shape[1] else (np.array([]), [])
    return AllocationResult(
        dict(zip(problem.senders, powers)),
        float(np.min(d)) if len(d) else math.inf,
        {r: problem.senders[int(b)] for r, b in zip(problem.receivers, best)},
    )


def exhaustive_solve(problem: AllocationProblem, limit: int = 10**6) -> AllocationResult:
    """Brute force over every assignment, lexicographically smallest optimum."""
    P = problem.power_set
    if len(P) ** len(problem.senders) > limit:
        raise InvalidInputError("search space too large for exhaustive enumeration")
    H, fixed = problem._rx_gains()
    best_val, best_key = -math.inf, None
    for key in itertools.product(range(len(P)), repeat=len(problem.senders)):
        val = _objective(H, fixed, [P[k] for k in key])
        if best_key is None or _better(val, key, best_val, best_key):
            best_val, best_key = val, key
    res = _result(problem, H, fixed, best_key)
    res.nodes_explored = len(P) ** len(problem.senders)
    return res


def solve(problem: AllocationProblem, prune: bool = True) -> AllocationResult:
    """Depth-first branch and cut, exact.

    Senders are branched in descending order of their strongest gain to any
    receiver.  A partial assignment is cut when an optimistic bound (each
    candidate dominant sender at max power, every other unassigned sender at
    min power) cannot beat the incumbent.
    """
    P = np.asarray(problem.power_set)
    n = len(problem.senders)
    H, fixed = problem._rx_gains()
    if H.shape[1] == 0:
        return _result(problem, H, fixed, (0,) * n)
    order = sorted(range(n), key=lambda a: (-H[a].max(), a))
    pmin, pmax = P[0], P[-1]
    key = [0] * n
    assigned = np.zeros(n, dtype=bool)
    powers = np.zeros(n)
    state = {"val": -math.inf, "key": None, "nodes": 0, "cuts": 0}

    def bound():
        lo_p = np.where(assigned, powers, pmin)
        hi_p = np.where(assigned, powers, pmax)
        others = (H * lo_p[:, None]).sum(axis=0) + fixed
        num = H * hi_p[:, None]
        den = others[None, :] - H * lo_p[:, None]
        with np.errstate(divide="ignore"):
            best = np.max(num / den, axis=0)
            return float(np.min(10.0 * np.log10(best)))

    def dfs(depth):
        state["nodes"] += 1
        if depth == n:
            val = _objective(H, fixed, powers)
            k = tuple(key)
            if state["key"] is None or _better(val, k, state["val"], state["key"]):
                state["val"], state["key"] = val, k
            return
        if prune and state["key"] is not None and bound() < state["val"] - TIE_DB:
            state["cuts"] += 1
            return
        a = order[depth]
        assigned[a] = True
        for k in range(len(P) - 1, -1, -1):
            key[a] = k
            powers[a] = P[k]
            dfs(depth + 1)
        assigned[a] = False
        powers[a] = 0.0
        key[a] = 0

    dfs(0)
    res = _result(problem, H, fixed, state["key"])
    res.nodes_explored, res.cuts = state["nodes"], state["cuts"]
    return res


@dataclass
class AllocationPlan:
    powers: dict[int, float]
    hop_results: dict[int, AllocationResult] = field(default_factory=dict)

    def to_csv(self, path, hop_of) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "hop", "tx_power_dbm"])
            for node in sorted(self.powers):
                w.writerow([node, hop_of[node], f"{10 * math.log10(self.powers[node]):.3f}"])


def allocate_multihop(graph, topology, power_set, noise_floor_mw: float = 1e-10,
                      prune: bool = True) -> AllocationPlan:
    """Hop-by-hop allocation over an estimated graph.

    Hop i senders target hop i+1 with hops < i as fixed interferers.  The
    last hop is served by reusing the hop d-1 -> hop d gains transposed and
    targets hop d-1 nodes, with hops < d-1 as interferers.
    """
    gains = graph.gains if hasattr(graph, "gains") else np.asarray(graph)
    d = topology.depth
    if d < 1:
        raise InvalidInputError("topology needs at least one hop")
    powers: dict[int, float] = {}
    results: dict[int, AllocationResult] = {}
    for i in range(d):
        fixed = {k: powers[k] for h in range(i) for k in topology.hop(h)}
        prob = AllocationProblem(topology.hop(i), topology.hop(i + 1), gains, power_set,
                                 fixed, noise_floor_mw)
        res = solve(prob, prune=prune)
        powers.update(res.assignment)
        results[i] = res
    last, prev = topology.hop(d), topology.hop(d - 1)
    sym = gains.copy()
    for s in last:
        for r in prev:
            sym[s, r] = gains[r, s]
    fixed = {k: powers[k] for h in range(d - 1) for k in topology.hop(h)}
    res = solve(AllocationProblem(last, prev, sym, power_set, fixed, noise_floor_mw), prune=prune)
    powers.update(res.assignment)
    results[d] = res
    return AllocationPlan(powers, results)
