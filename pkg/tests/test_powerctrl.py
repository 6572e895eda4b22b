import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ige import linkmodel, powerctrl
from ige.errors import InvalidInputError
from ige.powerctrl import AllocationProblem

POWER_SET = [0.01, 0.025, 0.16, 0.4, 1.0]


def random_problem(rng, n_s=None, n_r=None, n_i=None):
    n_s = n_s or int(rng.integers(1, 5))
    n_r = n_r or int(rng.integers(1, 5))
    n_i = int(rng.integers(0, 4)) if n_i is None else n_i
    n = n_s + n_r + n_i
    g = 10 ** rng.uniform(-9, -5, (n, n))
    np.fill_diagonal(g, 0)
    senders = list(range(n_s))
    receivers = list(range(n_s, n_s + n_r))
    inter = {k: float(rng.choice(POWER_SET)) for k in range(n_s + n_r, n)}
    return AllocationProblem(senders, receivers, g, POWER_SET, inter)


def test_receiver_delta_examples():
    g = np.zeros((3, 3))
    g[0, 2] = 1e-3
    prob = AllocationProblem([0], [2], g, [1.0])
    d, dom = powerctrl.receiver_delta(prob, {0: 1.0}, 2)
    assert d == pytest.approx(70.0, abs=1e-6) and dom == 0
    g[1, 2] = 1e-3
    prob = AllocationProblem([0, 1], [2], g, [1.0], noise_floor_mw=0.0)
    d, _ = powerctrl.receiver_delta(prob, {0: 1.0, 1: 1.0}, 2)
    assert d == pytest.approx(0.0, abs=1e-12)
    d, dom = powerctrl.receiver_delta(prob, {0: 1.0, 1: 0.25}, 2)
    assert d == pytest.approx(10 * math.log10(4), abs=1e-12) and dom == 0
    with pytest.raises(InvalidInputError):
        powerctrl.receiver_delta(prob, {0: 1.0}, 2)
    with pytest.raises(InvalidInputError):
        powerctrl.receiver_delta(prob, {0: 1.0, 1: 1.0}, 0)


def test_solve_two_senders_two_receivers():
    # each sender is strong at its own receiver; the best plan keeps both at max
    g = np.zeros((4, 4))
    g[0, 2], g[1, 2] = 1e-4, 1e-7
    g[0, 3], g[1, 3] = 1e-7, 1e-4
    res = powerctrl.solve(AllocationProblem([0, 1], [2, 3], g, POWER_SET, noise_floor_mw=1e-10))
    assert res.assignment == {0: 1.0, 1: 1.0}
    assert res.delta_db == pytest.approx(10 * math.log10(1e-4 / (1e-7 + 1e-10)))
    # without noise every common scaling ties and the lowest powers win
    res = powerctrl.solve(AllocationProblem([0, 1], [2, 3], g, POWER_SET, noise_floor_mw=0.0))
    assert res.assignment == {0: 0.01, 1: 0.01}
    assert res.dominant_of == {2: 0, 3: 1}


def test_solve_single_sender_picks_max():
    g = np.zeros((2, 2))
    g[0, 1] = 1e-6
    res = powerctrl.solve(AllocationProblem([0], [1], g, POWER_SET))
    assert res.assignment == {0: 1.0}


def test_solve_matches_exhaustive_seeded():
    rng = np.random.default_rng(5)
    for _ in range(60):
        prob = random_problem(rng)
        a, b = powerctrl.solve(prob), powerctrl.exhaustive_solve(prob)
        assert a.delta_db == pytest.approx(b.delta_db, abs=1e-9)
        assert a.assignment == b.assignment


@given(st.integers(0, 10**6))
def test_prune_does_not_change_optimum(seed):
    prob = random_problem(np.random.default_rng(seed))
    a, b = powerctrl.solve(prob, prune=True), powerctrl.solve(prob, prune=False)
    assert a.delta_db == pytest.approx(b.delta_db, abs=1e-9)
    assert a.assignment == b.assignment
    tree = sum(len(POWER_SET) ** k for k in range(len(prob.senders) + 1))
    assert a.nodes_explored <= b.nodes_explored == tree


@given(st.integers(0, 10**6))
def test_interferer_never_helps(seed):
    rng = np.random.default_rng(seed)
    prob = random_problem(rng, n_i=0)
    n = prob.gains.shape[0]
    g = np.zeros((n + 1, n + 1))
    g[:n, :n] = prob.gains
    g[n, :n] = 10 ** rng.uniform(-9, -5, n)
    louder = AllocationProblem(prob.senders, prob.receivers, g, POWER_SET, {n: 1.0})
    assert powerctrl.solve(louder).delta_db <= powerctrl.solve(prob).delta_db + 1e-9


@given(st.integers(0, 10**6), st.floats(-3, 3))
def test_gain_scaling_invariance(seed, exp):
    prob = random_problem(np.random.default_rng(seed), n_i=0)
    scaled = AllocationProblem(prob.senders, prob.receivers, prob.gains * 10**exp, POWER_SET,
                               noise_floor_mw=0.0)
    plain = AllocationProblem(prob.senders, prob.receivers, prob.gains, POWER_SET, noise_floor_mw=0.0)
    assert powerctrl.solve(scaled).delta_db == pytest.approx(powerctrl.solve(plain).delta_db, abs=1e-7)


def test_problem_validation():
    g = np.full((3, 3), 1e-6)
    with pytest.raises(InvalidInputError):
        AllocationProblem([], [2], g, POWER_SET)
    with pytest.raises(InvalidInputError):
        AllocationProblem([0], [2], g, [])
    with pytest.raises(InvalidInputError):
        AllocationProblem([0], [2], g, POWER_SET, {0: 1.0})
    g[0, 2] = np.nan
    with pytest.raises(InvalidInputError):
        AllocationProblem([0], [2], g, POWER_SET)
    big = AllocationProblem(list(range(10)), [10], np.full((11, 11), 1e-6), POWER_SET)
    with pytest.raises(InvalidInputError):
        powerctrl.exhaustive_solve(big)


def test_allocate_multihop_covers_testbed():
    topo, g = linkmodel.generate_topology("testbed19", seed=0)
    plan = powerctrl.allocate_multihop(g, topo, POWER_SET)
    assert sorted(plan.powers) == list(range(19))
    assert set(plan.powers.values()) <= set(POWER_SET)
    assert sorted(plan.hop_results) == [0, 1, 2, 3]


def test_allocate_multihop_beats_uniform():
    # each hop's optimum is at least the uniform 0 dBm plan under the same upstream powers
    for seed in range(10):
        topo, g = linkmodel.generate_topology("testbed19", seed=seed)
        plan = powerctrl.allocate_multihop(g, topo, POWER_SET)
        for i in range(topo.depth):
            fixed = {k: plan.powers[k] for h in range(i) for k in topo.hop(h)}
            prob = AllocationProblem(topo.hop(i), topo.hop(i + 1), g.gains, POWER_SET, fixed)
            uniform = min(powerctrl.receiver_delta(prob, {s: 1.0 for s in prob.senders}, r)[0]
                          for r in prob.receivers)
            assert plan.hop_results[i].delta_db >= uniform - 1e-9


def test_allocate_multihop_line(tmp_path):
    topo, g = linkmodel.generate_topology("line", n=3)
    plan = powerctrl.allocate_multihop(g, topo, POWER_SET)
    assert plan.powers[0] == 1.0 and plan.powers[1] == 1.0
    p = tmp_path / "plan.csv"
    plan.to_csv(p, topo.hop_of)
    lines = p.read_text().splitlines()
    assert lines[0] == "node,hop,tx_power_dbm" and lines[1] == "0,0,0.000"
