import math
from functools import lru_cache

import numpy as np
import pytest

from epicontrol.controls import ControlSchedule, constant_schedule
from epicontrol.graph import ContactGraph, DegreeParams, random_graph
from epicontrol.ibm import (IbmParams, gillespie_run, policy_pieces, population_size, run_batch,
                            run_with_policy, sample_grid)


def path_graph():
    # 0 - 1 - 2
    return ContactGraph(3, np.array([0, 1, 3, 4]), np.array([1, 0, 2, 1]), alpha=2.0)


def pair_graph():
    return ContactGraph(2, np.array([0, 1, 2]), np.array([1, 0]), alpha=1.0)


def final_size_oracle(adjacency, lam, gamma):
    """Exact final-size law of the SIR jump chain, one uniform initial infection.

    Memoized recursion over node-state tuples; independent of the simulator.
    """
    n = len(adjacency)

    @lru_cache(maxsize=None)
    def law(state):
        infected = [j for j in range(n) if state[j] == 1]
        if not infected:
            size = sum(1 for x in state if x == 2)
            return tuple(1.0 if r == size else 0.0 for r in range(n + 1))
        moves = []
        for j in infected:
            nxt = list(state)
            nxt[j] = 2
            moves.append((gamma, tuple(nxt)))
        for j in range(n):
            if state[j] == 0:
                d = sum(1 for nb in adjacency[j] if state[nb] == 1)
                if d:
                    nxt = list(state)
                    nxt[j] = 1
                    moves.append((lam * d, tuple(nxt)))
        total = sum(rate for rate, _ in moves)
        out = np.zeros(n + 1)
        for rate, nxt in moves:
            out += rate / total * np.array(law(nxt))
        return tuple(out)

    mix = np.zeros(n + 1)
    for start in range(n):
        state = tuple(1 if j == start else 0 for j in range(n))
        mix += np.array(law(state)) / n
    return mix


def empirical_final_sizes(graph, params, n_runs, seed0):
    sizes = np.zeros(graph.n_nodes + 1)
    for s in range(seed0, seed0 + n_runs):
        tr = gillespie_run(graph, params, s)
        assert tr.counts[-1, 1] == 0
        sizes[tr.counts[-1, 2]] += 1
    return sizes / n_runs


def test_path_graph_final_size_matches_exact_chain():
    lam, gamma, n_runs = 1.5, 1.0, 20000
    params = IbmParams(beta=lam, gamma=gamma, i0_fraction=0.2, horizon=60.0, sample_dt=1.0,
                       edge_rate="raw")
    expected = final_size_oracle(((1,), (0, 2), (1,)), lam, gamma)
    observed = empirical_final_sizes(path_graph(), params, n_runs, 0)
    se = np.sqrt(expected * (1 - expected) / n_runs)
    assert expected[0] == 0.0 and observed[0] == 0.0
    np.testing.assert_array_less(np.abs(observed - expected)[1:], 3 * se[1:] + 1e-12)


def test_pair_transmission_probability():
    lam, gamma, n_runs = 0.7, 0.5, 20000
    params = IbmParams(beta=lam, gamma=gamma, i0_fraction=0.5, horizon=80.0, sample_dt=1.0,
                       edge_rate="raw")
    p = lam / (lam + gamma)
    observed = empirical_final_sizes(pair_graph(), params, n_runs, 100)
    assert abs(observed[2] - p) < 3 * math.sqrt(p * (1 - p) / n_runs)


def test_per_contact_rate_divides_by_alpha():
    params = IbmParams(beta=0.6)
    assert params.edge_rate_for(0.6, 10.0) == pytest.approx(0.06)
    assert IbmParams(beta=0.6, edge_rate="raw").edge_rate_for(0.6, 10.0) == 0.6
    with pytest.raises(ValueError):
        params.edge_rate_for(0.6, 0.0)


def test_zero_transmission_is_binomial_decay():
    graph = random_graph(DegreeParams(10.0, 1.0, 2000), 5)
    gamma, t_obs = 1.0 / 6.0, 5.0
    params = IbmParams(beta=0.0, gamma=gamma, i0_fraction=0.5, horizon=10.0, sample_dt=1.0)
    k = int(np.searchsorted(sample_grid(10.0, 1.0), t_obs))
    infected = np.array([gillespie_run(graph, params, s).counts[k, 1] for s in range(200)])
    n0, p = 1000, math.exp(-gamma * t_obs)
    mean_se = math.sqrt(n0 * p * (1 - p) / infected.size)
    assert abs(infected.mean() - n0 * p) < 3 * mean_se
    assert infected.var(ddof=1) == pytest.approx(n0 * p * (1 - p), rel=0.3)
    tr = gillespie_run(graph, params, 1)
    assert np.all(tr.counts[:, 0] == 1000)


def test_check_mode_and_invariants():
    graph = random_graph(DegreeParams(10.0, 0.5, 800), 2)
    params = IbmParams(beta=0.8, i0_fraction=0.01, horizon=120.0)
    tr = gillespie_run(graph, params, 9, check=True)
    assert tr.max_si_error == 0
    c = tr.counts
    assert np.all(c.sum(axis=1) == graph.n_nodes)
    assert np.all(np.diff(c[:, 0]) <= 0)
    assert np.all(np.diff(c[:, 2]) >= 0)
    assert c[0, 1] == math.ceil(0.01 * 800)
    assert tr.grid[-1] == pytest.approx(120.0)
    assert c[-1, 2] > c[0, 1]


def test_same_seed_same_run():
    graph = random_graph(DegreeParams(10.0, 1.0, 500), 4)
    params = IbmParams(beta=0.5, i0_fraction=0.01, horizon=50.0)
    a, b = gillespie_run(graph, params, 3), gillespie_run(graph, params, 3)
    np.testing.assert_array_equal(a.counts, b.counts)


def test_population_size():
    assert population_size(0.5) == 10000
    assert population_size(1e-6) == 1
    with pytest.raises(ValueError):
        population_size(1.5)


def test_invalid_params():
    with pytest.raises(ValueError):
        IbmParams(beta=-0.1)
    with pytest.raises(ValueError):
        IbmParams(beta=0.1, i0_fraction=1.0)
    with pytest.raises(ValueError):
        IbmParams(beta=0.1, edge_rate="other")
    with pytest.raises(TypeError):
        gillespie_run(path_graph(), IbmParams(beta=0.1, horizon=5.0), 1.5)


def test_policy_pieces_merge_equal_runs():
    grid = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    sched = ControlSchedule(grid, [1.0, 0.5, 0.5, 1.0, 1.0], [1.0, 1.0, 1.0, 10.0, 10.0])
    pieces = policy_pieces(0.4, 2.0, sched, 8.0)
    assert pieces == [
        (0.0, 2.0, 0.4, 2.0),
        (2.0, 4.0, 0.2, 2.0),
        (4.0, 8.0, 0.4 * 0.5, 20.0),
    ]
    identity = constant_schedule(1.0, 8.0, 0.5)
    assert policy_pieces(0.4, 2.0, identity, 8.0) == [(0.0, 8.0, 0.4, 2.0)]


def test_identity_schedule_equals_uncontrolled():
    dp = DegreeParams(10.0, 1.0, 600)
    params = IbmParams(beta=0.5, i0_fraction=0.01, horizon=40.0)
    a = run_with_policy(dp, params, None, 12)
    b = run_with_policy(dp, params, constant_schedule(1.0, 40.0, 2.0 / 7.0), 12)
    np.testing.assert_array_equal(a.counts, b.counts)


def test_dispersion_switch_keeps_states():
    dp = DegreeParams(10.0, 1.0, 1000)
    params = IbmParams(beta=0.6, i0_fraction=0.01, horizon=60.0)
    sched = ControlSchedule(np.array([10.0, 20.0, 60.0]), [1.0, 1.0, 1.0], [1.0, 10.0, 10.0])
    tr = run_with_policy(dp, params, sched, 4, check=True)
    assert tr.max_si_error == 0
    assert [p[3] for p in tr.params_per_interval] == [1.0, 10.0]
    c = tr.counts
    assert np.all(np.diff(c[:, 0]) <= 0) and np.all(np.diff(c[:, 2]) >= 0)
    assert np.all(c.sum(axis=1) == 1000)


def test_batch_parallel_matches_serial():
    dp = DegreeParams(10.0, 1.0, 300)
    params = IbmParams(beta=0.5, i0_fraction=0.02, horizon=30.0)
    serial = run_batch(dp, params, None, 4, 21, n_jobs=1)
    parallel = run_batch(dp, params, None, 4, 21, n_jobs=2)
    for a, b in zip(serial, parallel):
        np.testing.assert_array_equal(a.counts, b.counts)
    assert len({a.seed for a in serial}) == 4
    with pytest.raises(ValueError):
        run_batch(dp, params, None, 0, 1)
