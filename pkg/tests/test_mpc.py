import json
import math
import os

import numpy as np
import pytest

from epicontrol.controls import ControlSchedule, constant_schedule
from epicontrol.dataset import Dataset, ParameterRanges, build_dataset
from epicontrol.incidence import IncidenceNet
from epicontrol.mpc import (MpcSettings, Scenario, StoppingCriteria, check_stopping,
                            compress_control, effective_parameters, ibm_cost, l2_mismatch,
                            peak_time, precision_schedule, reduced_under_control, reinforce,
                            run_mpc)
from epicontrol.ocp import OcpConfig


def best_segmentation_sse(y, max_pieces):
    """Exhaustive dynamic program for the least-squares piecewise-constant fit."""
    n = y.size
    c1 = np.concatenate([[0.0], np.cumsum(y)])
    c2 = np.concatenate([[0.0], np.cumsum(y * y)])

    def sse(a, b):
        s, s2, m = c1[b] - c1[a], c2[b] - c2[a], b - a
        return s2 - s * s / m

    best = np.full((max_pieces + 1, n + 1), np.inf)
    best[0, 0] = 0.0
    for p in range(1, max_pieces + 1):
        for b in range(1, n + 1):
            best[p, b] = min(best[p - 1, a] + sse(a, b) for a in range(b))
    return best[1:, n].min()


def schedule_of(b, k=None, t0=1.0, dt=1.0):
    b = np.asarray(b, dtype=float)
    k = np.ones_like(b) if k is None else np.asarray(k, dtype=float)
    return ControlSchedule(t0 + dt * np.arange(b.size), b, k)


def test_compression_close_to_optimal_segmentation():
    ramp = np.linspace(0.1, 1.0, 64)
    out = compress_control(schedule_of(ramp, 1.0 + 8.0 * ramp))
    for fitted, orig in ((out.b_values, ramp), (out.k_values, 1.0 + 8.0 * ramp)):
        assert np.unique(fitted).size <= 8
        opt = best_segmentation_sse(orig, 8)
        assert np.sum((fitted - orig) ** 2) <= 1.05 * opt


def test_compression_is_greedy_not_optimal():
    # on non-monotone input the greedy tree may lose to the best segmentation
    wiggle = 0.55 + 0.4 * np.sin(np.linspace(0.0, 5.0, 64))
    fitted = compress_control(schedule_of(wiggle)).b_values
    sse = np.sum((fitted - wiggle) ** 2)
    assert best_segmentation_sse(wiggle, 8) <= sse + 1e-15
    assert np.unique(fitted).size <= 8


def test_compression_recovers_piecewise_constant():
    b = np.repeat([0.3, 0.8, 0.5, 1.0], [7, 11, 5, 9])
    k = np.repeat([4.0, 1.0], [20, 12])
    out = compress_control(schedule_of(b, k))
    np.testing.assert_allclose(out.b_values, b, atol=1e-12)
    np.testing.assert_allclose(out.k_values, k, atol=1e-12)
    const = compress_control(schedule_of(np.full(10, 0.4)))
    np.testing.assert_array_equal(const.b_values, 0.4)
    np.testing.assert_array_equal(const.k_values, 1.0)
    with pytest.raises(ValueError):
        compress_control(schedule_of(b), max_pieces=0)


def test_ibm_cost_closed_forms():
    cfg = OcpConfig(t_c=1.5)
    grid = np.arange(0.0, 11.0)
    busy = np.full(grid.size, 0.2)
    hosp, cap = 0.2 / 0.025 - 1.0, 0.2 / 0.1 - 1.0
    expected = 8.5 * (0.6 * hosp ** 2 + cap ** 2 / 1e-2)
    assert ibm_cost(grid, busy, cfg) == pytest.approx(expected, rel=1e-12)
    assert ibm_cost(grid, np.full(grid.size, 0.02), cfg) == 0.0
    assert ibm_cost(grid, np.zeros(grid.size), cfg) == 0.0
    twice_cap = np.full(grid.size, 2 * cfg.i_max)
    expected = (0.6 * (2 * cfg.i_max / cfg.i_hosp - 1.0) ** 2 + 1.0 / cfg.epsilon) * (10.0 - 1.5)
    assert ibm_cost(grid, twice_cap, cfg) == pytest.approx(expected, rel=1e-12)
    # only the part after t_c counts
    i = np.where(grid < 1.0, 0.2, 0.0)
    assert ibm_cost(grid, i, cfg.replace(t_c=2.0)) == 0.0


def test_l2_and_peak_time():
    grid = np.array([0.0, 1.0, 3.0])
    assert l2_mismatch(grid, [1, 1, 1], [0, 0, 0], [1, 1, 0], [0, 1, 0]) == pytest.approx(math.sqrt(2.0))
    assert l2_mismatch(grid, [1, 1, 1], [0, 0, 0], [1, 1, 1], [0, 0, 0]) == 0.0
    assert peak_time(grid, [0.1, 0.3, 0.3]) == 1.0


def test_check_stopping_examples():
    grid = np.arange(5.0)
    s = np.array([0.99, 0.9, 0.8, 0.75, 0.74])
    i = np.array([0.01, 0.05, 0.08, 0.04, 0.01])
    crit = StoppingCriteria()
    ok, checks, m = check_stopping(0.1, 200.0, 0.5, crit, s, i, s, i, grid)
    assert ok and all(checks.values())
    assert m == {"l2": 0.0, "rinf_gap": 0.0, "peak_delay": 0.0}
    ok, checks, _ = check_stopping(0.3, 200.0, 0.5, crit, s, i, s, i, grid)
    assert not ok and checks["relative_cost"] is False and checks["below_reduced_cost"]
    ok, checks, _ = check_stopping(0.1, 200.0, 0.05, crit, s, i, s, i, grid)
    assert not ok and not checks["below_reduced_cost"]
    shifted = np.roll(i, 1)
    ok, checks, m = check_stopping(0.1, 200.0, 0.5, StoppingCriteria(tau_ip=0.5), s, i, s, shifted, grid)
    assert not checks["peak_delay"] and m["peak_delay"] == 1.0
    ok, checks, _ = check_stopping(0.0, 0.0, 0.0, crit, s, i, s, i, grid)
    assert ok


def test_effective_parameters_and_reinforce():
    grid = np.arange(0.0, 6.0)
    sched = ControlSchedule(np.array([2.0, 4.0, 5.0]), [0.5, 1.0, 1.0], [10.0, 1.0, 1.0])
    beta, kappa = effective_parameters(grid, sched, 0.4, 2.0)
    np.testing.assert_allclose(beta, [0.4, 0.4, 0.1, 0.1, 0.4])
    np.testing.assert_allclose(kappa, [2.0, 2.0, 20.0, 20.0, 2.0])

    s = np.array([0.99, 0.98, 0.96, 0.95, 0.945, 0.944])
    i = np.array([0.01, 0.015, 0.02, 0.018, 0.012, 1e-12])
    base = Dataset(np.ones((3, 5)), np.ones(3), np.zeros(3))
    once = reinforce(base, grid, s, i, sched, 0.5, 0.4, 2.0, source=-1)
    assert len(once) == 3 + 5
    added = once.X[3:]
    np.testing.assert_allclose(added[:, 3], beta)
    np.testing.assert_allclose(added[:, 4], kappa)
    np.testing.assert_allclose(once.y[3:], (s[:-1] - s[1:]) / (s[:-1] * i[:-1]))
    assert np.all(once.source[3:] == -1)
    twice = reinforce(once, grid, s, i, sched, 0.5, 0.4, 2.0, source=-1)
    np.testing.assert_array_equal(twice.X[8:], twice.X[3:8])


def test_precision_schedule_tightens():
    values = [precision_schedule(p) for p in range(30)]
    assert values[0] == (10, 1e-3)
    n_g, tau = zip(*values)
    assert all(b >= a for a, b in zip(n_g, n_g[1:])) and max(n_g) == 50
    assert all(b <= a for a, b in zip(tau, tau[1:])) and min(tau) == 1e-6


def test_reduced_under_identity_matches_uncontrolled():
    model = IncidenceNet.from_closure(beta_coef=1.0)
    scen = Scenario(0.5, 0.4, 2.0)
    cfg = OcpConfig(t_horizon=50.0)
    grid = cfg.dt * np.arange(176)
    ident = reduced_under_control(model, scen, constant_schedule(1.0, 50.0, cfg.dt), grid, cfg)
    half = reduced_under_control(model, scen, constant_schedule(1.0, 50.0, cfg.dt, b=0.5), grid, cfg)
    assert ident.i.max() > half.i.max()
    np.testing.assert_array_equal(ident.i[:4], half.i[:4])


@pytest.fixture(scope="module")
def tiny_base():
    ranges = ParameterRanges(n=(0.4, 0.6), beta=(0.3, 0.6), kappa=(0.5, 2.0))
    data, _ = build_dataset(ranges, 4, replicas_per_config=4, master_seed=1, horizon=60.0, n_max=2000)
    return data


def tiny_settings():
    return MpcSettings(ocp=OcpConfig(t_horizon=60.0), replicas=4, n_max=2000, d0_fraction=1.0,
                       fine_tune_epochs=1, train_epochs=3)


def test_zero_baseline_accepts_identity(tiny_base):
    res = run_mpc(Scenario(0.5, 0.02, 1.0), StoppingCriteria(max_outer_iterations=2), 3,
                  tiny_base, tiny_settings())
    assert res.accepted and res.c_0 == 0.0 and res.history == []
    np.testing.assert_array_equal(res.schedule.b_values, 1.0)
    np.testing.assert_array_equal(res.schedule.k_values, 1.0)


def test_tiny_loop_invariants_and_artifacts(tiny_base, tmp_path):
    crit = StoppingCriteria(tau_rl=1e-9, max_outer_iterations=2)
    res = run_mpc(Scenario(0.5, 0.5, 1.0), crit, 5, tiny_base, tiny_settings(), out_dir=str(tmp_path))
    assert not res.accepted and res.c_0 > 0
    assert res.failure["iterations"] == 2 and "relative_cost" in res.failure["failed_checks"]
    h0, h1 = res.history
    assert h0.dataset_size == len(tiny_base) and h1.dataset_size > h0.dataset_size
    for state in res.history:
        assert all(b <= a + 1e-12 for a, b in zip(state.ocp_costs, state.ocp_costs[1:]))
        assert state.compressed.is_feasible(0.1, 10.0)
        assert max(state.compressed.n_distinct()) <= 8
        assert state.c_0 == res.c_0
    names = {"model.json", "schedule_dense.csv", "schedule_compressed.csv", "ibm_batch.csv",
             "ibm_average.csv", "reduced.csv", "ocp_log.csv", "metrics.json"}
    for p in range(2):
        d = tmp_path / f"iter_{p:03d}"
        assert names <= set(os.listdir(d))
        with open(d / "metrics.json") as fh:
            assert json.load(fh)["iteration"] == p
    again = run_mpc(Scenario(0.5, 0.5, 1.0), crit, 5, tiny_base, tiny_settings())
    np.testing.assert_array_equal(again.schedule.b_values, res.schedule.b_values)
    assert [s.c_p for s in again.history] == [s.c_p for s in res.history]


def test_invalid_inputs():
    with pytest.raises(ValueError):
        Scenario(0.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        StoppingCriteria(tau_rl=0.0)
