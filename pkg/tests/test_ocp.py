import math

import numpy as np
import pytest

from epicontrol.controls import ControlSchedule, constant_schedule, v, v_prime
from epicontrol.incidence import IncidenceNet
from epicontrol.ocp import (OcpConfig, adjoint_solve, cost, cost_from_trajectory, forward,
                            golden_section, gradient, initial_state, line_search, project,
                            quadrature_weights, smoothed_tv, solve)

ZERO = IncidenceNet.from_closure()
SIR = IncidenceNet.from_closure(beta_coef=1.0)


def small_config(**kw):
    base = dict(t_c=0.0, t_horizon=30.0, dt=1.0, dt_int=0.25, s_c=0.97, i_c=0.02,
                i_hosp=0.01, i_max=0.05)
    base.update(kw)
    return OcpConfig(**base)


def test_coupling_values():
    assert v(1.0) == 1.0
    assert v(10.0) == pytest.approx(0.5)
    assert v(100.0) == pytest.approx(1.0 / 3.0)
    assert v_prime(1.0) == pytest.approx(-1.0 / math.log(10.0))
    for k in (1.3, 2.0, 7.5):
        fd = (v(k + 1e-6) - v(k - 1e-6)) / 2e-6
        assert v_prime(k) == pytest.approx(fd, rel=1e-7)
    with pytest.raises(ValueError):
        v(0.5)


def test_quadrature_and_tv():
    np.testing.assert_allclose(quadrature_weights(np.array([0.0, 1.0, 3.0])), [0.5, 1.5, 1.0])
    assert smoothed_tv(np.array([1.0, 1.0, 1.0]), 1e-6) == pytest.approx(2e-3)
    assert smoothed_tv(np.array([0.0, 3.0]), 0.0) == 3.0
    b, k = project(np.array([0.0, 0.5, 2.0]), np.array([0.5, 5.0, 50.0]), OcpConfig())
    np.testing.assert_array_equal(b, [0.1, 0.5, 1.0])
    np.testing.assert_array_equal(k, [1.0, 5.0, 10.0])


def test_cost_closed_forms():
    cfg = OcpConfig(t_c=1.0, t_horizon=11.0, dt=0.5, delta=1e-3, eta=1e-6)
    grid = cfg.grid()
    b, k = np.full(grid.size, 0.6), np.full(grid.size, 3.0)
    quiet = np.full(grid.size, 0.001)
    J, Jd = cost_from_trajectory(grid, b, k, quiet, cfg)
    assert J == pytest.approx(0.5 * 10.0 * (0.2 * 0.16 + 0.2 * 4.0))
    assert Jd - J == pytest.approx(1e-3 * 2 * (grid.size - 1) * 1e-3)
    ones = np.ones(grid.size)
    busy = np.full(grid.size, 0.2)
    J, _ = cost_from_trajectory(grid, ones, ones, busy, cfg)
    hosp, cap = 0.2 / 0.025 - 1.0, 0.2 / 0.1 - 1.0
    assert J == pytest.approx(0.5 * 10.0 * (0.6 * hosp ** 2 + cap ** 2 / 1e-2))


def test_identity_control_on_zero_network_costs_only_tv():
    cfg = OcpConfig(t_horizon=40.0)
    J, Jd = cost(constant_schedule(cfg.t_c, cfg.t_horizon, cfg.dt), cfg, ZERO)
    assert J == 0.0
    assert Jd == pytest.approx(cfg.delta * 2 * (cfg.grid().size - 1) * math.sqrt(cfg.eta))


def test_adjoint_vanishes_below_thresholds():
    cfg = small_config(i_c=0.005)
    sched = constant_schedule(0.0, 30.0, 1.0)
    fw = forward(sched, cfg, ZERO)
    assert fw.i.max() < cfg.i_hosp
    adj, C = adjoint_solve(fw, sched, cfg, ZERO)
    for arr in (adj.p1, adj.q1, adj.p2, adj.q2, C):
        assert np.all(arr == 0)


def test_zero_network_adjoint_recursion():
    cfg = small_config(i_c=0.05, t_horizon=20.0, dt_int=0.5)
    sched = constant_schedule(0.0, 20.0, 1.0)
    fw = forward(sched, cfg, ZERO)
    adj, _ = adjoint_solve(fw, sched, cfg, ZERO)
    # RK4 on I' = -gamma I multiplies by R(z) per sub-step
    z = -cfg.gamma * 0.5
    amp = (1 + z + z * z / 2 + z ** 3 / 6 + z ** 4 / 24) ** 2
    w = quadrature_weights(fw.grid)
    hosp = np.maximum(fw.i / cfg.i_hosp - 1.0, 0.0)
    cap = np.maximum(fw.i / cfg.i_max - 1.0, 0.0)
    src = w * (cfg.omega_hosp * hosp / cfg.i_hosp + cap / (cfg.epsilon * cfg.i_max))
    q = np.zeros(fw.grid.size)
    for m in range(fw.grid.size - 2, -1, -1):
        q[m] = amp * (src[m + 1] + q[m + 1])
    np.testing.assert_allclose(adj.q1, q, rtol=1e-12, atol=1e-14)
    np.testing.assert_array_equal(adj.p1, 0.0)
    assert np.any(q > 0)


def fd_gradient(sched, cfg, model, h=1e-6):
    g_b, g_k = np.empty(sched.grid.size), np.empty(sched.grid.size)
    for arr, out in ((sched.b_values, g_b), (sched.k_values, g_k)):
        for j in range(arr.size):
            old = arr[j]
            arr[j] = old + h
            up = cost(sched, cfg, model)[1]
            arr[j] = old - h
            down = cost(sched, cfg, model)[1]
            arr[j] = old
            out[j] = (up - down) / (2 * h)
    return g_b, g_k


@pytest.mark.parametrize("which", ["zero", "sir", "trained"])
def test_gradient_matches_finite_differences(which, small_net):
    model = {"zero": ZERO, "sir": SIR, "trained": small_net}[which]
    cfg = small_config(beta0=0.6, kappa0=2.0, delta=1e-3, eta=1e-4)
    rng = np.random.default_rng(0)
    grid = cfg.grid()
    worst = 0.0
    for _ in range(20):
        sched = ControlSchedule(grid, rng.uniform(0.2, 0.95, grid.size), rng.uniform(1.2, 9.0, grid.size))
        exact = np.concatenate(gradient(sched, cfg, model))
        errs = []
        # a ReLU kink inside the stencil spoils one step size but not both
        for h in (1e-6, 1e-7):
            approx = np.concatenate(fd_gradient(sched, cfg, model, h))
            errs.append(np.abs(exact - approx).max() / max(1e-8, np.abs(approx).max()))
            if errs[-1] < 1e-5:
                break
        worst = max(worst, min(errs))
    assert worst < 1e-5


def test_zero_network_gradient_density():
    cfg = small_config(delta=0.0)
    grid = cfg.grid()
    rng = np.random.default_rng(1)
    b, k = rng.uniform(0.1, 1.0, grid.size), rng.uniform(1.0, 10.0, grid.size)
    g_b, g_k = gradient(ControlSchedule(grid, b, k), cfg, ZERO)
    w = quadrature_weights(grid)
    np.testing.assert_allclose(g_b / w, cfg.omega_beta * (b - 1.0), rtol=1e-14)
    np.testing.assert_allclose(g_k / w, cfg.omega_kappa * (k - 1.0), rtol=1e-14)
    g_b, g_k = gradient(constant_schedule(0.0, 30.0, 1.0), cfg, ZERO)
    assert np.all(g_b == 0) and np.all(g_k == 0)


def test_golden_section_quadratic():
    calls = []

    def phi(x):
        calls.append(x)
        return (x - 0.3) ** 2

    x, fx, n = golden_section(phi, 0.0, 1.0, 1e-6)
    assert abs(x - 0.3) < 1e-6 and fx == pytest.approx((x - 0.3) ** 2)
    assert n == len(calls)
    # bracket shrinks by 1/phi per evaluation after the first two
    assert n <= math.ceil(math.log(1e-6) / math.log((math.sqrt(5) - 1) / 2)) + 1
    calls.clear()
    x, _, n = golden_section(phi, 0.0, 1.0, 1e-9, max_evals=10)
    assert n == len(calls) == 10
    x, _, n = golden_section(phi, 0.0, 1e-9, 1e-6)
    assert n == 1 and x == pytest.approx(5e-10)


def test_line_search_grows_and_rejects():
    cfg = OcpConfig()
    rho, val = line_search(lambda r: (r - 5.0) ** 2, 25.0, cfg)
    assert rho == pytest.approx(5.0, abs=0.02) and val < 25.0
    rho, val = line_search(lambda r: 1.0 + r, 1.0, cfg)
    assert rho == 0.0 and val == 1.0
    rho, val = line_search(lambda r: (r - 1e-4) ** 2, 1e-8, cfg)
    assert 0 < rho < 1e-3 and val < 1e-8


def test_solve_zero_network_reaches_identity():
    cfg = small_config(delta=0.0)
    grid = cfg.grid()
    start = ControlSchedule(grid, np.full(grid.size, 0.5), np.full(grid.size, 3.0))
    res = solve(cfg, ZERO, start, n_g=20, tau_g=1e-14)
    assert res.n_iter <= 20
    np.testing.assert_allclose(res.schedule.b_values, 1.0, atol=1e-6)
    np.testing.assert_allclose(res.schedule.k_values, 1.0, atol=1e-6)


def test_solve_descends_and_stays_feasible():
    cfg = small_config(beta0=0.5, n_g=8)
    seen = []
    res = solve(cfg, SIR, callback=lambda p, s, j: seen.append((p, s, j)))
    assert len(seen) == res.n_iter == len(res.rhos) == len(res.costs) - 1
    assert all(b <= a + 1e-12 for a, b in zip(res.costs, res.costs[1:]))
    assert res.costs[-1] < res.costs[0]
    for p, sched, j in seen:
        assert sched.is_feasible(cfg.b_min, cfg.k_max)
        assert j == res.costs[p]
    assert not np.allclose(res.schedule.b_values, 1.0)


def test_initial_state_and_errors():
    cfg = OcpConfig(t_c=1.0)
    s, i = initial_state(ZERO, cfg, 0.9995, 0.0005)
    assert s == 0.9995 and i == pytest.approx(0.0005 * math.exp(-cfg.gamma), rel=1e-9)
    assert initial_state(ZERO, cfg.replace(t_c=0.0), 0.9, 0.1) == (0.9, 0.1)
    with pytest.raises(ValueError):
        OcpConfig(b_min=0.0)
    with pytest.raises(ValueError):
        OcpConfig(i_hosp=0.2, i_max=0.1)
    bad = constant_schedule(cfg.t_c, cfg.t_horizon, cfg.dt, b=0.05)
    with pytest.raises(ValueError):
        solve(cfg, ZERO, bad)
    with pytest.raises(ValueError):
        solve(cfg, ZERO, constant_schedule(0.0, 5.0, 1.0))
