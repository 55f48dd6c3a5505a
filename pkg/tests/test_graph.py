import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epicontrol.graph import (DegreeParams, build_graph, random_graph, read_edgelist,
                              sample_degrees, write_edgelist)


def assert_simple(graph):
    adj = graph.adjacency
    for i, nbrs in enumerate(adj):
        assert i not in nbrs
        assert np.unique(nbrs).size == nbrs.size
        assert np.all(np.diff(nbrs) > 0)
        for j in nbrs:
            assert i in adj[j]
    assert np.array_equal(graph.realized_degrees, [len(a) for a in adj])


def moment_ses(x):
    n = x.size
    m, var = x.mean(), x.var(ddof=1)
    m4 = np.mean((x - m) ** 4)
    return m, var, np.sqrt(var / n), np.sqrt((m4 - var ** 2) / n)


@pytest.mark.parametrize("alpha,kappa", [(5.0, 0.5), (5.0, 2.0)])
def test_polya_moments_within_three_se(alpha, kappa):
    x = sample_degrees(DegreeParams(alpha, kappa, 400_000), 5).astype(float)
    m, var, se_m, se_v = moment_ses(x)
    assert abs(m - alpha) < 3 * se_m
    assert abs(var - (alpha + alpha ** 2 / kappa)) < 3 * se_v


def test_polya_tiny_alpha_gives_zero_degrees():
    assert not sample_degrees(DegreeParams(1e-12, 1.0, 1000), 0).any()


def test_sample_degrees_deterministic():
    p = DegreeParams(10.0, 0.8, 500)
    assert np.array_equal(sample_degrees(p, 3), sample_degrees(p, 3))
    assert not np.array_equal(sample_degrees(p, 3), sample_degrees(p, 4))


@pytest.mark.parametrize("kwargs", [dict(alpha=0.0), dict(kappa=-1.0), dict(alpha=float("nan")),
                                    dict(n_nodes=0)])
def test_degree_params_reject_invalid(kwargs):
    with pytest.raises(ValueError):
        DegreeParams(**kwargs)


def test_pair_of_unit_degrees_gives_single_edge():
    g = build_graph([1, 1], 0)
    assert g.n_edges == 1
    assert g.edges().tolist() == [[0, 1]]


def test_zero_degrees_give_empty_graph():
    g = build_graph(np.zeros(7, dtype=int), 0)
    assert g.n_edges == 0 and g.indices.size == 0


def test_odd_stub_sum_gets_one_extra_stub():
    g = build_graph([1, 1, 1], 2)
    assert g.odd_correction == 1
    assert_simple(g)


def test_degrees_capped_at_n_minus_one():
    g = build_graph([10, 1, 1], 0)
    assert g.n_capped == 1
    assert g.realized_degrees.max() <= 2


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 12), min_size=1, max_size=60), st.integers(0, 2 ** 31))
def test_configuration_model_is_simple_and_accounted(degrees, seed):
    g = build_graph(degrees, seed)
    assert_simple(g)
    deficit = int(g.target_degrees.sum() - g.realized_degrees.sum())
    assert deficit + g.odd_correction == 2 * (g.n_erased_self + g.n_erased_multi)


def test_degree_fidelity_at_scale():
    g = random_graph(DegreeParams(10.0, 1.0, 5000), 9)
    assert_simple(g)
    lost = int(g.target_degrees.sum() - g.realized_degrees.sum())
    assert 0 <= lost + g.odd_correction < 0.01 * g.target_degrees.sum()


def test_realized_mean_degree_within_two_percent():
    means = [random_graph(DegreeParams(5.0, 1.0, 10_000), s).realized_degrees.mean() for s in range(20)]
    assert abs(np.mean(means) - 5.0) < 0.02 * 5.0


def test_random_graph_deterministic():
    p = DegreeParams(6.0, 0.5, 800)
    assert random_graph(p, 1).same_edges(random_graph(p, 1))
    assert not random_graph(p, 1).same_edges(random_graph(p, 2))


def test_edgelist_round_trip(tmp_path):
    g = random_graph(DegreeParams(4.0, 2.0, 300), 12)
    path = tmp_path / "g.txt"
    write_edgelist(g, path)
    h = read_edgelist(path)
    assert h.same_edges(g) and h.seed == g.seed and h.alpha == g.alpha
