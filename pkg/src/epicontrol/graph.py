"""Heterogeneous contact graphs.

Degrees follow the Polya (negative binomial) law with mean ``alpha`` and
variance ``alpha + alpha**2 / kappa``; edges come from the configuration
model with erased self-loops and multi-edges.
"""
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_positive, check_seed

__all__ = [
    "DegreeParams",
    "ContactGraph",
    "sample_degrees",
    "build_graph",
    "random_graph",
    "write_edgelist",
    "read_edgelist",
]


@dataclass(frozen=True)
class DegreeParams:
    """Mean contact number, dispersion coefficient and population size."""

    alpha: float = 10.0
    kappa: float = 1.0
    n_nodes: int = 1000

    def __post_init__(self):
        check_positive(self.alpha, "alpha")
        check_positive(self.kappa, "kappa")
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 1:
            raise ValueError(f"n_nodes must be a positive integer, got {self.n_nodes!r}")


@dataclass(frozen=True, eq=False)
class ContactGraph:
    """Undirected simple graph in compressed sparse row form.

    ``indices[indptr[i]:indptr[i + 1]]`` are the sorted neighbours of node
    ``i``. The construction counters record how far the realized degrees
    drift from the requested ones.
    """

    n_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    alpha: float
    seed: int | None = None
    target_degrees: np.ndarray | None = field(default=None, repr=False)
    n_capped: int = 0
    odd_correction: int = 0
    n_erased_self: int = 0
    n_erased_multi: int = 0

    @property
    def realized_degrees(self):
        return np.diff(self.indptr)

    @property
    def n_edges(self):
        return int(self.indices.size // 2)

    @property
    def adjacency(self):
        return [self.indices[self.indptr[i]:self.indptr[i + 1]] for i in range(self.n_nodes)]

    def neighbors(self, node):
        return self.indices[self.indptr[node]:self.indptr[node + 1]]

    def edges(self):
        """Edge array of shape ``(n_edges, 2)`` with ``i < j``, sorted."""
        rows = np.repeat(np.arange(self.n_nodes), self.realized_degrees)
        mask = rows < self.indices
        return np.column_stack([rows[mask], self.indices[mask]])

    def same_edges(self, other):
        return (self.n_nodes == other.n_nodes
                and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))


def sample_degrees(params, rng_seed):
    """Draw ``params.n_nodes`` i.i.d. Polya degrees.

    Uses the gamma-Poisson mixture: a contact rate is drawn from
    ``Gamma(kappa, alpha / kappa)`` and the degree from a Poisson law with
    that rate.
    """
    if not isinstance(params, DegreeParams):
        raise TypeError("params must be a DegreeParams")
    rng = np.random.default_rng(check_seed(rng_seed))
    rates = rng.gamma(params.kappa, params.alpha / params.kappa, size=params.n_nodes)
    return rng.poisson(rates).astype(np.int64)


def _csr_from_pairs(n_nodes, a, b):
    rows = np.concatenate([a, b])
    cols = np.concatenate([b, a])
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_nodes), out=indptr[1:])
    return indptr, cols.astype(np.int64)


def build_graph(degrees, rng_seed, alpha=None):
    """Configuration-model graph for a prescribed degree sequence.

    Stubs are paired uniformly at random. Self-loops and repeated pairs are
    erased. An odd stub total gets one extra stub on a random node, and
    degrees above ``n - 1`` are capped first.

    Parameters
    ----------
    degrees : array-like of int
        Requested degree of each node.
    rng_seed : int
    alpha : float, optional
        Nominal mean contact number stored on the graph (it sets the
        per-edge transmission rate). Defaults to the mean requested degree.
    """
    seed = check_seed(rng_seed)
    degrees = np.asarray(degrees)
    if degrees.ndim != 1:
        raise ValueError("degrees must be one-dimensional")
    if degrees.size and degrees.min() < 0:
        raise ValueError("degrees must be non-negative")
    n = int(degrees.size)
    target = degrees.astype(np.int64)
    if alpha is None:
        alpha = float(target.mean()) if n else 0.0

    rng = np.random.default_rng(seed)
    cap = max(n - 1, 0)
    n_capped = int(np.count_nonzero(target > cap))
    stubs_per_node = np.minimum(target, cap)
    capped_target = stubs_per_node.copy()

    odd = int(stubs_per_node.sum() % 2)
    if odd:
        stubs_per_node[rng.integers(n)] += 1

    stubs = rng.permutation(np.repeat(np.arange(n, dtype=np.int64), stubs_per_node))
    u, v = stubs[0::2], stubs[1::2]
    loops = u == v
    a = np.minimum(u[~loops], v[~loops])
    b = np.maximum(u[~loops], v[~loops])
    keys = np.unique(a * max(n, 1) + b)
    n_multi = int(a.size - keys.size)
    a, b = keys // max(n, 1), keys % max(n, 1)
    indptr, indices = _csr_from_pairs(n, a, b)
    return ContactGraph(
        n_nodes=n,
        indptr=indptr,
        indices=indices,
        alpha=float(alpha),
        seed=seed,
        target_degrees=capped_target,
        n_capped=n_capped,
        odd_correction=odd,
        n_erased_self=int(np.count_nonzero(loops)),
        n_erased_multi=n_multi,
    )


def random_graph(params, rng_seed):
    """Sample degrees and wire them; both steps draw from ``rng_seed``."""
    degree_seed, wiring_seed = np.random.SeedSequence(check_seed(rng_seed)).generate_state(2)
    degrees = sample_degrees(params, int(degree_seed))
    return build_graph(degrees, int(wiring_seed), alpha=params.alpha)


def write_edgelist(graph, path):
    edges = graph.edges()
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# n_nodes {graph.n_nodes}\n")
        fh.write(f"# seed {graph.seed if graph.seed is not None else -1}\n")
        fh.write(f"# alpha {graph.alpha!r}\n")
        for i, j in edges:
            fh.write(f"{i} {j}\n")


def read_edgelist(path):
    header = {}
    pairs = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(" ")
                header[key] = value.strip()
                continue
            i, j = line.split()
            pairs.append((int(i), int(j)))
    if "n_nodes" not in header:
        raise ValueError(f"{path}: missing '# n_nodes' header")
    n = int(header["n_nodes"])
    seed = int(header.get("seed", -1))
    edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise ValueError(f"{path}: node index out of range")
    a, b = np.minimum(edges[:, 0], edges[:, 1]), np.maximum(edges[:, 0], edges[:, 1])
    if np.any(a == b):
        raise ValueError(f"{path}: self-loop in edge list")
    indptr, indices = _csr_from_pairs(n, a, b)
    if np.any(np.diff(indices)[np.diff(np.repeat(np.arange(n), np.diff(indptr))) == 0] == 0):
        raise ValueError(f"{path}: duplicate edge in edge list")
    return ContactGraph(
        n_nodes=n,
        indptr=indptr,
        indices=indices,
        alpha=float(header.get("alpha", "nan")),
        seed=None if seed < 0 else seed,
    )
