"""Weighted k-NN similarity graphs with Gaussian weights and their Laplacian.

Edge weights are ``w_ij = exp(-d_psi(x_i, x_j) / sigma**2)`` where ``d_psi`` is
the feature-weighted squared Euclidean distance.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .data import Dataset, FeatureWeights
from .errors import GraphError

SIGMA_MODES = ("variance_sq", "variance", "fixed")
DEFAULT_PAIR_SAMPLE = 100_000


def _as_features(data):
    if isinstance(data, Dataset):
        return data.past_features
    X = np.asarray(data, dtype=float)
    return X.reshape(-1, 1) if X.ndim == 1 else X


def _psi_vector(psi, n_features):
    if psi is None:
        return np.ones(n_features)
    v = psi.psi if isinstance(psi, FeatureWeights) else np.asarray(psi, dtype=float)
    if v.shape != (n_features,):
        raise GraphError(f"feature weights have length {v.size}, expected {n_features}")
    return v


def weighted_distance_sq(a, b, psi=None):
    """Return ``sum_j psi_j * (a_j - b_j)**2``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise GraphError(f"row shapes differ: {a.shape} vs {b.shape}")
    w = _psi_vector(psi, a.size)
    return float(np.sum(w * (a - b) ** 2))


def pairwise_distance_sq(A, B, psi=None):
    """Matrix of feature-weighted squared distances between rows of A and B."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    w = _psi_vector(psi, A.shape[1])
    return cdist(A, B, metric="sqeuclidean", w=w)


def gaussian_weight(dist_sq, sigma):
    return np.exp(-np.asarray(dist_sq) / (sigma * sigma))


def choose_sigma(data, psi=None, mode="variance_sq", pair_sample=DEFAULT_PAIR_SAMPLE,
                 seed=0, value=None):
    """Kernel bandwidth from the spread of pairwise distances.

    ``variance_sq`` (default) sets ``sigma**2 = 0.1 * Var(d)`` where ``d`` are
    psi-weighted Euclidean distances between instance pairs; ``variance`` sets
    ``sigma = 0.1 * Var(d)``; ``fixed`` returns ``value``. All pairs are used
    when there are at most ``pair_sample`` of them, otherwise a seeded random
    sample of that size.
    """
    if mode not in SIGMA_MODES:
        raise GraphError(f"unknown sigma mode {mode!r}")
    if mode == "fixed":
        if value is None or not value > 0:
            raise GraphError("fixed sigma mode needs a positive value")
        return float(value)
    X = _as_features(data)
    n = X.shape[0]
    if n < 2:
        raise GraphError("need at least two instances to choose sigma")
    w = _psi_vector(psi, X.shape[1])
    n_pairs = n * (n - 1) // 2
    if n_pairs <= pair_sample:
        i, j = np.triu_indices(n, k=1)
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, size=pair_sample)
        j = rng.integers(0, n - 1, size=pair_sample)
        j = j + (j >= i)
    d = np.sqrt(np.sum(w * (X[i] - X[j]) ** 2, axis=1))
    var = float(np.var(d))
    if not np.any(d > 0) or var <= 0:
        raise GraphError("degenerate data: pairwise distances have no spread")
    if mode == "variance_sq":
        return math.sqrt(0.1 * var)
    return 0.1 * var


@dataclass(frozen=True)
class SimilarityGraph:
    """Symmetric sparse weight matrix over ``node_count`` nodes.

    ``weights`` is a CSR matrix with no diagonal and entries in (0, 1];
    ``degrees`` holds its row sums.
    """

    weights: sp.csr_matrix
    sigma: float

    def __post_init__(self):
        W = sp.csr_matrix(self.weights, dtype=float)
        W.sum_duplicates()
        W.eliminate_zeros()
        W.sort_indices()
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "degrees", np.asarray(W.sum(axis=1)).ravel())

    @property
    def node_count(self):
        return self.weights.shape[0]

    @property
    def edge_count(self):
        return self.weights.nnz // 2

    def neighbors(self, i):
        """(indices, weights) of node ``i``'s adjacency list."""
        W = self.weights
        lo, hi = W.indptr[i], W.indptr[i + 1]
        return W.indices[lo:hi], W.data[lo:hi]

    def edges(self):
        """Undirected edges ``(i, j, w)`` with ``i < j`` in row-major order."""
        coo = sp.triu(self.weights, k=1).tocsr().tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order], coo.col[order], coo.data[order]

    def to_dense(self):
        return self.weights.toarray()


class LaplacianView:
    """Matrix-free access to ``L = D - W`` of a similarity graph."""

    def __init__(self, graph):
        self.graph = graph
        self.shape = (graph.node_count, graph.node_count)

    def matvec(self, v):
        v = np.asarray(v, dtype=float)
        return self.graph.degrees * v - self.graph.weights @ v

    __matmul__ = matvec

    def quadratic_form(self, v):
        v = np.asarray(v, dtype=float)
        return float(v @ self.matvec(v))

    def to_dense(self):
        return np.diag(self.graph.degrees) - self.graph.to_dense()

    def to_sparse(self):
        return (sp.diags(self.graph.degrees) - self.graph.weights).tocsr()


def laplacian(graph):
    return LaplacianView(graph)


def knn_select(dist_sq, k, exclude_self=False):
    """Indices of the k smallest entries per row, ties to the lower column."""
    D = np.array(dist_sq, dtype=float)
    if exclude_self:
        np.fill_diagonal(D, np.inf)
    order = np.argsort(D, axis=1, kind="stable")
    return order[:, :k]


def _symmetrize_union(rows, cols, w, n):
    keep = w > 0
    A = sp.csr_matrix((w[keep], (rows[keep], cols[keep])), shape=(n, n))
    return A.maximum(A.T).tocsr()


def build_knn_graph(data, psi, k, sigma, chunk=2048):
    """k-NN graph with Gaussian weights, symmetrized by union.

    Each node selects its ``k`` nearest other nodes by psi-weighted distance
    (ties go to the lower index); an edge is kept when either endpoint selects
    it. Weights that underflow to zero are dropped.
    """
    X = _as_features(data)
    n = X.shape[0]
    if k < 1:
        raise GraphError("k must be at least 1")
    if k >= n:
        raise GraphError(f"k={k} must be smaller than the node count {n}")
    if not sigma > 0:
        raise GraphError("sigma must be positive")
    w = _psi_vector(psi, X.shape[1])
    rows, cols, vals = [], [], []
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        D = cdist(X[start:stop], X, metric="sqeuclidean", w=w)
        D[np.arange(stop - start), np.arange(start, stop)] = np.inf
        nbr = np.argsort(D, axis=1, kind="stable")[:, :k]
        d = np.take_along_axis(D, nbr, axis=1)
        rows.append(np.repeat(np.arange(start, stop), k))
        cols.append(nbr.ravel())
        vals.append(gaussian_weight(d.ravel(), sigma))
    W = _symmetrize_union(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), n)
    return SimilarityGraph(W, float(sigma))


def write_edge_list(graph, path):
    """Plain-text export: ``nodes N sigma s`` then one ``i j w`` line per edge."""
    i, j, w = graph.edges()
    with open(path, "w") as fh:
        fh.write(f"nodes {graph.node_count} sigma {graph.sigma!r}\n")
        for a, b, x in zip(i.tolist(), j.tolist(), w.tolist()):
            fh.write(f"{a} {b} {x!r}\n")


def read_edge_list(path):
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 4 or head[0] != "nodes" or head[2] != "sigma":
            raise GraphError(f"{path}: bad edge-list header")
        n, sigma = int(head[1]), float(head[3])
        rows, cols, vals = [], [], []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3:
                raise GraphError(f"{path}: line {lineno}: expected 'i j w'")
            a, b, x = int(parts[0]), int(parts[1]), float(parts[2])
            if not (0 <= a < n and 0 <= b < n) or a == b or not 0 < x <= 1:
                raise GraphError(f"{path}: line {lineno}: invalid edge")
            rows += [a, b]
            cols += [b, a]
            vals += [x, x]
    W = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return SimilarityGraph(W, sigma)
