"""Backbone graphs: quantize training instances into centroids and build the
similarity graph over the centroids instead of the raw instances.

Each centroid carries its cluster size (multiplicity) and the mean label of its
members (pseudo-target, in [-1, 1]).
"""

import csv
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .data import Dataset, FeatureWeights
from .errors import BackboneError, GraphError
from .graph import (
    SimilarityGraph,
    _psi_vector,
    _symmetrize_union,
    build_knn_graph,
    gaussian_weight,
)

KMEANS_MAX_ITER = 100


@dataclass(frozen=True)
class BackboneGraph:
    """Quantized training set.

    Attributes
    ----------
    centroids : (k, d) array
    multiplicity : (k,) int array, cluster sizes
    pseudo_target : (k,) array, mean member label per centroid
    instance_index : (m,) int array
        Row indices (into the quantized Dataset) of the instances that were
        quantized; all past rows unless class balancing subsampled them.
    assignment : (m,) int array
        Centroid of each entry of ``instance_index``.
    instance_labels : (m,) array of ±1
    graph : SimilarityGraph or None
        Filled in by :func:`backbone_graph`.
    """

    centroids: np.ndarray
    multiplicity: np.ndarray
    pseudo_target: np.ndarray
    instance_index: np.ndarray
    assignment: np.ndarray
    instance_labels: np.ndarray
    psi: FeatureWeights
    inertia_history: tuple = ()
    graph: SimilarityGraph = None

    @property
    def size(self):
        return self.centroids.shape[0]

    @property
    def sigma(self):
        return None if self.graph is None else self.graph.sigma

    def assignment_map(self):
        return dict(zip(self.instance_index.tolist(), self.assignment.tolist()))


def _d2_seed(X, k, w, rng):
    """Initial centres drawn with probability proportional to squared distance."""
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = cdist(X, X[chosen], "sqeuclidean", w=w).ravel()
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
        d2 = np.minimum(d2, cdist(X, X[[nxt]], "sqeuclidean", w=w).ravel())
    return X[chosen].copy()


def _reseed_empty(X, C, assign, dist, k):
    counts = np.bincount(assign, minlength=k)
    empty = np.flatnonzero(counts == 0)
    if empty.size == 0:
        return C, assign
    far = np.argsort(-dist, kind="stable")
    pos = 0
    for c in empty:
        while pos < far.size and counts[assign[far[pos]]] <= 1:
            pos += 1
        if pos == far.size:
            break
        p = far[pos]
        counts[assign[p]] -= 1
        assign[p] = c
        counts[c] = 1
        C[c] = X[p]
        pos += 1
    return C, assign


def kmeans(X, k, w, rng, max_iter=KMEANS_MAX_ITER):
    """Lloyd iterations under the psi-weighted squared distance.

    Returns ``(centroids, assignment, inertia_history)``. Stops when the
    assignment no longer changes or after ``max_iter`` iterations.
    """
    n = X.shape[0]
    C = _d2_seed(X, k, w, rng)
    rows = np.arange(n)
    assign = None
    history = []
    for _ in range(max_iter):
        D = cdist(X, C, "sqeuclidean", w=w)
        new = np.argmin(D, axis=1)
        if assign is not None:
            # keep the current cluster on exact ties so the objective cannot rise
            tie = D[rows, assign] <= D[rows, new]
            new[tie] = assign[tie]
        history.append(float(D[rows, new].sum()))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(C)
        np.add.at(sums, assign, X)
        nonempty = counts > 0
        C[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not nonempty.all():
            dist = cdist(X, C, "sqeuclidean", w=w)[rows, assign]
            C, assign = _reseed_empty(X, C, assign, dist, k)
    return C, assign, tuple(history)


def _pool(data, balanced, rng):
    y = data.past_labels
    idx = np.arange(data.n_past)
    if not balanced:
        return idx
    pos, neg = idx[y == 1], idx[y == -1]
    m = min(pos.size, neg.size)
    if m == 0:
        raise BackboneError("class balancing needs both classes among past instances")
    pos = rng.choice(pos, size=m, replace=False)
    neg = rng.choice(neg, size=m, replace=False)
    return np.sort(np.concatenate([pos, neg]))


def quantize(data, k, psi=None, balanced=False, seed=0, max_iter=KMEANS_MAX_ITER):
    """Compress the past instances of ``data`` into ``k`` centroids.

    With ``k`` equal to the number of pooled instances (or ``k=None``) the
    quantization is the identity: centroid ``c`` is pooled instance ``c``.
    """
    if not isinstance(data, Dataset):
        raise BackboneError("quantize expects a Dataset")
    rng = np.random.default_rng(seed)
    pool = _pool(data, balanced, rng)
    X = data.features[pool]
    y = data.labels[pool]
    n = X.shape[0]
    k = n if k is None else k
    if not 1 <= k <= n:
        raise BackboneError(f"backbone size k={k} must be in [1, {n}]")
    if psi is None:
        psi = FeatureWeights.uniform(data.n_features)
    w = _psi_vector(psi, data.n_features)
    if k == n:
        C, assign, history = X.copy(), np.arange(n), (0.0,)
    else:
        C, assign, history = kmeans(X, k, w, rng, max_iter)
    mult = np.bincount(assign, minlength=k)
    target = np.bincount(assign, weights=y, minlength=k) / np.maximum(mult, 1)
    return BackboneGraph(
        centroids=C,
        multiplicity=mult,
        pseudo_target=target,
        instance_index=pool,
        assignment=assign,
        instance_labels=y.copy(),
        psi=psi,
        inertia_history=history,
    )


def backbone_graph(bb, graph_k, sigma, psi=None):
    """Attach a k-NN similarity graph over the centroids."""
    psi = bb.psi if psi is None else psi
    if graph_k >= bb.size:
        raise BackboneError(f"graph_k={graph_k} must be smaller than backbone size {bb.size}")
    try:
        g = build_knn_graph(bb.centroids, psi, graph_k, sigma)
    except GraphError as exc:
        raise BackboneError(str(exc)) from exc
    return replace(bb, graph=g, psi=psi)


def attach_recent(bb, recent, graph_k, sigma=None, psi=None, include_recent_edges=False):
    """Augmented graph over ``[centroids; recent]``.

    Each recent instance links to its ``graph_k`` nearest centroids. With
    ``include_recent_edges`` it instead picks its ``graph_k`` nearest among all
    other nodes, recent ones included.
    """
    if bb.graph is None:
        raise BackboneError("backbone graph has not been built")
    sigma = bb.graph.sigma if sigma is None else sigma
    psi = bb.psi if psi is None else psi
    R = np.atleast_2d(np.asarray(recent, dtype=float))
    m = R.shape[0] if np.size(recent) else 0
    if m == 0:
        raise BackboneError("no recent instances to attach")
    if R.shape[1] != bb.centroids.shape[1]:
        raise BackboneError("recent rows have a different feature count than the backbone")
    k = bb.size
    w = _psi_vector(psi, R.shape[1])
    if include_recent_edges:
        cand = np.vstack([bb.centroids, R])
        limit = k + m - 1
    else:
        cand = bb.centroids
        limit = k
    if not 1 <= graph_k <= limit:
        raise BackboneError(f"graph_k={graph_k} must be in [1, {limit}]")
    D = cdist(R, cand, "sqeuclidean", w=w)
    if include_recent_edges:
        D[np.arange(m), k + np.arange(m)] = np.inf
    nbr = np.argsort(D, axis=1, kind="stable")[:, :graph_k]
    d = np.take_along_axis(D, nbr, axis=1)
    rows = np.repeat(k + np.arange(m), graph_k)
    n = k + m
    A = _symmetrize_union(rows, nbr.ravel(), gaussian_weight(d.ravel(), sigma), n)
    base = sp.block_diag([bb.graph.weights, sp.csr_matrix((m, m))], format="csr")
    return SimilarityGraph((base + A).tocsr(), float(sigma))


def save_backbone(bb, prefix):
    """Write ``<prefix>_centroids.csv`` and ``<prefix>_nodes.csv``.

    The first holds one centroid per row; the sidecar holds multiplicity and
    pseudo-target per centroid and, on a ``#`` comment line, the feature
    weights.
    """
    prefix = str(prefix)
    np.savetxt(prefix + "_centroids.csv", bb.centroids, delimiter=",", fmt="%.17g")
    with open(prefix + "_nodes.csv", "w", newline="") as fh:
        fh.write("# psi " + " ".join(repr(float(x)) for x in bb.psi.psi) + "\n")
        out = csv.writer(fh)
        out.writerow(["centroid", "multiplicity", "pseudo_target"])
        for c in range(bb.size):
            out.writerow([c, int(bb.multiplicity[c]), repr(float(bb.pseudo_target[c]))])


def load_backbone(prefix):
    """Inverse of :func:`save_backbone` (without the assignment or the graph)."""
    prefix = str(prefix)
    C = np.atleast_2d(np.loadtxt(prefix + "_centroids.csv", delimiter=","))
    with open(prefix + "_nodes.csv", newline="") as fh:
        first = fh.readline().split()
        if first[:2] != ["#", "psi"]:
            raise BackboneError(f"{prefix}_nodes.csv: missing psi line")
        psi = FeatureWeights(np.array([float(x) for x in first[2:]]))
        rows = list(csv.DictReader(fh))
    mult = np.array([int(r["multiplicity"]) for r in rows])
    target = np.array([float(r["pseudo_target"]) for r in rows])
    if C.shape[0] != len(rows):
        raise BackboneError("centroid and sidecar row counts differ")
    return BackboneGraph(
        centroids=C,
        multiplicity=mult,
        pseudo_target=target,
        instance_index=np.array([], int),
        assignment=np.array([], int),
        instance_labels=np.array([]),
        psi=psi,
    )
