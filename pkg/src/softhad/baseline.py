"""Weighted k-NN conditional anomaly detector using the same Gaussian
similarity as the graph methods.

The soft label of a query is the weight-averaged label of its ``k`` nearest
reference instances; the anomaly score is ``|soft_label - y_observed|``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .data import FeatureWeights
from .errors import BaselineError
from .graph import _psi_vector, gaussian_weight
from .harmonic import AnomalyReport


@dataclass(frozen=True)
class KnnModel:
    """Reference instances for the weighted vote.

    ``labels`` are usually ±1; backbone pseudo-targets in [-1, 1] are accepted
    so the baseline can run over the same centroid set as SoftHAD.
    """

    features: np.ndarray
    labels: np.ndarray
    k: int
    psi: FeatureWeights
    sigma: float

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.features, dtype=float))
        y = np.asarray(self.labels, dtype=float)
        if X.shape[0] == 0 or y.size == 0:
            raise BaselineError("empty reference set")
        if y.shape != (X.shape[0],):
            raise BaselineError("reference labels do not match reference rows")
        if np.any(np.abs(y) > 1):
            raise BaselineError("reference labels must lie in [-1, 1]")
        if not 1 <= self.k <= X.shape[0]:
            raise BaselineError(f"k={self.k} must be in [1, {X.shape[0]}]")
        if not self.sigma > 0:
            raise BaselineError("sigma must be positive")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def reference_count(self):
        return self.features.shape[0]


def knn_soft_labels(model, queries, exclude=None):
    """Vectorised soft labels for many queries.

    ``exclude[q]`` is a reference index that query ``q`` must not use as a
    neighbour (leave-one-out when scoring the references themselves), or -1.
    Neighbour ties go to the lower reference index.
    """
    Q = np.atleast_2d(np.asarray(queries, dtype=float))
    w = _psi_vector(model.psi, model.features.shape[1])
    D = cdist(Q, model.features, "sqeuclidean", w=w)
    k = model.k
    if exclude is not None:
        exclude = np.asarray(exclude, dtype=int)
        hit = exclude >= 0
        D[np.flatnonzero(hit), exclude[hit]] = np.inf
        if hit.any() and k > model.reference_count - 1:
            raise BaselineError("leave-one-out needs k smaller than the reference count")
    nbr = np.argsort(D, axis=1, kind="stable")[:, :k]
    wts = gaussian_weight(np.take_along_axis(D, nbr, axis=1), model.sigma)
    total = wts.sum(axis=1)
    votes = (wts * model.labels[nbr]).sum(axis=1)
    out = np.zeros(Q.shape[0])
    ok = total > 0
    out[ok] = votes[ok] / total[ok]
    return np.clip(out, -1.0, 1.0)


def knn_soft_label(model, query, exclude=None):
    ex = None if exclude is None else [exclude]
    return float(knn_soft_labels(model, np.atleast_2d(query), ex)[0])


def knn_anomaly_score(model, query, y_observed, exclude=None):
    if y_observed not in (1, -1):
        raise BaselineError("observed label must be -1 or +1")
    return abs(knn_soft_label(model, query, exclude) - y_observed)


def knn_report(model, queries, y_observed, exclude=None, node_ids=None):
    y = np.asarray(y_observed, dtype=float)
    soft = knn_soft_labels(model, queries, exclude)
    if y.shape != soft.shape:
        raise BaselineError("observed labels do not match queries")
    return AnomalyReport(np.abs(soft - y), node_ids=node_ids, method="wknn",
                         config={"k": model.k, "sigma": model.sigma})


def reference_scores(model):
    """Leave-one-out scores of the reference instances themselves."""
    n = model.reference_count
    return knn_report(model, model.features, model.labels, exclude=np.arange(n))
