"""Soft harmonic solution on a similarity graph and the SoftHAD anomaly score.

The soft labels minimise

    (l - y)' C (l - y) + l' (L + gamma_g I) l

with ``C = diag(empirical_weights)``. The minimiser solves the SPD system
``(L + gamma_g I + C) l = C y``, which is what :func:`solve_soft_harmonic`
iterates on; :func:`closed_form_oracle` evaluates ``(C^-1 K + I)^-1 y`` densely
as an independent check. The anomaly score of node ``i`` is ``|l_i - y_i|``.
"""

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError, HarmonicError
from .graph import laplacian

DENSE_GUARD = 2000
SCALE_EPS = 1e-12
# iterations without progress before the error-bound phase gives up
STALL_ITER = 50


@dataclass(frozen=True)
class HarmonicConfig:
    """Parameters of the soft harmonic solve.

    ``c_u`` defaults to ``c_l``; ``solver_max_iter`` defaults to ten times the
    node count of the system being solved.
    """

    c_l: float = 1.0
    c_u: float = None
    gamma_g: float = 1.0
    solver_tol: float = 1e-10
    solver_max_iter: int = None
    graph_k: int = 75
    multiplicity_weighting: bool = True
    include_recent_edges: bool = False

    def __post_init__(self):
        if self.c_u is None:
            object.__setattr__(self, "c_u", self.c_l)
        if not self.c_l > 0:
            raise HarmonicError("c_l must be positive")
        if not self.c_u >= 0:
            raise HarmonicError("c_u must be non-negative")
        if not self.gamma_g >= 0:
            raise HarmonicError("gamma_g must be non-negative")
        if not self.solver_tol > 0:
            raise HarmonicError("solver_tol must be positive")
        if self.solver_max_iter is not None and self.solver_max_iter < 1:
            raise HarmonicError("solver_max_iter must be at least 1")
        if self.graph_k < 1:
            raise HarmonicError("graph_k must be at least 1")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SoftLabels:
    ell: np.ndarray
    confidence: np.ndarray
    predicted_sign: np.ndarray
    iterations: int = 0
    residual: float = 0.0

    @classmethod
    def from_ell(cls, ell, iterations=0, residual=0.0):
        ell = np.asarray(ell, dtype=float)
        return cls(ell, np.abs(ell), np.sign(ell), iterations, residual)


@dataclass
class AnomalyReport:
    """Raw and min-max scaled anomaly scores for a set of nodes.

    ``calibration`` is the ``(min, max)`` of the training scores the scaled
    scores were computed against.
    """

    raw_score: np.ndarray
    scaled_score: np.ndarray = None
    calibration: tuple = None
    node_ids: np.ndarray = None
    train_raw_score: np.ndarray = None
    method: str = "softhad"
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.raw_score = np.asarray(self.raw_score, dtype=float)
        if self.node_ids is None:
            self.node_ids = np.arange(self.raw_score.size)

    def ranking(self):
        """Node ids ordered from most to least anomalous."""
        key = self.scaled_score if self.scaled_score is not None else self.raw_score
        order = np.lexsort((self.raw_score, key))[::-1]
        return np.asarray(self.node_ids)[order]

    def write_csv(self, path):
        scaled = self.scaled_score if self.scaled_score is not None else [""] * self.raw_score.size
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["node_id", "raw_score", "scaled_score"])
            for nid, raw, sc in zip(np.asarray(self.node_ids).tolist(), self.raw_score.tolist(), list(scaled)):
                out.writerow([nid, repr(float(raw)), "" if sc == "" else repr(float(sc))])

    def to_json(self, provenance=None):
        doc = {
            "method": self.method,
            "calibration": None if self.calibration is None else [float(c) for c in self.calibration],
            "config": self.config,
            "node_ids": np.asarray(self.node_ids).tolist(),
            "raw_score": self.raw_score.tolist(),
            "scaled_score": None if self.scaled_score is None else np.asarray(self.scaled_score).tolist(),
        }
        if provenance is not None:
            doc["provenance"] = provenance
        return doc

    def write_json(self, path, provenance=None):
        with open(path, "w") as fh:
            json.dump(self.to_json(provenance), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _check_inputs(graph, y, weights):
    y = np.asarray(y, dtype=float)
    c = np.broadcast_to(np.asarray(weights, dtype=float), y.shape).astype(float)
    if y.ndim != 1 or y.size != graph.node_count:
        raise HarmonicError(f"target length {y.size} differs from node count {graph.node_count}")
    if np.any(np.abs(y) > 1):
        raise HarmonicError("pseudo-targets must lie in [-1, 1]")
    if np.any(~(c > 0)):
        raise HarmonicError("empirical weights must be positive")
    return y, c


def system_matrix(graph, weights, gamma_g):
    """Sparse SPD matrix ``L + gamma_g I + C``."""
    return (laplacian(graph).to_sparse() + sp.diags(gamma_g + np.asarray(weights, float))).tocsr()


def conjugate_gradient(A, b, diag, tol, max_iter, eig_floor=None):
    """Jacobi-preconditioned conjugate gradients for an SPD ``A``.

    Converged once ``||b - A x|| <= tol * ||b||``. When ``eig_floor``, a lower
    bound on the smallest eigenvalue of ``A``, is given, iteration continues
    until the forward error bound ``||b - A x|| / eig_floor`` is also below
    ``tol``; if the true residual stops improving first, the best iterate
    meeting the residual goal is returned. Returns ``(x,
    iterations, relative_residual)``.
    """
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return x, 0, 0.0
    r = b.copy()
    z = r / diag
    p = z.copy()
    rz = r @ z
    res = 1.0
    best = None
    for it in range(1, max_iter + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            # guard against drift of the recursive residual
            true_r = b - A @ x
            tnorm = np.linalg.norm(true_r)
            if tnorm <= tol * bnorm:
                if eig_floor is None or tnorm <= tol * eig_floor:
                    return x, it, tnorm / bnorm
                if best is None or tnorm / bnorm < best[2]:
                    best = (x.copy(), it, tnorm / bnorm)
                elif it - best[1] >= STALL_ITER:
                    return best
            else:
                res = tnorm / bnorm
                r = true_r
                z = r / diag
                p = z.copy()
                rz = r @ z
                continue
        z = r / diag
        rz_new = r @ z
        if rz_new == 0:
            break
        p = z + (rz_new / rz) * p
        rz = rz_new
    if best is not None:
        return best
    raise ConvergenceError(
        f"conjugate gradients did not reach relative residual {tol:g} in "
        f"{max_iter} iterations (final {res:.3e})",
        residual=res,
        iterations=max_iter,
    )


def solve_soft_harmonic(graph, y, empirical_weights, cfg):
    """Soft labels from ``(L + gamma_g I + C) l = C y``.

    Nodes without edges decouple and are solved in closed form,
    ``l_i = c_i y_i / (c_i + gamma_g)``; the remaining block goes through
    :func:`conjugate_gradient`.
    """
    y, c = _check_inputs(graph, y, empirical_weights)
    ell = np.zeros_like(y)
    iso = graph.degrees == 0
    ell[iso] = c[iso] * y[iso] / (c[iso] + cfg.gamma_g)
    live = np.flatnonzero(~iso)
    iters, res = 0, 0.0
    if live.size:
        A = system_matrix(graph, c, cfg.gamma_g)[live][:, live]
        b = c[live] * y[live]
        max_iter = cfg.solver_max_iter or 10 * live.size
        # A >= (gamma_g + min c) I bounds the error of the soft labels
        floor = cfg.gamma_g + c[live].min()
        ell[live], iters, res = conjugate_gradient(A, b, A.diagonal(), cfg.solver_tol, max_iter, floor)
    return SoftLabels.from_ell(ell, iters, res)


def closed_form_oracle(graph, y, empirical_weights, cfg):
    """Dense ``(C^-1 K + I)^-1 y`` with ``K = L + gamma_g I``."""
    y, c = _check_inputs(graph, y, empirical_weights)
    n = graph.node_count
    if n > DENSE_GUARD:
        raise HarmonicError(f"dense oracle limited to {DENSE_GUARD} nodes, got {n}")
    K = laplacian(graph).to_dense() + cfg.gamma_g * np.eye(n)
    M = K / c[:, None] + np.eye(n)
    return SoftLabels.from_ell(np.linalg.solve(M, y))


def objective_value(graph, y, empirical_weights, cfg, ell):
    y = np.asarray(y, dtype=float)
    ell = np.asarray(ell, dtype=float)
    c = np.broadcast_to(np.asarray(empirical_weights, dtype=float), y.shape)
    diff = ell - y
    return float(diff @ (c * diff) + laplacian(graph).quadratic_form(ell) + cfg.gamma_g * ell @ ell)


def anomaly_scores(soft, y_observed, node_ids=None):
    ell = soft.ell if isinstance(soft, SoftLabels) else np.asarray(soft, dtype=float)
    y = np.asarray(y_observed, dtype=float)
    if y.shape != ell.shape:
        raise HarmonicError("label and soft-label lengths differ")
    return AnomalyReport(np.abs(ell - y), node_ids=node_ids)


def fit_scaling(train_scores):
    s = np.asarray(train_scores, dtype=float)
    if s.size == 0:
        raise HarmonicError("cannot calibrate on an empty score set")
    return float(s.min()), float(s.max())


def apply_scaling(scores, calibration):
    """Map scores linearly so the calibration range becomes [0, 1], clamping
    anything outside it. A degenerate range maps everything to 0."""
    lo, hi = calibration
    s = np.asarray(scores, dtype=float)
    if hi - lo < SCALE_EPS:
        return np.zeros_like(s)
    return np.clip((s - lo) / (hi - lo), 0.0, 1.0)


def backbone_weights(bb, cfg):
    if cfg.multiplicity_weighting:
        return cfg.c_l * bb.multiplicity.astype(float)
    return np.full(bb.size, cfg.c_l)


def score_recent(bb, recent, recent_labels, cfg, mode="withheld", node_ids=None):
    """Score recent instances against a backbone.

    In ``withheld`` mode recent nodes enter the solve with pseudo-target 0 and
    weight ``c_u``; in ``included`` mode with their observed label and weight
    ``c_l``. Scaled scores use the min/max of the training instances' own
    scores, ``|l[centroid(i)] - y_i|``.
    """
    from .backbone import attach_recent

    if mode not in ("withheld", "included"):
        raise HarmonicError(f"unknown scoring mode {mode!r}")
    R = np.atleast_2d(np.asarray(recent, dtype=float))
    labels = np.asarray(recent_labels, dtype=float)
    if labels.shape != (R.shape[0],):
        raise HarmonicError("recent labels do not match recent rows")
    if not np.all((labels == 1) | (labels == -1)):
        raise HarmonicError("recent labels must be -1 or +1")
    g = attach_recent(bb, R, cfg.graph_k, include_recent_edges=cfg.include_recent_edges)
    k = bb.size
    if mode == "withheld":
        y_rec = np.zeros_like(labels)
        c_rec = np.full(labels.size, cfg.c_u)
    else:
        y_rec = labels
        c_rec = np.full(labels.size, cfg.c_l)
    y = np.concatenate([bb.pseudo_target, y_rec])
    c = np.concatenate([backbone_weights(bb, cfg), c_rec])
    soft = solve_soft_harmonic(g, y, c, cfg)
    raw = np.abs(soft.ell[k:] - labels)
    train = np.abs(soft.ell[bb.assignment] - bb.instance_labels)
    calib = fit_scaling(train)
    return AnomalyReport(
        raw_score=raw,
        scaled_score=apply_scaling(raw, calib),
        calibration=calib,
        node_ids=node_ids,
        train_raw_score=train,
        config=dict(cfg.to_dict(), mode=mode, sigma=g.sigma, backbone_size=k),
    )


def score_backbone(bb, cfg):
    """Transductive scores of the quantized training instances themselves.

    Every instance is scored as ``|l[centroid(i)] - y_i|`` from a solve over
    the backbone graph alone; scaling is calibrated on these same scores.
    """
    if bb.graph is None:
        raise HarmonicError("backbone graph has not been built")
    soft = solve_soft_harmonic(bb.graph, bb.pseudo_target, backbone_weights(bb, cfg), cfg)
    raw = np.abs(soft.ell[bb.assignment] - bb.instance_labels)
    calib = fit_scaling(raw)
    return AnomalyReport(
        raw_score=raw,
        scaled_score=apply_scaling(raw, calib),
        calibration=calib,
        node_ids=bb.instance_index,
        train_raw_score=raw,
        config=dict(cfg.to_dict(), mode="included", sigma=bb.graph.sigma, backbone_size=bb.size),
    )
