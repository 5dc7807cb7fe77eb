"""Label-flip evaluation protocol, detection metrics and comparison runs."""

import csv
import io
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import rankdata

from .baseline import KnnModel, knn_report, reference_scores
from .data import Dataset, FeatureWeights, FlipRecord, inject_flips, standardize
from .errors import EvalError
from .harmonic import HarmonicConfig, score_backbone, score_recent
from .pipeline import fit_backbone

METHODS = ("softhad", "wknn")
METRICS = ("flip_auc", "concordance")


def flip_detection_auc(scores, flipped):
    """Area under the ROC curve of ``scores`` as a detector of flipped labels.

    Computed from the Mann-Whitney U statistic with average ranks, so tied
    scores contribute one half.
    """
    s = np.asarray(scores, dtype=float)
    f = np.asarray(flipped, dtype=bool)
    if s.shape != f.shape:
        raise EvalError("scores and flip mask differ in length")
    n_pos = int(f.sum())
    n_neg = f.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvalError("flip AUC needs both flipped and unflipped instances")
    ranks = rankdata(s)
    u = ranks[f].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def score_concordance(scores, true_scores):
    """Fraction of pairs ordered like the true anomaly scores.

    Pairs tied in ``true_scores`` are skipped; pairs tied only in ``scores``
    count one half.
    """
    s = np.asarray(scores, dtype=float)
    t = np.asarray(true_scores, dtype=float)
    if s.shape != t.shape or s.ndim != 1:
        raise EvalError("scores and true scores differ in shape")
    if s.size < 2:
        raise EvalError("concordance needs at least two instances")
    i, j = np.triu_indices(s.size, k=1)
    dt = np.sign(t[i] - t[j])
    keep = dt != 0
    if not keep.any():
        raise EvalError("true scores are all equal; concordance undefined")
    ds = np.sign(s[i] - s[j])[keep]
    dt = dt[keep]
    agree = np.where(ds == 0, 0.5, (ds == dt).astype(float))
    return float(agree.mean())


@dataclass(frozen=True)
class ExperimentSpec:
    """One configuration of the flip-injection protocol.

    ``dataset`` must carry its scaled response in ``[-1, 1]``; features are
    raw and get standardized per run on the training split. ``flip_scope`` is
    ``"all"`` (flip before splitting) or ``"test"`` (flip recent rows only).
    """

    dataset: Dataset
    name: str = "dataset"
    flip_fraction: float = 0.03
    train_fraction: float = 2.0 / 3.0
    runs: int = 100
    seed: int = 0
    harmonic: HarmonicConfig = field(default_factory=HarmonicConfig)
    knn_k: int = None
    backbone_k: int = None
    balanced: bool = False
    mode: str = "withheld"
    sigma_mode: str = "variance_sq"
    sigma_value: float = None
    flip_scope: str = "all"

    def __post_init__(self):
        if self.dataset.response is None:
            raise EvalError("dataset has no ordinal response")
        if not 0.0 <= self.flip_fraction <= 1.0:
            raise EvalError("flip fraction must lie in [0, 1]")
        if not 0.0 < self.train_fraction < 1.0:
            raise EvalError("train fraction must lie in (0, 1)")
        if self.runs < 1:
            raise EvalError("runs must be at least 1")
        if self.flip_scope not in ("all", "test"):
            raise EvalError(f"unknown flip scope {self.flip_scope!r}")

    def describe(self):
        d = {
            "name": self.name,
            "rows": self.dataset.n_rows,
            "features": list(self.dataset.feature_names),
        }
        for key in ("flip_fraction", "train_fraction", "runs", "seed", "knn_k", "backbone_k",
                    "balanced", "mode", "sigma_mode", "sigma_value", "flip_scope"):
            d[key] = getattr(self, key)
        d["harmonic"] = self.harmonic.to_dict()
        return d


@dataclass
class MetricSummary:
    """Per-run metric values with their mean and sample variance.

    ``values[(method, metric)]`` holds one entry per run; runs where a metric
    is undefined (e.g. no flipped instance landed in the test split) are NaN
    and left out of the aggregates.
    """

    values: dict
    params: dict = field(default_factory=dict)

    def valid(self, method, metric):
        v = np.asarray(self.values[(method, metric)], dtype=float)
        return v[~np.isnan(v)]

    def mean(self, method, metric):
        v = self.valid(method, metric)
        return float(np.mean(v)) if v.size else math.nan

    def variance(self, method, metric):
        v = self.valid(method, metric)
        return float(np.var(v, ddof=1)) if v.size > 1 else 0.0

    def rows(self):
        for method, metric in sorted(self.values):
            yield {
                **self.params,
                "method": method,
                "metric": metric,
                "mean": self.mean(method, metric),
                "variance": self.variance(method, metric),
                "runs": int(self.valid(method, metric).size),
            }


def _split(n, train_fraction, rng):
    n_train = int(round(train_fraction * n))
    if not 0 < n_train < n:
        raise EvalError("split leaves an empty train or test set")
    perm = rng.permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def run_once(spec, run):
    """One run of the protocol; returns ``{(method, metric): value}``."""
    rng = np.random.default_rng(spec.seed + run)
    data = spec.dataset
    n = data.n_rows
    flip_seed = int(rng.integers(2**32))
    train, test = _split(n, spec.train_fraction, rng)
    order = np.concatenate([train, test])
    if spec.flip_scope == "all":
        noisy, record = inject_flips(data, data.response, spec.flip_fraction, flip_seed)
        ds = noisy.take(order, split=train.size)
        flipped = record.flipped_mask(n)[order][train.size:]
        truth = record.true_anomaly_score[order][train.size:]
    else:
        ds = data.take(order, split=train.size)
        recent = Dataset(ds.recent_features, ds.recent_labels)
        noisy_recent, record = inject_flips(recent, ds.response[train.size:], spec.flip_fraction, flip_seed)
        ds = ds.with_labels(np.concatenate([ds.past_labels, noisy_recent.labels]))
        flipped = record.flipped_mask()
        truth = record.true_anomaly_score
    ds = standardize(ds)
    cfg = spec.harmonic
    bb = fit_backbone(ds, cfg, backbone_k=spec.backbone_k, balanced=spec.balanced,
                      sigma_mode=spec.sigma_mode, sigma_value=spec.sigma_value,
                      seed=spec.seed + run)
    scores = {"softhad": score_recent(bb, ds.recent_features, ds.recent_labels, cfg, spec.mode).raw_score}
    knn = KnnModel(bb.centroids, bb.pseudo_target, spec.knn_k or cfg.graph_k, bb.psi, bb.sigma)
    scores["wknn"] = knn_report(knn, ds.recent_features, ds.recent_labels).raw_score
    out = {}
    for method, s in scores.items():
        out[(method, "flip_auc")] = (
            flip_detection_auc(s, flipped) if 0 < flipped.sum() < flipped.size else math.nan
        )
        out[(method, "concordance")] = (
            score_concordance(s, truth) if np.ptp(truth) > 0 else math.nan
        )
    return out


def run_experiment(spec, workers=1, params=None):
    """Repeat :func:`run_once` over ``spec.runs`` seeds and aggregate."""
    runs = range(spec.runs)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda r: run_once(spec, r), runs))
    else:
        results = [run_once(spec, r) for r in runs]
    keys = sorted(results[0])
    values = {key: np.array([res[key] for res in results]) for key in keys}
    return MetricSummary(values, dict(params or {}))


def run_sweep(spec, gamma_values=None, backbone_sizes=None, workers=1):
    """Run the protocol over a grid of regularizer values and backbone sizes."""
    gammas = list(gamma_values) if gamma_values else [spec.harmonic.gamma_g]
    sizes = list(backbone_sizes) if backbone_sizes else [spec.backbone_k]
    summaries = []
    for gamma, size in itertools.product(gammas, sizes):
        sub = replace(spec, harmonic=replace(spec.harmonic, gamma_g=gamma), backbone_k=size)
        params = {"dataset": spec.name, "gamma_g": gamma, "backbone_k": size}
        summaries.append(run_experiment(sub, workers, params))
    return summaries


SUMMARY_FIELDS = ("dataset", "gamma_g", "backbone_k", "method", "metric", "mean", "variance", "runs")


def summary_csv(summaries):
    buf = io.StringIO()
    out = csv.DictWriter(buf, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
    out.writeheader()
    for summary in summaries:
        for row in summary.rows():
            row = dict(row)
            for key in ("mean", "variance"):
                row[key] = repr(row[key])
            row["backbone_k"] = "all" if row.get("backbone_k") is None else row["backbone_k"]
            out.writerow({k: row.get(k, "") for k in SUMMARY_FIELDS})
    return buf.getvalue()


def summary_json(summaries, spec, provenance=None):
    doc = {
        "spec": spec.describe(),
        "summaries": [list(s.rows()) for s in summaries],
        "per_run": [
            {f"{m}/{k}": [None if math.isnan(x) else x for x in v.tolist()] for (m, k), v in sorted(s.values.items())}
            for s in summaries
        ],
    }
    if provenance is not None:
        doc["provenance"] = provenance
    return json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n"


def planted_cluster_scenario(seed, n_per_class=100, cluster_size=5, separation=2.0,
                             cluster_spread=0.05, clearance=0.6):
    """Two Gaussian classes plus a tight cluster of mislabeled points.

    Class +1 is centred at ``(-separation, 0)``, class -1 at
    ``(+separation, 0)``, both with unit covariance. ``cluster_size`` points
    labeled +1 sit inside the -1 class; no class point lies within
    ``clearance`` of the cluster centre, which makes every cluster member's
    nearest neighbours the other members. Returns ``(Dataset, FlipRecord)``
    with the cluster as the flipped set and the class region as the response.
    """
    rng = np.random.default_rng(seed)
    centre = np.array([separation, 0.0])

    def draw(mean, count):
        pts = np.empty((0, 2))
        while pts.shape[0] < count:
            cand = rng.normal(mean, 1.0, size=(count, 2))
            cand = cand[np.linalg.norm(cand - centre, axis=1) >= clearance]
            pts = np.vstack([pts, cand])
        return pts[:count]

    pos = draw([-separation, 0.0], n_per_class)
    neg = draw([separation, 0.0], n_per_class)
    offs = rng.normal(0.0, cluster_spread, size=(cluster_size, 2))
    radius = np.linalg.norm(offs, axis=1, keepdims=True)
    cap = clearance / 4.0
    offs = np.where(radius > cap, offs * cap / np.maximum(radius, 1e-300), offs)
    cluster = centre + offs
    X = np.vstack([pos, neg, cluster])
    labels = np.concatenate([np.ones(n_per_class), -np.ones(n_per_class), np.ones(cluster_size)])
    response = np.concatenate([np.ones(n_per_class), -np.ones(n_per_class), -np.ones(cluster_size)])
    members = np.arange(2 * n_per_class, 2 * n_per_class + cluster_size)
    data = Dataset(X, labels, response=response, feature_names=("x0", "x1"))
    record = FlipRecord(
        flipped_indices=frozenset(members.tolist()),
        original_response=response,
        true_anomaly_score=np.abs(response - labels),
    )
    return data, record


def planted_cluster_comparison(seed, cfg=None, knn_k=3, sigma_mode="variance_sq"):
    """Median anomaly score of the planted cluster under SoftHAD and wk-NN.

    Both work in the raw feature space with uniform feature weights, where
    the cluster construction guarantees its mutual nearest neighbours. SoftHAD
    scores every instance transductively over the full (identity) backbone;
    wk-NN scores every instance leave-one-out with ``knn_k`` neighbours under
    the same metric and bandwidth.
    """
    cfg = cfg or HarmonicConfig()
    data, record = planted_cluster_scenario(seed)
    bb = fit_backbone(data, cfg, sigma_mode=sigma_mode, seed=seed,
                      psi=FeatureWeights.uniform(data.n_features))
    members = np.array(sorted(record.flipped_indices))
    soft = score_backbone(bb, cfg).raw_score[members]
    knn = KnnModel(data.features, data.labels, knn_k, bb.psi, bb.sigma)
    wk = reference_scores(knn).raw_score[members]
    return float(np.median(soft)), float(np.median(wk))
