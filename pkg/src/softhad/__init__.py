"""Conditional anomaly detection with soft harmonic functions on similarity graphs."""

from .backbone import BackboneGraph, attach_recent, backbone_graph, quantize
from .baseline import KnnModel, knn_anomaly_score, knn_soft_label
from .data import (
    Dataset,
    FeatureWeights,
    FlipRecord,
    IngestOptions,
    inject_flips,
    load_bundled,
    load_csv,
    wilcoxon_weights,
)
from .errors import SoftHADError
from .graph import SimilarityGraph, build_knn_graph, choose_sigma, laplacian, weighted_distance_sq
from .harmonic import (
    AnomalyReport,
    HarmonicConfig,
    SoftLabels,
    anomaly_scores,
    apply_scaling,
    closed_form_oracle,
    fit_scaling,
    objective_value,
    score_backbone,
    score_recent,
    solve_soft_harmonic,
)
from .pipeline import fit_backbone, score_dataset

__version__ = "0.1.0"
