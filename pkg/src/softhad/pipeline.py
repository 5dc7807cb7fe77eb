"""End-to-end glue: dataset -> feature weights -> bandwidth -> backbone -> scores."""

import numpy as np

from .backbone import backbone_graph, quantize
from .data import wilcoxon_weights
from .graph import DEFAULT_PAIR_SAMPLE, choose_sigma
from .harmonic import score_recent


def fit_backbone(data, cfg, backbone_k=None, balanced=False, sigma_mode="variance_sq",
                 sigma_value=None, pair_sample=DEFAULT_PAIR_SAMPLE, seed=0, psi=None):
    """Build the backbone graph over the past instances of ``data``.

    ``backbone_k=None`` keeps every pooled past instance as its own centroid.
    """
    if psi is None:
        psi = wilcoxon_weights(data)
    sigma = choose_sigma(data, psi, sigma_mode, pair_sample, seed, sigma_value)
    bb = quantize(data, backbone_k, psi, balanced=balanced, seed=seed)
    return backbone_graph(bb, cfg.graph_k, sigma, psi)


def score_dataset(data, cfg, mode="withheld", **backbone_options):
    """Fit on the past rows of ``data`` and score its recent rows.

    Returns ``(report, backbone)``; report node ids are row indices of
    ``data``.
    """
    bb = fit_backbone(data, cfg, **backbone_options)
    report = score_recent(bb, data.recent_features, data.recent_labels, cfg, mode,
                          node_ids=np.arange(data.split, data.n_rows))
    return report, bb
